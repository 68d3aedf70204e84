#include "msfa/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msfa/rng.hpp"

namespace msfa {

namespace {

constexpr int kMaxAttempts = 100;
constexpr double kPsiFloor = 0.05;

int zeros_per_column(double sparsity, int p) {
  // Cap at P-1 so no column can be generated all zero.
  const int z = static_cast<int>(std::lround(sparsity * p));
  return std::min(z, p - 1);
}

// One sparse loading matrix: `zeros` zeroed entries per column, the rest
// U(-1, 1) times `scale`. Structured placement uses one contiguous block of
// nonzeros per column with evenly spaced starts (a fixed, recognizable
// pattern); random placement draws the zero positions per column.
Matrix sparse_loadings(int p, int m, int zeros, ZeroPattern pattern, double scale, Rng& rng) {
  Matrix out = Matrix::Zero(p, m);
  const int nonzeros = p - zeros;
  for (int c = 0; c < m; ++c) {
    if (pattern == ZeroPattern::Structured) {
      const int span = p - nonzeros;  // last feasible block start
      const int start = (m <= 1) ? 0 : static_cast<int>(std::lround(
                                           static_cast<double>(span) * c / (m - 1)));
      for (int row = start; row < start + nonzeros; ++row) {
        out(row, c) = scale * rng.uniform(-1.0, 1.0);
      }
    } else {
      // Partial Fisher-Yates: the first `nonzeros` entries of a shuffled
      // index list are the nonzero positions.
      std::vector<int> idx(p);
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = 0; i < nonzeros; ++i) {
        const int pick = i + static_cast<int>(rng.uniform() * (p - i));
        std::swap(idx[i], idx[std::min(pick, p - 1)]);
      }
      for (int i = 0; i < nonzeros; ++i) {
        out(idx[i], c) = scale * rng.uniform(-1.0, 1.0);
      }
    }
  }
  return out;
}

bool full_column_rank(const Matrix& m) {
  if (m.cols() == 0) return true;
  Eigen::JacobiSVD<Matrix> svd(m);
  // Eigenvalues of M M^T above 1e-10 correspond to singular values above 1e-5.
  return (svd.singularValues().array() > 1e-5).count() == m.cols();
}

Matrix generate_rank_checked(int p, int m, int zeros, ZeroPattern pattern, double scale,
                             Rng& rng) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Matrix candidate = sparse_loadings(p, m, zeros, pattern, scale, rng);
    if (full_column_rank(candidate)) return candidate;
  }
  throw NumericalError("generate_truth: could not reach full column rank after " +
                       std::to_string(kMaxAttempts) + " attempts");
}

}  // namespace

void ScenarioSpec::validate() const {
  if (S < 1) throw InputError("scenario: S must be >= 1");
  if (static_cast<int>(n.size()) != S) throw InputError("scenario: n must have S entries");
  for (int v : n)
    if (v < 2) throw InputError("scenario: every n_s must be >= 2");
  if (P < 1) throw InputError("scenario: P must be >= 1");
  if (K_true < 1) throw InputError("scenario: K_true must be >= 1");
  if (static_cast<int>(J_true.size()) != S) throw InputError("scenario: J_true must have S entries");
  for (int v : J_true)
    if (v < 0) throw InputError("scenario: J_true entries must be >= 0");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw InputError("scenario: sparsity must be in [0, 1)");
  if (!(lambda_scale > 0.0)) throw InputError("scenario: lambda_scale must be positive");
}

Truth generate_truth(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int zeros = zeros_per_column(spec.sparsity, spec.P);

  Truth t;
  t.phi = generate_rank_checked(spec.P, spec.K_true, zeros, spec.zero_pattern, 1.0, rng);
  t.lambdas.resize(spec.S);
  t.psis.resize(spec.S);
  for (int s = 0; s < spec.S; ++s) {
    t.lambdas[s] = generate_rank_checked(spec.P, spec.J_true[s], zeros, spec.zero_pattern,
                                         spec.lambda_scale, rng);
    t.psis[s].resize(spec.P);
    for (int c = 0; c < spec.P; ++c) {
      t.psis[s](c) = std::max(rng.uniform(), kPsiFloor);
    }
  }
  return t;
}

std::vector<StudyData> generate_data(const Truth& truth, const ScenarioSpec& spec) {
  spec.validate();
  if (static_cast<int>(truth.lambdas.size()) != spec.S || truth.phi.rows() != spec.P) {
    throw InputError("generate_data: truth does not match spec");
  }
  Rng rng(Rng::derive_seed(spec.seed, 0xDA7A));

  std::vector<StudyData> data(static_cast<size_t>(spec.S));
  for (int s = 0; s < spec.S; ++s) {
    const Matrix sigma = assemble_sigma(truth.phi, truth.lambdas[s], truth.psis[s]);
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("generate_data: truth covariance of study " + std::to_string(s + 1) +
                           " is not positive definite");
    }
    const Matrix chol = llt.matrixL();
    Matrix x(spec.n[s], spec.P);
    Vector z(spec.P);
    for (int i = 0; i < spec.n[s]; ++i) {
      for (int c = 0; c < spec.P; ++c) z(c) = rng.normal();
      x.row(i) = (chol * z).transpose();
    }
    x.rowwise() -= x.colwise().mean();  // center per column

    data[s].id = s + 1;
    data[s].x = std::move(x);
    data[s].var_names.resize(spec.P);
    for (int c = 0; c < spec.P; ++c) data[s].var_names[c] = "V" + std::to_string(c + 1);
  }
  return data;
}

ScenarioSpec scenario(int id, ScenarioScale scale) {
  ScenarioSpec spec;
  spec.K_true = 3;
  spec.sparsity = 0.8;
  spec.seed = 1000 + static_cast<std::uint64_t>(id);
  const bool desk = scale == ScenarioScale::Desk;
  switch (id) {
    case 1:
      spec.S = 3;
      spec.P = desk ? 30 : 60;
      spec.n = desk ? std::vector<int>{29, 29, 29} : std::vector<int>{40, 45, 50};
      break;
    case 2:
      spec.S = 4;
      spec.P = desk ? 30 : 60;
      spec.n = desk ? std::vector<int>{29, 29, 29, 29} : std::vector<int>{35, 40, 45, 50};
      break;
    case 3:
      spec.S = 3;
      spec.P = desk ? 30 : 60;
      spec.n = desk ? std::vector<int>{45, 20, 40} : std::vector<int>{80, 30, 70};
      spec.zero_pattern = ZeroPattern::Structured;
      spec.lambda_scale = 2.0;
      break;
    case 4:
      spec.S = 7;
      spec.P = desk ? 30 : 100;
      // Full-scale sample sizes; desk shrinks them by 5.
      spec.n = std::vector<int>{118, 200, 99, 517, 198, 133, 344};
      if (desk) {
        for (int& v : spec.n) v = std::max(2, static_cast<int>(std::lround(v / 5.0)));
      }
      break;
    default:
      throw InputError("scenario: id must be 1..4");
  }
  spec.J_true.assign(static_cast<size_t>(spec.S), 2);
  return spec;
}

}  // namespace msfa
