#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "msfa/metrics.hpp"
#include "msfa/postprocess.hpp"
#include "msfa/rng.hpp"
#include "msfa/sampler.hpp"
#include "msfa/simgen.hpp"
#include "test_util.hpp"

using namespace msfa;
using testutil::jacobi_eigenvalues;
using testutil::max_abs;
using testutil::random_orthogonal;

namespace {

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Minimal single-study ChainDraws around a list of phi draws.
ChainDraws wrap_phi_draws(std::vector<Matrix> phis) {
  ChainDraws d;
  d.p = static_cast<int>(phis.front().rows());
  d.k_star = static_cast<int>(phis.front().cols());
  d.j_star = {0};
  d.n_s = {4};
  d.lambda.resize(1);
  d.psi.resize(1);
  for (const Matrix& phi : phis) {
    d.lambda[0].push_back(Matrix::Zero(d.p, 0));
    d.psi[0].push_back(Vector::Ones(d.p));
    (void)phi;
  }
  d.phi = std::move(phis);
  return d;
}

}  // namespace

TEST_CASE("estimate_covariances: a single draw is reproduced exactly") {
  Rng rng(71);
  const Matrix phi = random_matrix(4, 2, rng);
  const ChainDraws d = wrap_phi_draws({phi});
  const CovarianceEstimate cov = estimate_covariances(d);
  CHECK(max_abs(cov.sigma_phi - phi * phi.transpose()) < 1e-14);
  CHECK(max_abs(cov.sigma_lambda[0]) == 0.0);
  CHECK(max_abs(Matrix(cov.psi_hat[0].asDiagonal()) - Matrix(Vector::Ones(4).asDiagonal())) ==
        0.0);
}

TEST_CASE("estimate_covariances: three explicit 2x1 draws, hand-summed oracle") {
  Matrix a(2, 1), b(2, 1), c(2, 1);
  a << 1.0, 2.0;
  b << -1.0, 0.5;
  c << 0.0, 3.0;
  const CovarianceEstimate cov = estimate_covariances(wrap_phi_draws({a, b, c}));
  // mean of outer products, element by element
  Matrix want(2, 2);
  want << (1.0 + 1.0 + 0.0) / 3.0, (2.0 - 0.5 + 0.0) / 3.0,
          (2.0 - 0.5 + 0.0) / 3.0, (4.0 + 0.25 + 9.0) / 3.0;
  CHECK(max_abs(cov.sigma_phi - want) < 1e-15);
}

TEST_CASE("estimate_covariances is invariant to per-draw orthogonal rotations") {
  Rng rng(72);
  const Matrix phi0 = random_matrix(6, 3, rng);
  std::vector<Matrix> rotated, raw;
  for (int r = 0; r < 40; ++r) {
    const Matrix draw = phi0 + 0.1 * random_matrix(6, 3, rng);
    raw.push_back(draw);
    rotated.push_back(draw * random_orthogonal(3, rng));
  }
  const Matrix s1 = estimate_covariances(wrap_phi_draws(raw)).sigma_phi;
  const Matrix s2 = estimate_covariances(wrap_phi_draws(rotated)).sigma_phi;
  CHECK(max_abs(s1 - s2) < 1e-10);

  // Pure rotations of a fixed matrix average to its outer product exactly.
  std::vector<Matrix> pure;
  for (int r = 0; r < 30; ++r) pure.push_back(phi0 * random_orthogonal(3, rng));
  const Matrix s3 = estimate_covariances(wrap_phi_draws(pure)).sigma_phi;
  CHECK(max_abs(s3 - phi0 * phi0.transpose()) < 1e-10);
}

TEST_CASE("select_rank: diagonal spectra and the zero matrix") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, 0.5, 0.01;
  const SelectRankResult r = select_rank(d, 0.05);
  CHECK(r.rank == 2);
  CHECK(r.eigenvalues(0) == doctest::Approx(1.0));
  CHECK(r.eigenvalues(2) == doctest::Approx(0.01));
  CHECK(select_rank(Matrix::Zero(4, 4), 0.05).rank == 0);
}

TEST_CASE("select_rank matches an independent Jacobi eigensolver oracle") {
  Rng rng(73);
  const Matrix phi0 = random_matrix(6, 3, rng);
  const Matrix sigma = phi0 * phi0.transpose();
  const SelectRankResult r = select_rank(sigma, 0.05);
  CHECK(r.rank == 3);
  const std::vector<double> oracle = jacobi_eigenvalues(sigma);
  REQUIRE(r.eigenvalues.size() == 6);
  for (int i = 0; i < 6; ++i)
    CHECK(r.eigenvalues(i) == doctest::Approx(oracle[static_cast<size_t>(i)]).epsilon(1e-8));
  // Basis columns reproduce the retained spectrum.
  CHECK(r.basis.cols() == 3);
  const Matrix bt = r.basis.transpose() * sigma * r.basis;
  for (int i = 0; i < 3; ++i) CHECK(bt(i, i) == doctest::Approx(r.eigenvalues(i)).epsilon(1e-8));
}

TEST_CASE("select_rank is invariant to orthogonal conjugation") {
  Rng rng(74);
  const Matrix sigma = testutil::random_psd(5, rng);
  const Matrix q = random_orthogonal(5, rng);
  const SelectRankResult a = select_rank(sigma, 0.05);
  const SelectRankResult b = select_rank(q * sigma * q.transpose(), 0.05);
  CHECK(a.rank == b.rank);
  for (int i = 0; i < 5; ++i)
    CHECK(a.eigenvalues(i) == doctest::Approx(b.eigenvalues(i)).epsilon(1e-8));
}

TEST_CASE("select_rank: asymmetry handling and negative-eigenvalue warning") {
  Matrix slightly = Matrix::Identity(3, 3);
  slightly(0, 1) = 1e-9;  // within tolerance: symmetrized silently
  CHECK_NOTHROW(select_rank(slightly, 0.05));

  Matrix badly = Matrix::Identity(3, 3);
  badly(0, 1) = 1e-3;
  CHECK_THROWS_AS(select_rank(badly, 0.05), InputError);

  Matrix indefinite = Matrix::Zero(2, 2);
  indefinite.diagonal() << 1.0, -0.1;
  const SelectRankResult r = select_rank(indefinite, 0.05);
  CHECK(r.rank == 1);
  CHECK_FALSE(r.warning.empty());
}

TEST_CASE("op_align: identical draws are already aligned") {
  Rng rng(75);
  const Matrix phi0 = random_matrix(5, 2, rng);
  const std::vector<Matrix> draws(10, phi0);
  const OpAlignResult r = op_align(draws, phi0);
  CHECK(max_abs(r.aligned - phi0) < 1e-12);
  for (const Matrix& q : r.rotations)
    CHECK(max_abs(q - Matrix::Identity(2, 2)) < 1e-10);
  CHECK(r.draw_loss.maxCoeff() < 1e-20);
}

TEST_CASE("op_align: single draw aligns to itself") {
  Rng rng(76);
  const Matrix phi0 = random_matrix(4, 2, rng);
  const OpAlignResult r = op_align({phi0}, phi0);
  CHECK(max_abs(r.aligned - phi0) < 1e-12);
}

TEST_CASE("op_align recovers a rotated matrix from one pass") {
  Rng rng(77);
  const Matrix phi0 = random_matrix(8, 3, rng);
  std::vector<Matrix> draws;
  for (int r = 0; r < 50; ++r) draws.push_back(phi0 * random_orthogonal(3, rng));
  const OpAlignResult r = op_align(draws, draws.back(), 1, 1e-6);
  CHECK(max_abs(r.aligned * r.aligned.transpose() - phi0 * phi0.transpose()) < 1e-6);
  CHECK(r.draw_loss.maxCoeff() < 1e-10);
  for (const Matrix& q : r.rotations)
    CHECK(max_abs(q.transpose() * q - Matrix::Identity(3, 3)) < 1e-8);
}

TEST_CASE("op_align objective is non-increasing over outer iterations") {
  Rng rng(78);
  const Matrix phi0 = random_matrix(6, 2, rng);
  std::vector<Matrix> draws;
  for (int r = 0; r < 30; ++r)
    draws.push_back((phi0 + 0.3 * random_matrix(6, 2, rng)) * random_orthogonal(2, rng));
  double prev = std::numeric_limits<double>::infinity();
  for (int iters = 1; iters <= 4; ++iters) {
    const OpAlignResult r = op_align(draws, draws.back(), iters, 0.0);
    const double total = r.draw_loss.sum();
    CHECK(total <= prev + 1e-9);
    prev = total;
  }
}

TEST_CASE("truncate_draws: full rank passes draws through untouched") {
  Rng rng(79);
  std::vector<Matrix> draws;
  for (int r = 0; r < 5; ++r) draws.push_back(random_matrix(4, 2, rng));
  const Matrix basis = Matrix::Identity(4, 2);
  const std::vector<Matrix> out = truncate_draws(draws, basis, 2);
  REQUIRE(out.size() == draws.size());
  for (size_t i = 0; i < out.size(); ++i) CHECK(max_abs(out[i] - draws[i]) == 0.0);
}

TEST_CASE("truncate_draws reduces width to the requested rank") {
  Rng rng(80);
  // Third column nearly null, so rank selection keeps two columns.
  Matrix phi0 = random_matrix(6, 3, rng);
  phi0.col(2) *= 0.01;
  std::vector<Matrix> draws;
  for (int r = 0; r < 8; ++r) draws.push_back(phi0 * random_orthogonal(3, rng));
  const SelectRankResult sel = select_rank(phi0 * phi0.transpose(), 0.05);
  REQUIRE(sel.rank == 2);
  const std::vector<Matrix> out = truncate_draws(draws, sel.basis, 2);
  const Matrix offspan = Matrix::Identity(6, 6) - sel.basis * sel.basis.transpose();
  for (const Matrix& m : out) {
    CHECK(m.rows() == 6);
    CHECK(m.cols() == 2);
    // Every kept column lies in the span of the selected basis.
    CHECK(max_abs(offspan * m) < 1e-12);
  }
  // With identical unrotated draws the kept columns are the dominant ones, so
  // the outer product survives up to the discarded near-null column.
  const std::vector<Matrix> plain(4, phi0);
  const Matrix kept = truncate_draws(plain, sel.basis, 2).front();
  CHECK(max_abs(kept * kept.transpose() - phi0 * phi0.transpose()) < 2e-2);
}

TEST_CASE("fix_column_signs makes each column's largest entry positive, idempotently") {
  Matrix m(3, 2);
  m << -3.0, 0.5, 1.0, -0.2, 2.0, 0.1;
  fix_column_signs(m);
  CHECK(m(0, 0) == 3.0);   // column 1 flipped
  CHECK(m(1, 0) == -1.0);
  CHECK(m(0, 1) == 0.5);   // column 2 untouched
  const Matrix once = m;
  fix_column_signs(m);
  CHECK(max_abs(m - once) == 0.0);
}

TEST_CASE("align_all: no truncation reduces to sign-fixed op_align; J_hat = 0 is empty") {
  Rng rng(81);
  const Matrix phi0 = random_matrix(5, 2, rng);
  std::vector<Matrix> phis;
  for (int r = 0; r < 12; ++r) phis.push_back(phi0 * random_orthogonal(2, rng));
  const ChainDraws draws = wrap_phi_draws(phis);

  RankSelection ranks;
  ranks.K_hat = 2;
  ranks.J_hat = {0};
  ranks.phi_basis = Matrix::Identity(5, 2);
  ranks.lambda_basis = {Matrix::Zero(5, 0)};

  const AlignedLoadings al = align_all(draws, ranks);
  Matrix want = op_align(phis, phis.back()).aligned;
  fix_column_signs(want);
  CHECK(max_abs(al.phi_star - want) < 1e-12);
  REQUIRE(al.lambda_star.size() == 1);
  CHECK(al.lambda_star[0].cols() == 0);
}

TEST_CASE("aligned loadings recover the true shared loadings on synthetic runs") {
  // Three small scenario-1-style replicates; the column-matched absolute
  // correlation between the aligned estimate and the truth must stay high.
  std::vector<double> corrs;
  for (int rep = 1; rep <= 3; ++rep) {
    ScenarioSpec spec = scenario(1, ScenarioScale::Desk);
    spec.seed = 5000 + rep;
    const Truth truth = generate_truth(spec);
    const std::vector<StudyData> data = generate_data(truth, spec);
    SamplerConfig cfg;
    cfg.k_star = 3;
    cfg.j_star = {2};
    cfg.n_iter = 6000;
    cfg.burn_in = 2000;
    cfg.seed = 80 + rep;
    ChainDraws draws = run_chain(data, PriorHyperparams::defaults(spec.S), cfg);
    CovarianceEstimate cov = estimate_covariances(draws);
    const RankSelection ranks = select_ranks(cov, 0.05);
    const AlignedLoadings al = align_all(draws, ranks, 1, 1e-6);
    // Compare on the common width (K_hat can differ from K_true by a column).
    const int k = std::min<int>(3, static_cast<int>(al.phi_star.cols()));
    Matrix est = Matrix::Zero(spec.P, 3), tru = truth.phi;
    est.leftCols(k) = al.phi_star.leftCols(k);
    corrs.push_back(loading_correlation(est, tru).value);
  }
  std::sort(corrs.begin(), corrs.end());
  CHECK(corrs[1] > 0.9);  // median of three
}
