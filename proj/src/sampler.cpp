#include "msfa/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msfa {

namespace {

// Row-major fill so the draw order is part of the determinism contract.
Matrix normal_matrix(int rows, int cols, double sd, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

// Draw from N(M^-1 b, M^-1) given the precision M = L L^T: mu + L^-T z.
Vector mvn_from_precision(const Eigen::LLT<Matrix>& llt, const Vector& b, Rng& rng) {
  Vector draw = llt.solve(b);
  if (b.size() > 0) {
    Vector z(b.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    draw += llt.matrixU().solve(z);
  }
  return draw;
}

void check_positive(double v, const char* name) {
  if (!(v > 0.0)) throw InputError(std::string(name) + " must be positive");
}

}  // namespace

PriorHyperparams PriorHyperparams::defaults(int n_studies) {
  PriorHyperparams h;
  h.specific.assign(static_cast<size_t>(std::max(n_studies, 0)), SpecificPrior{});
  return h;
}

std::vector<std::string> PriorHyperparams::validate(int n_studies) const {
  check_positive(nu, "nu");
  check_positive(a1, "a1");
  check_positive(a2, "a2");
  check_positive(a_psi, "a_psi");
  check_positive(b_psi, "b_psi");
  if (specific.size() != static_cast<size_t>(n_studies) && specific.size() != 1) {
    throw InputError("specific priors: have " + std::to_string(specific.size()) + ", expected " +
                     std::to_string(n_studies) + " (or 1 to broadcast)");
  }
  std::vector<std::string> warnings;
  if (a2 <= 1.0) {
    warnings.push_back("a2 <= 1: shared-loading shrinkage does not increase with column index");
  }
  for (size_t s = 0; s < specific.size(); ++s) {
    check_positive(specific[s].nu, "nu_s");
    check_positive(specific[s].a1, "a1_s");
    check_positive(specific[s].a2, "a2_s");
    if (specific[s].a2 <= 1.0) {
      warnings.push_back("a2_s <= 1 for study " + std::to_string(s + 1) +
                         ": specific-loading shrinkage does not increase with column index");
    }
  }
  return warnings;
}

const SpecificPrior& PriorHyperparams::specific_for(int s) const {
  if (specific.empty()) throw InputError("no specific priors configured");
  if (specific.size() == 1) return specific.front();
  return specific.at(static_cast<size_t>(s));
}

void ShrinkageState::recompute_tau() {
  tau.resize(delta.size());
  double prod = 1.0;
  for (Eigen::Index k = 0; k < delta.size(); ++k) {
    prod *= delta(k);
    tau(k) = prod;
  }
}

ShrinkageState ShrinkageState::prior_mean(int p, int m, double a1, double a2) {
  ShrinkageState s;
  s.omega = Matrix::Ones(p, m);  // E Gamma(nu/2, nu/2) = 1
  s.delta.resize(m);
  for (int k = 0; k < m; ++k) s.delta(k) = (k == 0) ? a1 : a2;
  s.recompute_tau();
  return s;
}

int SamplerConfig::resolved_k(int p) const {
  if (k_star > 0) return k_star;
  return std::min((p + 1) / 2, 20);
}

std::vector<int> SamplerConfig::resolved_j(int p, int n_studies) const {
  const int def = std::min((p + 1) / 2, 20);
  if (j_star.empty()) return std::vector<int>(static_cast<size_t>(n_studies), def);
  if (j_star.size() == 1) return std::vector<int>(static_cast<size_t>(n_studies), j_star[0]);
  if (j_star.size() != static_cast<size_t>(n_studies)) {
    throw InputError("j_star: have " + std::to_string(j_star.size()) + " entries, expected " +
                     std::to_string(n_studies));
  }
  return j_star;
}

void SamplerConfig::validate() const {
  if (k_star < 0) throw InputError("k_star must be >= 0");
  for (int j : j_star)
    if (j < 0) throw InputError("j_star entries must be >= 0");
  if (n_iter < 1) throw InputError("n_iter must be >= 1");
  if (burn_in < 0 || burn_in >= n_iter) throw InputError("need 0 <= burn_in < n_iter");
  if (thin < 1) throw InputError("thin must be >= 1");
  if (n_chains < 1) throw InputError("n_chains must be >= 1");
}

void append_chain(ChainDraws& head, ChainDraws&& tail) {
  if (head.draws() == 0 && head.p == 0) {
    head = std::move(tail);
    return;
  }
  if (head.p != tail.p || head.k_star != tail.k_star || head.j_star != tail.j_star) {
    throw InputError("cannot pool chains with different dimensions");
  }
  auto move_into = [](auto& dst, auto& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
  };
  move_into(head.phi, tail.phi);
  for (size_t s = 0; s < head.lambda.size(); ++s) {
    move_into(head.lambda[s], tail.lambda[s]);
    move_into(head.psi[s], tail.psi[s]);
    if (!head.f.empty() && !tail.f.empty()) {
      move_into(head.f[s], tail.f[s]);
      move_into(head.l[s], tail.l[s]);
    }
  }
}

FactorPosterior factor_posterior(const StudyData& data, const Matrix& phi, const Matrix& lambda_s,
                                 const Vector& psi) {
  const int p = data.p();
  const int k = phi.size() == 0 ? 0 : static_cast<int>(phi.cols());
  const int j = lambda_s.size() == 0 ? 0 : static_cast<int>(lambda_s.cols());
  const int m = k + j;
  if ((phi.size() > 0 && phi.rows() != p) || (lambda_s.size() > 0 && lambda_s.rows() != p) ||
      psi.size() != p) {
    throw InputError("factor_posterior: dimension mismatch");
  }
  if (!phi.allFinite() || !lambda_s.allFinite() || !psi.allFinite() ||
      (psi.array() <= 0.0).any()) {
    throw NumericalError("factor_posterior: non-finite loadings or invalid noise variances");
  }
  FactorPosterior post;
  post.mean = Matrix::Zero(data.n(), m);
  post.cov = Matrix::Identity(m, m);
  if (m == 0) return post;

  Matrix a(p, m);
  if (k > 0) a.leftCols(k) = phi;
  if (j > 0) a.rightCols(j) = lambda_s;
  const Vector ipsi = psi.cwiseInverse();

  Matrix prec = Matrix::Identity(m, m);
  prec.noalias() += a.transpose() * ipsi.asDiagonal() * a;
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("factor_posterior: precision factorization failed");
  }
  const Matrix b = data.x * ipsi.asDiagonal() * a;  // n x m, rows = A^T Psi^-1 x_i
  post.mean = llt.solve(b.transpose()).transpose();
  post.cov = llt.solve(Matrix::Identity(m, m));
  return post;
}

FactorScores sample_factors(const StudyData& data, const Matrix& phi, const Matrix& lambda_s,
                            const Vector& psi, Rng& rng) {
  const int n = data.n();
  const int k = phi.size() == 0 ? 0 : static_cast<int>(phi.cols());
  const int j = lambda_s.size() == 0 ? 0 : static_cast<int>(lambda_s.cols());
  const int m = k + j;
  FactorScores out;
  out.f = Matrix::Zero(n, k);
  out.l = Matrix::Zero(n, j);
  if (m == 0) return out;

  const int p = data.p();
  Matrix a(p, m);
  if (k > 0) a.leftCols(k) = phi;
  if (j > 0) a.rightCols(j) = lambda_s;
  if (!a.allFinite() || !psi.allFinite() || (psi.array() <= 0.0).any()) {
    throw NumericalError("sample_factors: non-finite loadings or invalid noise variances");
  }
  const Vector ipsi = psi.cwiseInverse();
  Matrix prec = Matrix::Identity(m, m);
  prec.noalias() += a.transpose() * ipsi.asDiagonal() * a;
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("sample_factors: precision factorization failed for study " +
                         std::to_string(data.id));
  }
  const Matrix b = data.x * ipsi.asDiagonal() * a;       // n x m
  Matrix h = llt.solve(b.transpose());                   // m x n, conditional means
  Matrix z(m, n);                                        // one column of normals per subject
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < m; ++c) z(c, i) = rng.normal();
  h += llt.matrixU().solve(z);
  if (k > 0) out.f = h.topRows(k).transpose();
  if (j > 0) out.l = h.bottomRows(j).transpose();
  return out;
}

Matrix sample_shared_loadings(const std::vector<StudyData>& data,
                              const std::vector<FactorScores>& scores,
                              const std::vector<Matrix>& lambdas, const ShrinkageState& shrink,
                              const std::vector<Vector>& psis, Rng& rng) {
  const size_t n_studies = data.size();
  if (scores.size() != n_studies || lambdas.size() != n_studies || psis.size() != n_studies) {
    throw InputError("sample_shared_loadings: per-study argument counts differ");
  }
  const int p = data.front().p();
  const int k = static_cast<int>(shrink.omega.cols());
  if (k == 0) return Matrix::Zero(p, 0);

  // Sufficient statistics per study: G_s = F_s^T F_s and W_s = F_s^T (X_s - L_s Lambda_s^T).
  std::vector<Matrix> g(n_studies), w(n_studies);
  for (size_t s = 0; s < n_studies; ++s) {
    const Matrix& f = scores[s].f;
    if (f.rows() != data[s].n() || f.cols() != k) {
      throw InputError("sample_shared_loadings: score dimensions for study " +
                       std::to_string(data[s].id) + " do not match");
    }
    g[s].noalias() = f.transpose() * f;
    Matrix resid = data[s].x;
    if (lambdas[s].cols() > 0) resid.noalias() -= scores[s].l * lambdas[s].transpose();
    w[s].noalias() = f.transpose() * resid;  // k x p
  }

  Matrix phi(p, k);
  Matrix prec(k, k);
  Vector b(k);
  for (int row = 0; row < p; ++row) {
    prec.setZero();
    prec.diagonal() = (shrink.omega.row(row).transpose().array() * shrink.tau.array()).matrix();
    b.setZero();
    for (size_t s = 0; s < n_studies; ++s) {
      const double iv = 1.0 / psis[s](row);
      prec.noalias() += iv * g[s];
      b.noalias() += iv * w[s].col(row);
    }
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("sample_shared_loadings: singular conditional precision at row " +
                           std::to_string(row + 1));
    }
    phi.row(row) = mvn_from_precision(llt, b, rng).transpose();
  }
  return phi;
}

Matrix sample_specific_loadings(const StudyData& data, const FactorScores& scores,
                                const Matrix& phi, const ShrinkageState& shrink,
                                const Vector& psi, Rng& rng) {
  const int p = data.p();
  const int j = static_cast<int>(shrink.omega.cols());
  if (j == 0) return Matrix::Zero(p, 0);
  const Matrix& l = scores.l;
  if (l.rows() != data.n() || l.cols() != j) {
    throw InputError("sample_specific_loadings: score dimensions for study " +
                     std::to_string(data.id) + " do not match");
  }

  Matrix g(j, j);
  g.noalias() = l.transpose() * l;
  Matrix resid = data.x;
  if (phi.cols() > 0) resid.noalias() -= scores.f * phi.transpose();
  Matrix w(j, p);
  w.noalias() = l.transpose() * resid;

  Matrix lambda(p, j);
  Matrix prec(j, j);
  for (int row = 0; row < p; ++row) {
    const double iv = 1.0 / psi(row);
    prec = iv * g;
    prec.diagonal() += (shrink.omega.row(row).transpose().array() * shrink.tau.array()).matrix();
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("sample_specific_loadings: singular conditional precision at row " +
                           std::to_string(row + 1) + " (study " + std::to_string(data.id) + ")");
    }
    const Vector b = iv * w.col(row);
    lambda.row(row) = mvn_from_precision(llt, b, rng).transpose();
  }
  return lambda;
}

void sample_local_shrinkage(const Matrix& loadings, ShrinkageState& shrink, double nu, Rng& rng) {
  const Eigen::Index p = loadings.rows();
  const Eigen::Index m = loadings.cols();
  if (shrink.omega.rows() != p || shrink.omega.cols() != m || shrink.tau.size() != m) {
    throw InputError("sample_local_shrinkage: shrinkage state does not match loadings");
  }
  for (Eigen::Index row = 0; row < p; ++row) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const double rate = 0.5 * (nu + shrink.tau(k) * loadings(row, k) * loadings(row, k));
      shrink.omega(row, k) = rng.gamma_rate(0.5 * (nu + 1.0), rate);
    }
  }
}

namespace detail {

std::pair<double, double> delta_conditional_params(const Matrix& loadings, const Matrix& omega,
                                                   const Vector& delta, double a1, double a2,
                                                   int h) {
  const Eigen::Index p = loadings.rows();
  const Eigen::Index m = loadings.cols();
  const double shape =
      (h == 0 ? a1 : a2) + 0.5 * static_cast<double>(p) * static_cast<double>(m - h);
  // c_k = sum_p omega_pk phi_pk^2; tau_k^(h) accumulates delta skipping index h.
  double rate = 1.0;
  double prod = 1.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (k != h) prod *= delta(k);
    if (k >= h) {
      const double c_k = (omega.col(k).array() * loadings.col(k).array().square()).sum();
      rate += 0.5 * prod * c_k;
    }
  }
  return {shape, rate};
}

}  // namespace detail

void sample_delta(const Matrix& loadings, ShrinkageState& shrink, double a1, double a2, Rng& rng) {
  const Eigen::Index m = loadings.cols();
  if (shrink.delta.size() != m || shrink.omega.cols() != m) {
    throw InputError("sample_delta: shrinkage state does not match loadings");
  }
  for (Eigen::Index h = 0; h < m; ++h) {
    const auto [shape, rate] = detail::delta_conditional_params(loadings, shrink.omega,
                                                                shrink.delta, a1, a2,
                                                                static_cast<int>(h));
    shrink.delta(h) = rng.gamma_rate(shape, rate);
    if (!(shrink.delta(h) > 0.0) || !std::isfinite(shrink.delta(h))) {
      throw NumericalError("sample_delta: invalid draw at column " + std::to_string(h + 1));
    }
  }
  shrink.recompute_tau();
}

Vector sample_noise(const StudyData& data, const FactorScores& scores, const Matrix& phi,
                    const Matrix& lambda_s, double a_psi, double b_psi, Rng& rng) {
  Matrix resid = data.x;
  if (phi.cols() > 0) resid.noalias() -= scores.f * phi.transpose();
  if (lambda_s.cols() > 0) resid.noalias() -= scores.l * lambda_s.transpose();
  const double shape = a_psi + 0.5 * static_cast<double>(data.n());
  Vector psi(data.p());
  for (int col = 0; col < data.p(); ++col) {
    const double rate = b_psi + 0.5 * resid.col(col).squaredNorm();
    const double precision = rng.gamma_rate(shape, rate);
    if (!(precision > 0.0) || !std::isfinite(precision)) {
      throw NumericalError("sample_noise: invalid precision draw for variable " +
                           std::to_string(col + 1) + " (study " + std::to_string(data.id) + ")");
    }
    psi(col) = 1.0 / precision;
  }
  return psi;
}

GibbsState init_state(const std::vector<StudyData>& data, const PriorHyperparams& prior, int k,
                      const std::vector<int>& j, Rng& rng) {
  const int p = data.front().p();
  const size_t n_studies = data.size();
  if (j.size() != n_studies) throw InputError("init_state: j must have one entry per study");

  // Pooled column variances (columns are centered, so mean squares suffice).
  Vector pooled = Vector::Zero(p);
  long n_total = 0;
  for (const StudyData& s : data) {
    pooled += s.x.colwise().squaredNorm().transpose();
    n_total += s.n();
  }
  pooled /= std::max<long>(n_total - 1, 1);
  pooled = pooled.cwiseMax(1e-8);  // a constant column must not zero the noise

  GibbsState st;
  st.phi = normal_matrix(p, k, 0.1, rng);
  st.shrink_phi = ShrinkageState::prior_mean(p, k, prior.a1, prior.a2);
  st.lambda.resize(n_studies);
  st.psi.resize(n_studies);
  st.scores.resize(n_studies);
  st.shrink_lambda.resize(n_studies);
  for (size_t s = 0; s < n_studies; ++s) {
    const SpecificPrior& sp = prior.specific_for(static_cast<int>(s));
    st.lambda[s] = normal_matrix(p, j[s], 0.1, rng);
    st.shrink_lambda[s] = ShrinkageState::prior_mean(p, j[s], sp.a1, sp.a2);
    st.psi[s] = pooled;
  }
  for (size_t s = 0; s < n_studies; ++s) {
    st.scores[s] = sample_factors(data[s], st.phi, st.lambda[s], st.psi[s], rng);
  }
  return st;
}

void gibbs_sweep(GibbsState& st, const std::vector<StudyData>& data,
                 const PriorHyperparams& prior, Rng& rng) {
  const size_t n_studies = data.size();
  for (size_t s = 0; s < n_studies; ++s) {
    st.scores[s] = sample_factors(data[s], st.phi, st.lambda[s], st.psi[s], rng);
  }
  st.phi = sample_shared_loadings(data, st.scores, st.lambda, st.shrink_phi, st.psi, rng);
  for (size_t s = 0; s < n_studies; ++s) {
    st.lambda[s] =
        sample_specific_loadings(data[s], st.scores[s], st.phi, st.shrink_lambda[s], st.psi[s],
                                 rng);
  }
  sample_local_shrinkage(st.phi, st.shrink_phi, prior.nu, rng);
  for (size_t s = 0; s < n_studies; ++s) {
    sample_local_shrinkage(st.lambda[s], st.shrink_lambda[s],
                           prior.specific_for(static_cast<int>(s)).nu, rng);
  }
  sample_delta(st.phi, st.shrink_phi, prior.a1, prior.a2, rng);
  for (size_t s = 0; s < n_studies; ++s) {
    const SpecificPrior& sp = prior.specific_for(static_cast<int>(s));
    sample_delta(st.lambda[s], st.shrink_lambda[s], sp.a1, sp.a2, rng);
  }
  for (size_t s = 0; s < n_studies; ++s) {
    st.psi[s] = sample_noise(data[s], st.scores[s], st.phi, st.lambda[s], prior.a_psi,
                             prior.b_psi, rng);
  }
}

ChainDraws run_chain(const std::vector<StudyData>& data, const PriorHyperparams& prior,
                     const SamplerConfig& config, int chain_index, const DrawSink& sink,
                     const SweepObserver& observer) {
  validate_studies(data);
  config.validate();
  const int n_studies = static_cast<int>(data.size());
  prior.validate(n_studies);
  const int p = data.front().p();
  const int k = config.resolved_k(p);
  const std::vector<int> j = config.resolved_j(p, n_studies);
  if (k < 1) throw InputError("K* must be >= 1");

  Rng rng(Rng::derive_seed(config.seed, static_cast<std::uint64_t>(chain_index)));
  GibbsState st = init_state(data, prior, k, j, rng);

  ChainDraws out;
  out.p = p;
  out.k_star = k;
  out.j_star = j;
  out.n_s.resize(data.size());
  for (size_t s = 0; s < data.size(); ++s) out.n_s[s] = data[s].n();
  const long r_planned = (config.n_iter - config.burn_in) / config.thin;
  out.phi.reserve(r_planned);
  out.lambda.resize(data.size());
  out.psi.resize(data.size());
  if (config.store_scores) {
    out.f.resize(data.size());
    out.l.resize(data.size());
  }

  long draw_index = 0;
  for (long iter = 1; iter <= config.n_iter; ++iter) {
    try {
      gibbs_sweep(st, data, prior, rng);
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "chain " << chain_index << " iteration " << iter << ": " << e.what();
      throw NumericalError(msg.str());
    }
    if (observer) observer(st, iter);
    if (iter > config.burn_in && (iter - config.burn_in) % config.thin == 0) {
      out.phi.push_back(st.phi);
      for (size_t s = 0; s < data.size(); ++s) {
        out.lambda[s].push_back(st.lambda[s]);
        out.psi[s].push_back(st.psi[s]);
        if (config.store_scores) {
          out.f[s].push_back(st.scores[s].f);
          out.l[s].push_back(st.scores[s].l);
        }
      }
      if (sink) sink(st, draw_index);
      ++draw_index;
    }
  }
  return out;
}

GibbsState prior_state(const PriorHyperparams& prior, int p, int k, const std::vector<int>& j,
                       const std::vector<int>& n_s, Rng& rng) {
  if (j.size() != n_s.size()) throw InputError("prior_state: j and n_s sizes differ");
  const size_t n_studies = j.size();
  prior.validate(static_cast<int>(n_studies));

  auto draw_shrinkage = [&](int m, double nu, double a1, double a2) {
    ShrinkageState s;
    s.omega.resize(p, m);
    for (int row = 0; row < p; ++row)
      for (int c = 0; c < m; ++c) s.omega(row, c) = rng.gamma_rate(0.5 * nu, 0.5 * nu);
    s.delta.resize(m);
    for (int c = 0; c < m; ++c) s.delta(c) = rng.gamma_rate(c == 0 ? a1 : a2, 1.0);
    s.recompute_tau();
    return s;
  };
  auto draw_loadings = [&](const ShrinkageState& s) {
    Matrix m(p, s.delta.size());
    for (int row = 0; row < p; ++row)
      for (Eigen::Index c = 0; c < s.delta.size(); ++c)
        m(row, c) = rng.normal() / std::sqrt(s.omega(row, c) * s.tau(c));
    return m;
  };

  GibbsState st;
  st.shrink_phi = draw_shrinkage(k, prior.nu, prior.a1, prior.a2);
  st.phi = draw_loadings(st.shrink_phi);
  st.lambda.resize(n_studies);
  st.psi.resize(n_studies);
  st.scores.resize(n_studies);
  st.shrink_lambda.resize(n_studies);
  for (size_t s = 0; s < n_studies; ++s) {
    const SpecificPrior& sp = prior.specific_for(static_cast<int>(s));
    st.shrink_lambda[s] = draw_shrinkage(j[s], sp.nu, sp.a1, sp.a2);
    st.lambda[s] = draw_loadings(st.shrink_lambda[s]);
    st.psi[s].resize(p);
    for (int c = 0; c < p; ++c) st.psi[s](c) = 1.0 / rng.gamma_rate(prior.a_psi, prior.b_psi);
    st.scores[s].f = normal_matrix(n_s[s], k, 1.0, rng);
    st.scores[s].l = normal_matrix(n_s[s], j[s], 1.0, rng);
  }
  return st;
}

std::vector<StudyData> simulate_given_state(const GibbsState& state, Rng& rng) {
  std::vector<StudyData> data(state.lambda.size());
  const int p = static_cast<int>(state.phi.rows());
  for (size_t s = 0; s < data.size(); ++s) {
    const int n = static_cast<int>(state.scores[s].f.rows());
    Matrix x = state.scores[s].f * state.phi.transpose();
    if (state.lambda[s].cols() > 0) x.noalias() += state.scores[s].l * state.lambda[s].transpose();
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < p; ++c) x(i, c) += rng.normal() * std::sqrt(state.psi[s](c));
    data[s].id = static_cast<int>(s) + 1;
    data[s].x = std::move(x);
    data[s].var_names.resize(p);
    for (int c = 0; c < p; ++c) data[s].var_names[c] = "V" + std::to_string(c + 1);
  }
  return data;
}

}  // namespace msfa
