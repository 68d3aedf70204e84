#include <cmath>
#include <vector>

#include "doctest.h"
#include "msfa/model.hpp"
#include "msfa/rng.hpp"
#include "msfa/sampler.hpp"
#include "test_util.hpp"

using namespace msfa;
using testutil::max_abs;
using testutil::mean_of;
using testutil::mean_z;
using testutil::var_of;

namespace {

StudyData make_study(int id, Matrix x, bool center = true) {
  if (center) x.rowwise() -= x.colwise().mean();
  StudyData s;
  s.id = id;
  s.x = std::move(x);
  for (int c = 0; c < s.x.cols(); ++c) s.var_names.push_back("V" + std::to_string(c + 1));
  return s;
}

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

ShrinkageState fixed_shrinkage(int p, int m, double omega, double tau) {
  ShrinkageState s;
  s.omega = Matrix::Constant(p, m, omega);
  s.delta = Vector::Constant(m, 1.0);
  if (m > 0) s.delta(0) = tau;  // tau_k = tau for every k
  s.tau = Vector::Constant(m, tau);
  return s;
}

}  // namespace

TEST_CASE("factor_posterior: scalar normal-normal conjugacy") {
  // P=1, K=1, phi=1, psi=1, x=2 per row: V = (1+1)^-1 = 1/2, mean = V*2 = 1.
  StudyData s = make_study(1, Matrix::Constant(2, 1, 2.0), /*center=*/false);
  Matrix phi(1, 1);
  phi << 1.0;
  const FactorPosterior fp = factor_posterior(s, phi, Matrix::Zero(1, 0), Vector::Ones(1));
  CHECK(fp.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fp.mean(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fp.mean(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("factor_posterior matches the direct-inverse oracle") {
  Rng rng(51);
  StudyData s = make_study(1, random_matrix(6, 2, rng), /*center=*/false);
  const Matrix phi = random_matrix(2, 1, rng);
  const Matrix lam = random_matrix(2, 1, rng);
  Vector psi(2);
  psi << 0.4, 1.3;
  const FactorPosterior fp = factor_posterior(s, phi, lam, psi);

  Matrix a(2, 2);
  a << phi, lam;
  const Matrix v = (Matrix::Identity(2, 2) +
                    a.transpose() * psi.cwiseInverse().asDiagonal() * a)
                       .inverse();
  CHECK(max_abs(fp.cov - v) < 1e-12);
  for (int i = 0; i < 6; ++i) {
    const Vector want = v * a.transpose() * psi.cwiseInverse().asDiagonal() *
                        s.x.row(i).transpose();
    CHECK(max_abs(fp.mean.row(i).transpose() - want) < 1e-12);
  }
}

TEST_CASE("sample_factors: zero loadings recover the standard-normal prior") {
  Rng rng(52);
  StudyData s = make_study(1, random_matrix(4000, 2, rng));
  const FactorScores fs =
      sample_factors(s, Matrix::Zero(2, 1), Matrix::Zero(2, 1), Vector::Ones(2), rng);
  std::vector<double> f, l;
  for (int i = 0; i < fs.f.rows(); ++i) {
    f.push_back(fs.f(i, 0));
    l.push_back(fs.l(i, 0));
  }
  CHECK(std::fabs(mean_z(f, 0.0)) < 4.0);
  CHECK(std::fabs(mean_z(l, 0.0)) < 4.0);
  CHECK(var_of(f) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(var_of(l) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("sample_shared_loadings: zero scores draw from the shrinkage prior") {
  Rng rng(53);
  const int reps = 4000;
  const double omega = 2.0, tau = 3.0;
  std::vector<StudyData> data = {make_study(1, random_matrix(5, 1, rng))};
  std::vector<FactorScores> scores(1);
  scores[0].f = Matrix::Zero(5, 1);
  scores[0].l = Matrix::Zero(5, 0);
  const ShrinkageState shrink = fixed_shrinkage(1, 1, omega, tau);
  std::vector<double> draws;
  for (int r = 0; r < reps; ++r) {
    const Matrix phi = sample_shared_loadings(data, scores, {Matrix::Zero(1, 0)}, shrink,
                                              {Vector::Ones(1)}, rng);
    draws.push_back(phi(0, 0));
  }
  CHECK(std::fabs(mean_z(draws, 0.0)) < 4.0);
  CHECK(var_of(draws) == doctest::Approx(1.0 / (omega * tau)).epsilon(0.1));
}

TEST_CASE("sample_shared_loadings: infinite prior precision pins loadings at zero") {
  Rng rng(54);
  std::vector<StudyData> data = {make_study(1, random_matrix(8, 2, rng))};
  std::vector<FactorScores> scores(1);
  scores[0].f = random_matrix(8, 1, rng);
  scores[0].l = Matrix::Zero(8, 0);
  const ShrinkageState shrink = fixed_shrinkage(2, 1, 1e12, 1e12);
  int tiny = 0;
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) {
    const Matrix phi = sample_shared_loadings(data, scores, {Matrix::Zero(2, 0)}, shrink,
                                              {Vector::Ones(2)}, rng);
    if (max_abs(phi) < 1e-4) ++tiny;
  }
  CHECK(tiny >= 999);
}

TEST_CASE("sample_shared_loadings matches a scalar conjugate oracle across two studies") {
  Rng rng(55);
  const double omega = 1.5, tau = 2.0;
  std::vector<StudyData> data = {make_study(1, random_matrix(7, 1, rng), false),
                                 make_study(2, random_matrix(9, 1, rng), false)};
  data[1].id = 2;
  std::vector<FactorScores> scores(2);
  scores[0].f = random_matrix(7, 1, rng);
  scores[0].l = Matrix::Zero(7, 0);
  scores[1].f = random_matrix(9, 1, rng);
  scores[1].l = Matrix::Zero(9, 0);
  Vector psi1 = Vector::Constant(1, 0.5), psi2 = Vector::Constant(1, 1.4);

  double prec = omega * tau, lin = 0.0;
  const double inv1 = 1.0 / psi1(0), inv2 = 1.0 / psi2(0);
  prec += inv1 * scores[0].f.col(0).squaredNorm() + inv2 * scores[1].f.col(0).squaredNorm();
  lin += inv1 * scores[0].f.col(0).dot(data[0].x.col(0)) +
         inv2 * scores[1].f.col(0).dot(data[1].x.col(0));
  const double want_mean = lin / prec, want_var = 1.0 / prec;

  const ShrinkageState shrink = fixed_shrinkage(1, 1, omega, tau);
  std::vector<double> draws;
  for (int r = 0; r < 20000; ++r) {
    const Matrix phi = sample_shared_loadings(data, scores, {Matrix::Zero(1, 0), Matrix::Zero(1, 0)},
                                              shrink, {psi1, psi2}, rng);
    draws.push_back(phi(0, 0));
  }
  CHECK(std::fabs(mean_z(draws, want_mean)) < 4.0);
  CHECK(var_of(draws) == doctest::Approx(want_var).epsilon(0.06));
}

TEST_CASE("sample_specific_loadings: zero width is a no-op, scalar oracle holds") {
  Rng rng(56);
  StudyData s = make_study(1, random_matrix(6, 1, rng), false);

  SUBCASE("J* = 0") {
    FactorScores fs;
    fs.f = random_matrix(6, 1, rng);
    fs.l = Matrix::Zero(6, 0);
    const ShrinkageState shrink = fixed_shrinkage(1, 0, 1.0, 1.0);
    const Matrix lam = sample_specific_loadings(s, fs, random_matrix(1, 1, rng), shrink,
                                                Vector::Ones(1), rng);
    CHECK(lam.rows() == 1);
    CHECK(lam.cols() == 0);
  }

  SUBCASE("P=1, J*=1 conjugate oracle with a shared-loading residual") {
    const double omega = 2.5, tau = 1.2, psi = 0.8;
    Matrix phi(1, 1);
    phi << 0.7;
    FactorScores fs;
    fs.f = random_matrix(6, 1, rng);
    fs.l = random_matrix(6, 1, rng);
    const Vector resid = s.x.col(0) - fs.f.col(0) * phi(0, 0);
    const double prec = omega * tau + fs.l.col(0).squaredNorm() / psi;
    const double want_mean = (fs.l.col(0).dot(resid) / psi) / prec;
    const ShrinkageState shrink = fixed_shrinkage(1, 1, omega, tau);
    std::vector<double> draws;
    for (int r = 0; r < 20000; ++r)
      draws.push_back(
          sample_specific_loadings(s, fs, phi, shrink, Vector::Constant(1, psi), rng)(0, 0));
    CHECK(std::fabs(mean_z(draws, want_mean)) < 4.0);
    CHECK(var_of(draws) == doctest::Approx(1.0 / prec).epsilon(0.06));
  }
}

TEST_CASE("sample_local_shrinkage: conjugate update") {
  Rng rng(57);

  SUBCASE("zero loading, nu = 3: omega ~ Gamma(2, 1.5), mean 4/3") {
    ShrinkageState shrink = fixed_shrinkage(1, 1, 1.0, 1.0);
    std::vector<double> draws;
    for (int r = 0; r < 100000; ++r) {
      sample_local_shrinkage(Matrix::Zero(1, 1), shrink, 3.0, rng);
      draws.push_back(shrink.omega(0, 0));
    }
    CHECK(std::fabs(mean_z(draws, 4.0 / 3.0)) < 3.0);
    CHECK(var_of(draws) == doctest::Approx(2.0 / (1.5 * 1.5)).epsilon(0.05));
  }

  SUBCASE("huge nu dominates: draws concentrate at the prior mean 1") {
    ShrinkageState shrink = fixed_shrinkage(1, 1, 1.0, 1.0);
    for (int r = 0; r < 200; ++r) {
      sample_local_shrinkage(Matrix::Ones(1, 1), shrink, 1e6, rng);
      CHECK(shrink.omega(0, 0) == doctest::Approx(1.0).epsilon(0.02));
    }
  }
}

TEST_CASE("delta conditional: zero loadings leave the rate at 1") {
  // P=1, m=1, phi=0: shape = a1 + P*m/2 = a1 + 0.5, rate = 1.
  const Vector delta = Vector::Constant(1, 2.0);
  const auto [shape, rate] = detail::delta_conditional_params(Matrix::Zero(1, 1),
                                                              Matrix::Ones(1, 1), delta, 2.1, 3.1,
                                                              0);
  CHECK(shape == doctest::Approx(2.1 + 0.5).epsilon(1e-14));
  CHECK(rate == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("delta conditional matches a symbolic expansion on a P=2, m=2 instance") {
  // Joint density terms involving delta_h: prod_k prod_p
  // N(phi_pk; 0, (omega_pk tau_k)^-1) with tau_k = prod_{l<=k} delta_l gives
  // delta_h | rest ~ Gamma(shape_h, rate_h) with
  //   shape_0 = a1 + P*m/2,  shape_1 = a2 + P*(m-1)/2,
  //   rate_h = 1 + 0.5 * sum_{k>=h} [prod_{l<=k, l!=h} delta_l] * sum_p omega_pk phi_pk^2.
  Matrix phi(2, 2), omega(2, 2);
  phi << 0.3, -1.1, 0.8, 0.4;
  omega << 1.2, 0.7, 2.0, 1.5;
  Vector delta(2);
  delta << 1.9, 2.6;
  const double a1 = 2.1, a2 = 3.1;

  const double w0 = omega(0, 0) * phi(0, 0) * phi(0, 0) + omega(1, 0) * phi(1, 0) * phi(1, 0);
  const double w1 = omega(0, 1) * phi(0, 1) * phi(0, 1) + omega(1, 1) * phi(1, 1) * phi(1, 1);

  {
    const auto [shape, rate] = detail::delta_conditional_params(phi, omega, delta, a1, a2, 0);
    CHECK(shape == doctest::Approx(a1 + 2.0).epsilon(1e-14));          // a1 + P*m/2
    CHECK(rate == doctest::Approx(1.0 + 0.5 * (w0 + delta(1) * w1)).epsilon(1e-14));
  }
  {
    const auto [shape, rate] = detail::delta_conditional_params(phi, omega, delta, a1, a2, 1);
    CHECK(shape == doctest::Approx(a2 + 1.0).epsilon(1e-14));          // a2 + P*(m-1)/2
    CHECK(rate == doctest::Approx(1.0 + 0.5 * delta(0) * w1).epsilon(1e-14));
  }
}

TEST_CASE("sample_delta keeps tau consistent with the delta products") {
  Rng rng(58);
  ShrinkageState shrink = fixed_shrinkage(3, 4, 1.0, 1.0);
  shrink.delta << 2.0, 3.0, 1.5, 0.8;
  shrink.recompute_tau();
  sample_delta(random_matrix(3, 4, rng), shrink, 2.1, 3.1, rng);
  double prod = 1.0;
  for (int k = 0; k < 4; ++k) {
    prod *= shrink.delta(k);
    CHECK(shrink.tau(k) == prod);  // bitwise: same running product
    CHECK(shrink.delta(k) > 0.0);
  }
}

TEST_CASE("sample_noise: conjugate update") {
  Rng rng(59);

  SUBCASE("perfect fit: precision ~ Gamma(a_psi + n/2, b_psi)") {
    // Two rows fitted exactly by phi*f. a=1, b=0.3, n=2 -> Gamma(2, 0.3).
    Matrix phi(1, 1);
    phi << 1.3;
    FactorScores fs;
    fs.f = Matrix::Constant(2, 1, 0.9);
    fs.l = Matrix::Zero(2, 0);
    StudyData s = make_study(1, fs.f * phi.transpose(), false);
    std::vector<double> prec;
    for (int r = 0; r < 50000; ++r)
      prec.push_back(1.0 /
                     sample_noise(s, fs, phi, Matrix::Zero(1, 0), 1.0, 0.3, rng)(0));
    CHECK(std::fabs(mean_z(prec, 2.0 / 0.3)) < 4.0);
    CHECK(var_of(prec) == doctest::Approx(2.0 / 0.09).epsilon(0.06));
  }

  SUBCASE("fixed P=1 instance matches the scalar oracle") {
    const double a = 1.7, b = 0.6;
    Matrix phi(1, 1);
    phi << 0.5;
    FactorScores fs;
    fs.f = Matrix::Zero(4, 1);
    fs.f << 1.0, -0.5, 0.25, 2.0;
    fs.l = Matrix::Zero(4, 0);
    Matrix x(4, 1);
    x << 0.7, 0.1, -0.4, 1.2;
    StudyData s = make_study(1, x, false);
    double rss = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double r = x(i, 0) - phi(0, 0) * fs.f(i, 0);
      rss += r * r;
    }
    const double shape = a + 2.0, rate = b + 0.5 * rss;
    std::vector<double> prec;
    for (int r = 0; r < 50000; ++r)
      prec.push_back(1.0 / sample_noise(s, fs, phi, Matrix::Zero(1, 0), a, b, rng)(0));
    CHECK(std::fabs(mean_z(prec, shape / rate)) < 4.0);
    CHECK(var_of(prec) == doctest::Approx(shape / (rate * rate)).epsilon(0.06));
  }
}

TEST_CASE("run_chain: retained-draw counting, determinism, state invariants") {
  Rng data_rng(60);
  std::vector<StudyData> data = {make_study(1, random_matrix(8, 5, data_rng)),
                                 make_study(2, random_matrix(9, 5, data_rng))};
  const PriorHyperparams prior = PriorHyperparams::defaults(2);

  SamplerConfig cfg;
  cfg.k_star = 2;
  cfg.j_star = {1};
  cfg.seed = 7;

  SUBCASE("n_iter = burn_in + 1 retains exactly one draw") {
    cfg.n_iter = 21;
    cfg.burn_in = 20;
    CHECK(run_chain(data, prior, cfg).draws() == 1);
  }

  SUBCASE("thinning keeps every thin-th post-burn-in sweep") {
    cfg.n_iter = 10;
    cfg.burn_in = 4;
    cfg.thin = 3;
    CHECK(run_chain(data, prior, cfg).draws() == 2);  // sweeps 7 and 10
  }

  SUBCASE("same seed, same draws") {
    cfg.n_iter = 40;
    cfg.burn_in = 10;
    const ChainDraws d1 = run_chain(data, prior, cfg);
    const ChainDraws d2 = run_chain(data, prior, cfg);
    REQUIRE(d1.draws() == d2.draws());
    for (long r = 0; r < d1.draws(); ++r) {
      CHECK(max_abs(d1.phi[static_cast<size_t>(r)] - d2.phi[static_cast<size_t>(r)]) == 0.0);
      CHECK(max_abs(Matrix(d1.psi[0][static_cast<size_t>(r)].asDiagonal()) -
                    Matrix(d2.psi[0][static_cast<size_t>(r)].asDiagonal())) == 0.0);
    }
  }

  SUBCASE("every sweep keeps psi positive and tau equal to the delta products") {
    cfg.n_iter = 60;
    cfg.burn_in = 5;
    int sweeps_seen = 0;
    const SweepObserver obs = [&](const GibbsState& st, long) {
      ++sweeps_seen;
      for (const Vector& psi : st.psi) CHECK(psi.minCoeff() > 0.0);
      auto check_tau = [](const ShrinkageState& sh) {
        double prod = 1.0;
        for (int k = 0; k < sh.delta.size(); ++k) {
          prod *= sh.delta(k);
          CHECK(sh.tau(k) == prod);
        }
      };
      check_tau(st.shrink_phi);
      for (const ShrinkageState& sh : st.shrink_lambda) check_tau(sh);
    };
    run_chain(data, prior, cfg, 0, nullptr, obs);
    CHECK(sweeps_seen == 60);
  }
}

TEST_CASE("prior shrinkage ordering: E[1/tau_k] is non-increasing beyond column 1") {
  // Column-k prior loading variance is E[1/(omega tau_k)]; with a2 > 1 the
  // 1/tau_k factor must shrink (stochastically) as k grows. Checked on the
  // default a1 = 2.1, a2 = 3.1 with 1e5 prior draws.
  Rng rng(61);
  const int m = 5, n = 100000;
  std::vector<std::vector<double>> inv_tau(m);
  for (int r = 0; r < n; ++r) {
    double tau = rng.gamma_rate(2.1, 1.0);
    inv_tau[0].push_back(1.0 / tau);
    for (int k = 1; k < m; ++k) {
      tau *= rng.gamma_rate(3.1, 1.0);
      inv_tau[static_cast<size_t>(k)].push_back(1.0 / tau);
    }
  }
  for (int k = 1; k < m; ++k) {
    const double prev = mean_of(inv_tau[static_cast<size_t>(k - 1)]);
    const double cur = mean_of(inv_tau[static_cast<size_t>(k)]);
    const double se = std::sqrt(var_of(inv_tau[static_cast<size_t>(k - 1)]) / n) +
                      std::sqrt(var_of(inv_tau[static_cast<size_t>(k)]) / n);
    CHECK(cur <= prev + 3.0 * se);
  }
}

TEST_CASE("getting-it-right smoke: successive-conditional marginals match the prior") {
  // Reduced version of acceptance A1 (which runs 2e5 sweeps and also gates
  // the raw spec moments): bounded indicator functionals only, whose
  // estimators have finite variance on both sides of the comparison.
  const PriorHyperparams prior = PriorHyperparams::defaults(2);
  const int P = 4, K = 1;
  const std::vector<int> J = {1, 1}, N = {6, 6};

  auto indicators = [](const GibbsState& st) {
    return std::vector<double>{st.phi(0, 0) * st.phi(0, 0) < 0.25 ? 1.0 : 0.0,
                               st.psi[0](0) < 0.45 ? 1.0 : 0.0,
                               st.shrink_phi.tau(0) < 1.8 ? 1.0 : 0.0,
                               st.lambda[0](0, 0) * st.lambda[0](0, 0) < 0.25 ? 1.0 : 0.0};
  };

  const int n_prior = 100000, n_gibbs = 30000;
  std::vector<std::vector<double>> prior_stats(4), gibbs_stats(4);
  Rng rng_p(62);
  for (int r = 0; r < n_prior; ++r) {
    const auto v = indicators(prior_state(prior, P, K, J, N, rng_p));
    for (size_t i = 0; i < 4; ++i) prior_stats[i].push_back(v[i]);
  }
  Rng rng_g(63);
  GibbsState st = prior_state(prior, P, K, J, N, rng_g);
  for (int r = 0; r < n_gibbs; ++r) {
    const std::vector<StudyData> data = simulate_given_state(st, rng_g);
    gibbs_sweep(st, data, prior, rng_g);
    const auto v = indicators(st);
    for (size_t i = 0; i < 4; ++i) gibbs_stats[i].push_back(v[i]);
  }
  for (size_t i = 0; i < 4; ++i) {
    const double mp = mean_of(prior_stats[i]), mg = mean_of(gibbs_stats[i]);
    // Batch means on the Gibbs side to absorb autocorrelation.
    const int b = 170, len = n_gibbs / b;
    std::vector<double> bm;
    for (int j = 0; j < b; ++j) {
      double s = 0.0;
      for (int t = j * len; t < (j + 1) * len; ++t) s += gibbs_stats[i][static_cast<size_t>(t)];
      bm.push_back(s / len);
    }
    const double se = std::sqrt(var_of(bm) / b + var_of(prior_stats[i]) / n_prior);
    CHECK(std::fabs(mg - mp) < 4.5 * se);
  }
}

TEST_CASE("prior_state and simulate_given_state: shapes and determinism") {
  const PriorHyperparams prior = PriorHyperparams::defaults(2);
  Rng rng_a(64), rng_b(64);
  const GibbsState a = prior_state(prior, 5, 2, {1, 2}, {7, 9}, rng_a);
  const GibbsState b = prior_state(prior, 5, 2, {1, 2}, {7, 9}, rng_b);
  CHECK(a.phi.rows() == 5);
  CHECK(a.phi.cols() == 2);
  CHECK(a.lambda[1].cols() == 2);
  CHECK(a.scores[0].f.rows() == 7);
  CHECK(a.scores[1].l.rows() == 9);
  CHECK(max_abs(a.phi - b.phi) == 0.0);

  Rng rng_c(65), rng_d(65);
  const std::vector<StudyData> xa = simulate_given_state(a, rng_c);
  const std::vector<StudyData> xb = simulate_given_state(a, rng_d);
  REQUIRE(xa.size() == 2);
  CHECK(xa[0].x.rows() == 7);
  CHECK(xa[1].x.rows() == 9);
  CHECK(xa[0].x.cols() == 5);
  CHECK(max_abs(xa[0].x - xb[0].x) == 0.0);
}

TEST_CASE("hyperparameter validation") {
  PriorHyperparams p = PriorHyperparams::defaults(3);
  CHECK(p.specific.size() == 3);
  CHECK_NOTHROW(p.validate(3));

  SUBCASE("broadcast single specific prior") {
    p.specific.resize(1);
    CHECK_NOTHROW(p.validate(3));
    CHECK(p.specific_for(2).nu == 3.0);
  }
  SUBCASE("bad count") {
    p.specific.resize(2);
    CHECK_THROWS_AS(p.validate(3), InputError);
  }
  SUBCASE("non-positive values rejected") {
    p.a_psi = 0.0;
    CHECK_THROWS_AS(p.validate(3), InputError);
  }
  SUBCASE("a2 <= 1 warns about losing increasing shrinkage") {
    p.a2 = 0.9;
    CHECK_FALSE(p.validate(3).empty());
  }
}
