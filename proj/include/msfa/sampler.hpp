#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "msfa/model.hpp"
#include "msfa/rng.hpp"

namespace msfa {

// Gibbs sampler for the multi-study factor model with multiplicative gamma
// shrinkage priors on both loading matrices:
//
//   phi_pk | omega_pk, tau_k ~ N(0, omega_pk^-1 tau_k^-1)
//   omega_pk ~ Gamma(nu/2, nu/2)
//   tau_k = prod_{l<=k} delta_l,  delta_1 ~ Gamma(a1, 1), delta_l ~ Gamma(a2, 1)
//
// replicated with its own hyperparameters for each Lambda_s, and
// psi_sp^-1 ~ Gamma(a_psi, b_psi) on the noise precisions. All gamma
// densities are shape/rate.

// Hyperparameters of the specific-loading prior for one study.
struct SpecificPrior {
  double nu = 3.0;
  double a1 = 2.1;
  double a2 = 3.1;
};

struct PriorHyperparams {
  double nu = 3.0;  // shared-loading prior
  double a1 = 2.1;
  double a2 = 3.1;
  std::vector<SpecificPrior> specific;  // one entry per study
  double a_psi = 1.0;  // noise precision prior
  double b_psi = 0.3;

  // Reference defaults for S studies (same specific prior everywhere).
  static PriorHyperparams defaults(int n_studies);

  // Throws InputError on non-positive values or a specific-prior count that
  // is neither n_studies nor 1 (a single entry broadcasts). Returns warnings,
  // e.g. a2 <= 1 which removes the increasing-shrinkage property.
  std::vector<std::string> validate(int n_studies) const;

  // Specific prior for study s (0-based), honoring broadcast.
  const SpecificPrior& specific_for(int s) const;
};

// Local/global shrinkage state for one loading matrix.
struct ShrinkageState {
  Matrix omega;  // P x m local precisions
  Vector delta;  // m global multipliers
  Vector tau;    // m running products of delta

  void recompute_tau();
  static ShrinkageState prior_mean(int p, int m, double a1, double a2);
};

struct SamplerConfig {
  int k_star = 0;           // truncation of Phi; 0 = min(ceil(P/2), 20)
  std::vector<int> j_star;  // per study; empty = same default, single entry broadcasts
  long n_iter = 15000;
  long burn_in = 5000;
  int thin = 1;
  std::uint64_t seed = 1;
  int n_chains = 1;
  bool store_scores = false;

  int resolved_k(int p) const;
  std::vector<int> resolved_j(int p, int n_studies) const;
  void validate() const;  // burn_in < n_iter, thin >= 1, k_star >= 0, ...
};

// Retained draws of one chain (or of several chains concatenated).
struct ChainDraws {
  int p = 0;
  int k_star = 0;
  std::vector<int> j_star;                // size S
  std::vector<int> n_s;                   // size S
  std::vector<Matrix> phi;                // R draws, each P x K*
  std::vector<std::vector<Matrix>> lambda;  // [S][R], each P x J_s*
  std::vector<std::vector<Vector>> psi;     // [S][R], each P
  std::vector<std::vector<Matrix>> f;       // [S][R] when scores stored, else empty
  std::vector<std::vector<Matrix>> l;       // [S][R] when scores stored, else empty

  long draws() const { return static_cast<long>(phi.size()); }
};

// Appends the draws of `tail` to `head` (dims must agree).
void append_chain(ChainDraws& head, ChainDraws&& tail);

// Full Gibbs state between sweeps.
struct GibbsState {
  Matrix phi;                          // P x K*
  std::vector<Matrix> lambda;          // per study, P x J_s*
  std::vector<Vector> psi;             // per study, P noise variances
  std::vector<FactorScores> scores;    // per study
  ShrinkageState shrink_phi;
  std::vector<ShrinkageState> shrink_lambda;  // per study
};

// ---- individual full conditionals (one Gibbs block each) ----

// Joint conditional of h_is = (f_is, l_is) given loadings and noise:
//   h_is ~ N(V A^T Psi^-1 x_is, V),  V = (I + A^T Psi^-1 A)^-1,  A = [Phi | Lambda_s].
// `mean` holds the n_s conditional means as rows; `cov` is V.
struct FactorPosterior {
  Matrix mean;  // n_s x (K+J)
  Matrix cov;   // (K+J) x (K+J)
};
FactorPosterior factor_posterior(const StudyData& data, const Matrix& phi,
                                 const Matrix& lambda_s, const Vector& psi);
FactorScores sample_factors(const StudyData& data, const Matrix& phi, const Matrix& lambda_s,
                            const Vector& psi, Rng& rng);

// Row-wise conditional of Phi pooling evidence across ALL studies. Row p:
//   phi_p ~ N(V b, V),  V = (D_p + sum_s psi_sp^-1 F_s^T F_s)^-1,
//   b = sum_s psi_sp^-1 F_s^T r_{s,.p},  r_isp = x_isp - lambda_{s,p}^T l_is,
// D_p = diag(omega_p1 tau_1, ..., omega_pK tau_K).
Matrix sample_shared_loadings(const std::vector<StudyData>& data,
                              const std::vector<FactorScores>& scores,
                              const std::vector<Matrix>& lambdas, const ShrinkageState& shrink,
                              const std::vector<Vector>& psis, Rng& rng);

// Single-study analogue for Lambda_s with residual x_isp - phi_p^T f_is.
// J_s* = 0 returns a P x 0 matrix without drawing.
Matrix sample_specific_loadings(const StudyData& data, const FactorScores& scores,
                                const Matrix& phi, const ShrinkageState& shrink,
                                const Vector& psi, Rng& rng);

// omega_pk ~ Gamma((nu+1)/2, (nu + tau_k phi_pk^2)/2), updated in place.
void sample_local_shrinkage(const Matrix& loadings, ShrinkageState& shrink, double nu, Rng& rng);

namespace detail {
// Shape and rate of the delta_h full conditional (h 0-based) given the
// current delta vector:
//   shape = a1 + P m / 2                      for h = 0
//   shape = a2 + P (m - h) / 2                for h >= 1
//   rate  = 1 + (1/2) sum_{k>=h} tau_k^(h) sum_p omega_pk phi_pk^2
// where tau_k^(h) = prod_{t<=k, t!=h} delta_t.
std::pair<double, double> delta_conditional_params(const Matrix& loadings, const Matrix& omega,
                                                   const Vector& delta, double a1, double a2,
                                                   int h);
}  // namespace detail

// Updates delta_1..delta_m sequentially (each conditional uses the freshly
// updated earlier entries), then recomputes tau.
void sample_delta(const Matrix& loadings, ShrinkageState& shrink, double a1, double a2, Rng& rng);

// psi_sp^-1 ~ Gamma(a_psi + n_s/2, b_psi + (1/2) sum_i residual_isp^2);
// returns the variance vector.
Vector sample_noise(const StudyData& data, const FactorScores& scores, const Matrix& phi,
                    const Matrix& lambda_s, double a_psi, double b_psi, Rng& rng);

// ---- full chain ----

// Data-informed initialization: psi from pooled column variances, loadings
// from N(0, 0.1^2), shrinkage at prior means, scores drawn from their
// conditional.
GibbsState init_state(const std::vector<StudyData>& data, const PriorHyperparams& prior, int k,
                      const std::vector<int>& j, Rng& rng);

// One systematic-scan sweep: factors -> shared loadings -> specific loadings
// -> local shrinkage (shared, then each study) -> delta (shared, then each
// study) -> noise.
void gibbs_sweep(GibbsState& state, const std::vector<StudyData>& data,
                 const PriorHyperparams& prior, Rng& rng);

using SweepObserver = std::function<void(const GibbsState&, long iter)>;
using DrawSink = std::function<void(const GibbsState&, long draw_index)>;

// Runs one chain for n_iter sweeps retaining (n_iter - burn_in)/thin draws.
// The chain RNG stream is derived from (config.seed, chain_index), so chains
// are reproducible independently of each other. `sink`, when set, receives
// each retained draw as it is produced (used for streaming persistence; on a
// mid-chain numerical failure everything already sunk survives). `observer`,
// when set, sees the state after every sweep. NumericalError is rethrown
// with the failing iteration number.
ChainDraws run_chain(const std::vector<StudyData>& data, const PriorHyperparams& prior,
                     const SamplerConfig& config, int chain_index = 0,
                     const DrawSink& sink = nullptr, const SweepObserver& observer = nullptr);

// ---- model simulation (prior draws and data redraws) ----
// Used by sampler-correctness checks and tests; these simulate the model
// exactly as the conditionals above assume it.

// Draws every parameter and score from its prior.
GibbsState prior_state(const PriorHyperparams& prior, int p, int k, const std::vector<int>& j,
                       const std::vector<int>& n_s, Rng& rng);

// x_s = F_s Phi^T + L_s Lambda_s^T + E_s with E_s rows ~ N(0, Psi_s),
// conditional on the scores held in `state`. Output is NOT centered; it is a
// draw from the model, not an ingested dataset.
std::vector<StudyData> simulate_given_state(const GibbsState& state, Rng& rng);

}  // namespace msfa
