#pragma once

#include <cstdint>
#include <vector>

#include "msfa/model.hpp"

namespace msfa {

// Synthetic-truth generation for the simulation study. Loading matrices are
// sparse: a fixed fraction of entries per column is zeroed (random positions
// or a structured block pattern) and the rest are U(-1, 1); noise variances
// are U(0, 1) floored at 0.05.

enum class ZeroPattern { Random, Structured };
enum class ScenarioScale { Full, Desk };

struct ScenarioSpec {
  int S = 0;
  std::vector<int> n;       // per-study sample sizes
  int P = 0;
  int K_true = 0;
  std::vector<int> J_true;  // per study
  double sparsity = 0.8;    // fraction of zeros per column, in [0, 1)
  ZeroPattern zero_pattern = ZeroPattern::Random;
  std::uint64_t seed = 1;
  double lambda_scale = 1.0;  // amplifies Lambda_s nonzeros (scenario 3 uses 2)

  void validate() const;  // throws InputError on inconsistent sizes
};

struct Truth {
  Matrix phi;                   // P x K_true
  std::vector<Matrix> lambdas;  // per study, P x J_true[s]
  std::vector<Vector> psis;     // per study, P
};

// Pure function of spec (incl. spec.seed). Per column, round(sparsity * P)
// entries (capped at P-1 so no column is all zero) are zeroed; Random draws
// the positions, Structured places one contiguous block per column with
// evenly spaced starts. Regenerates (up to a bounded number of attempts)
// until every loading matrix has full column rank, so K_true / J_true are
// the effective ranks.
Truth generate_truth(const ScenarioSpec& spec);

// n_s rows i.i.d. N(0, Sigma_s) with Sigma_s assembled from the truth, then
// centered per column. Deterministic given (truth, spec); uses an RNG stream
// derived from spec.seed, independent of generate_truth's.
std::vector<StudyData> generate_data(const Truth& truth, const ScenarioSpec& spec);

// Scenario presets. All use K_true = 3, J_true = 2 per study, sparsity 0.8.
//   1: S = 3, n_s < P, random zeros.
//   2: S = 4, n_s < P, random zeros.
//   3: S = 3, some n_s > P, structured zeros, Lambda nonzeros amplified x2.
//   4: S = 7, full-scale n = (118, 200, 99, 517, 198, 133, 344).
// Desk scale uses P = 30 and proportionally shrunk n. The returned spec's
// seed may be overwritten for replicates.
ScenarioSpec scenario(int id, ScenarioScale scale);

}  // namespace msfa
