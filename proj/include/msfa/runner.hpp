#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "msfa/io.hpp"
#include "msfa/metrics.hpp"
#include "msfa/postprocess.hpp"
#include "msfa/sampler.hpp"
#include "msfa/simgen.hpp"

namespace msfa {

// Orchestration shared by the CLI and the acceptance harness.

struct PostprocessOptions {
  double threshold_eigen = 0.05;
  int op_max_iters = 1;
  double op_tol = 1e-6;
};

struct InferenceResult {
  ChainDraws pooled;          // all chains concatenated in chain order
  std::vector<long> chain_draws;
  CovarianceEstimate cov;
  RankSelection ranks;
  AlignedLoadings aligned;
};

// Runs config.n_chains chains (in parallel worker threads when more than
// one), pools the draws and post-processes. Deterministic for a fixed seed:
// chains own derived RNG streams and are pooled in index order regardless of
// scheduling. `sinks`, when given, must have one entry per chain (may be
// null) and receives retained draws as they appear.
InferenceResult run_inference(const std::vector<StudyData>& studies,
                              const PriorHyperparams& prior, const SamplerConfig& config,
                              const PostprocessOptions& post,
                              const std::vector<DrawSink>* sinks = nullptr);

// Single-study factor analysis baseline: stacks all rows, re-centers, and
// fits the same model with S = 1 and no specific factors. Returns that run's
// covariance estimate (sigma_phi is the baseline's factor covariance).
CovarianceEstimate pooled_fa_covariance(const std::vector<StudyData>& studies,
                                        const PriorHyperparams& prior,
                                        const SamplerConfig& config);

// Full batch pipeline behind `msfa run`: ingest -> sample -> estimate ->
// rank -> align -> metrics -> network, persisting artifacts under
// config.out_dir as each stage completes (failures keep what finished).
// Returns the process exit code (0 ok, 2 input error, 3 numerical failure)
// and names the failing stage on `err`.
int run_pipeline(const RunConfig& config, std::ostream& out, std::ostream& err);

// Writes datasets and truth for a generated scenario:
//   <out>/study_<s>.csv, <out>/truth/{phi.csv, lambda_<s>.csv, psi_<s>.csv},
//   <out>/scenario.txt (spec echo).
void write_simulation(const ScenarioSpec& spec, const Truth& truth,
                      const std::vector<StudyData>& studies,
                      const std::filesystem::path& out_dir);

// Compares a run's estimates with a truth directory; returns the metrics
// JSON text (also what `msfa evaluate` writes). Loading matrices whose
// column counts disagree are zero-padded to a common width for the loading
// correlation; a P mismatch is fatal.
std::string evaluate_run(const std::filesystem::path& run_dir,
                         const std::filesystem::path& truth_dir);

}  // namespace msfa
