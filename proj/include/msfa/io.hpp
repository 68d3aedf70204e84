#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msfa/model.hpp"
#include "msfa/sampler.hpp"

namespace msfa {

// File formats.
//
// CSV: comma separated, '.' decimal point, one header row, no row labels.
// Numbers are written with 17 significant digits so write-then-read
// round-trips within 1e-12 (in fact exactly).
//
// Chain binary (chains/chain-<c>.bin), little endian throughout:
//   bytes 0..7   magic "MSFACH01"
//   int64        P, K_star, S, R_planned, store_scores (0/1)
//   int64[S]     J_star
//   int64[S]     n_s
//   then per retained draw, all float64 row-major:
//     Phi (P x K_star), Lambda_1..Lambda_S (P x J_s), psi_1..psi_S (P),
//     and when store_scores: F_s (n_s x K_star), L_s (n_s x J_s) per study.
// Draws are appended as they are produced, so a file interrupted by a
// failure holds every draw completed before it; readers accept fewer than
// R_planned draws and report it.

std::string format_double(double v);  // %.17g

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& col_names);
Matrix read_matrix_csv(const std::filesystem::path& path,
                       std::vector<std::string>* col_names = nullptr);

void write_study_csv(const std::filesystem::path& path, const StudyData& study);
StudyData read_study_csv(const std::filesystem::path& path);  // uncentered, id = 0

struct IngestOptions {
  // Keep only the top fraction of variables by pooled variance (1 = all).
  double filter_variance = 1.0;
};

struct IngestResult {
  std::vector<StudyData> studies;
  std::vector<std::string> warnings;
};

// Reads per-study CSVs, checks that all studies carry the same variable-name
// set (reordering columns to the first study's order with a warning when
// orders differ; differing sets are an InputError naming the difference),
// optionally filters by variance, centers every column (warning on constant
// columns) and validates.
IngestResult ingest(const std::vector<std::string>& paths, const IngestOptions& options = {});

// Streaming writer for the chain binary format.
class ChainWriter {
 public:
  ChainWriter(const std::filesystem::path& path, int p, int k_star, std::vector<int> j_star,
              std::vector<int> n_s, long r_planned, bool store_scores);
  void append(const GibbsState& state);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  int p_, k_star_;
  std::vector<int> j_star_, n_s_;
  bool store_scores_;
};

// Reads a chain file back; appends a note to *warning when the file holds
// fewer draws than its header planned.
ChainDraws read_chain(const std::filesystem::path& path, std::string* warning = nullptr);

// Resolved run configuration. The config file is flat key = value text
// ('#' starts a comment); unknown keys are fatal. See README for the key
// table. CLI flags override file values.
struct RunConfig {
  std::vector<std::string> studies;
  std::string out_dir;
  SamplerConfig sampler;
  double nu = 3.0, a1 = 2.1, a2 = 3.1;
  double nu_s = 3.0, a1_s = 2.1, a2_s = 3.1;
  double a_psi = 1.0, b_psi = 0.3;
  double threshold_eigen = 0.05;
  double threshold_edge = 0.5;
  int op_iters = 1;
  double op_tol = 1e-6;
  double filter_variance = 1.0;

  PriorHyperparams prior(int n_studies) const;
  void validate() const;
};

RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

// Echo of a resolved config, itself parseable by parse_config.
std::string render_config(const RunConfig& config);

}  // namespace msfa
