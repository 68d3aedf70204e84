#include "msfa/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace msfa {

namespace {

using nlohmann::json;

// Runs all chains (worker threads when more than one) and pools the draws in
// chain order, so results do not depend on scheduling.
ChainDraws run_chains(const std::vector<StudyData>& studies, const PriorHyperparams& prior,
                      const SamplerConfig& config, const std::vector<DrawSink>* sinks) {
  if (sinks && static_cast<int>(sinks->size()) != config.n_chains) {
    throw InputError("run_chains: need one sink entry per chain");
  }
  std::vector<ChainDraws> per_chain(static_cast<size_t>(config.n_chains));
  if (config.n_chains == 1) {
    per_chain[0] = run_chain(studies, prior, config, 0, sinks ? (*sinks)[0] : DrawSink{});
  } else {
    std::vector<std::exception_ptr> errors(static_cast<size_t>(config.n_chains));
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(config.n_chains));
    for (int c = 0; c < config.n_chains; ++c) {
      workers.emplace_back([&, c]() {
        try {
          per_chain[static_cast<size_t>(c)] =
              run_chain(studies, prior, config, c, sinks ? (*sinks)[static_cast<size_t>(c)] : DrawSink{});
        } catch (...) {
          errors[static_cast<size_t>(c)] = std::current_exception();
        }
      });
    }
    for (std::thread& w : workers) w.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);  // first failing chain by index
    }
  }
  ChainDraws pooled;
  for (ChainDraws& c : per_chain) append_chain(pooled, std::move(c));
  return pooled;
}

std::vector<std::string> factor_names(int m) {
  std::vector<std::string> names(static_cast<size_t>(m));
  for (int c = 0; c < m; ++c) names[static_cast<size_t>(c)] = "factor_" + std::to_string(c + 1);
  return names;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw InputError("write failed: " + path.string());
}

Matrix outer_product_sym(const Matrix& m) {
  Matrix s = Matrix::Zero(m.rows(), m.rows());
  if (m.cols() > 0) s.selfadjointView<Eigen::Lower>().rankUpdate(m);
  s = s.selfadjointView<Eigen::Lower>();
  return s;
}

Matrix zero_pad_columns(const Matrix& m, int cols) {
  if (m.cols() >= cols) return m;
  Matrix out = Matrix::Zero(m.rows(), cols);
  out.leftCols(m.cols()) = m;
  return out;
}

}  // namespace

InferenceResult run_inference(const std::vector<StudyData>& studies,
                              const PriorHyperparams& prior, const SamplerConfig& config,
                              const PostprocessOptions& post,
                              const std::vector<DrawSink>* sinks) {
  InferenceResult res;
  res.pooled = run_chains(studies, prior, config, sinks);
  res.chain_draws.assign(static_cast<size_t>(config.n_chains),
                         res.pooled.draws() / config.n_chains);
  res.cov = estimate_covariances(res.pooled);
  res.ranks = select_ranks(res.cov, post.threshold_eigen);
  res.aligned = align_all(res.pooled, res.ranks, post.op_max_iters, post.op_tol);
  return res;
}

CovarianceEstimate pooled_fa_covariance(const std::vector<StudyData>& studies,
                                        const PriorHyperparams& prior,
                                        const SamplerConfig& config) {
  validate_studies(studies);
  long n_total = 0;
  for (const StudyData& s : studies) n_total += s.n();
  StudyData stacked;
  stacked.id = 1;
  stacked.var_names = studies.front().var_names;
  stacked.x.resize(n_total, studies.front().p());
  long at = 0;
  for (const StudyData& s : studies) {
    stacked.x.middleRows(at, s.n()) = s.x;
    at += s.n();
  }
  stacked.x.rowwise() -= stacked.x.colwise().mean();

  PriorHyperparams single = prior;
  single.specific.assign(1, prior.specific_for(0));
  SamplerConfig cfg = config;
  cfg.j_star.assign(1, 0);  // no study-specific factors in the baseline

  const ChainDraws draws = run_chain({stacked}, single, cfg, 0);
  return estimate_covariances(draws);
}

int run_pipeline(const RunConfig& config_in, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  std::string stage = "config";
  try {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = config_in;
    cfg.validate();
    if (cfg.studies.empty()) throw InputError("no study files configured");
    if (cfg.out_dir.empty()) throw InputError("no output directory configured");

    stage = "ingest";
    IngestOptions ingest_options;
    ingest_options.filter_variance = cfg.filter_variance;
    IngestResult ing = ingest(cfg.studies, ingest_options);
    std::vector<std::string> warnings = ing.warnings;
    const int n_studies = static_cast<int>(ing.studies.size());
    const int p = ing.studies.front().p();
    const PriorHyperparams prior = cfg.prior(n_studies);
    for (const std::string& w : prior.validate(n_studies)) warnings.push_back(w);

    // Freeze the resolved truncation levels into the echoed config.
    cfg.sampler.k_star = cfg.sampler.resolved_k(p);
    cfg.sampler.j_star = cfg.sampler.resolved_j(p, n_studies);

    stage = "prepare-output";
    const fs::path root(cfg.out_dir);
    fs::create_directories(root / "chains");
    fs::create_directories(root / "estimates");
    fs::create_directories(root / "metrics");
    fs::create_directories(root / "network");
    write_text(root / "config_resolved.cfg", render_config(cfg));
    for (const std::string& w : warnings) err << "warning: " << w << '\n';

    stage = "sample";
    std::vector<int> n_s(static_cast<size_t>(n_studies));
    for (int s = 0; s < n_studies; ++s) n_s[static_cast<size_t>(s)] = ing.studies[static_cast<size_t>(s)].n();
    const long r_planned = (cfg.sampler.n_iter - cfg.sampler.burn_in) / cfg.sampler.thin;
    std::vector<std::unique_ptr<ChainWriter>> writers;
    std::vector<DrawSink> sinks;
    for (int c = 0; c < cfg.sampler.n_chains; ++c) {
      writers.push_back(std::make_unique<ChainWriter>(
          root / "chains" / ("chain-" + std::to_string(c + 1) + ".bin"), p, cfg.sampler.k_star,
          cfg.sampler.j_star, n_s, r_planned, cfg.sampler.store_scores));
      ChainWriter* w = writers.back().get();
      sinks.push_back([w](const GibbsState& st, long) { w->append(st); });
    }
    ChainDraws pooled = run_chains(ing.studies, prior, cfg.sampler, &sinks);

    stage = "estimate";
    CovarianceEstimate cov = estimate_covariances(pooled);
    const std::vector<std::string>& names = ing.studies.front().var_names;
    write_matrix_csv(root / "estimates" / "sigma_phi.csv", cov.sigma_phi, names);
    for (int s = 0; s < n_studies; ++s) {
      write_matrix_csv(root / "estimates" / ("sigma_lambda_" + std::to_string(s + 1) + ".csv"),
                       cov.sigma_lambda[static_cast<size_t>(s)], names);
    }

    stage = "rank";
    RankSelection ranks = select_ranks(cov, cfg.threshold_eigen);
    for (const std::string& w : ranks.warnings) {
      err << "warning: " << w << '\n';
      warnings.push_back(w);
    }
    {
      json j;
      j["threshold_eigen"] = cfg.threshold_eigen;
      j["K_hat"] = ranks.K_hat;
      j["J_hat"] = ranks.J_hat;
      j["phi_eigenvalues"] = vector_to_json(ranks.phi_eigenvalues);
      json lambda_eigs = json::array();
      for (const Vector& v : ranks.lambda_eigenvalues) lambda_eigs.push_back(vector_to_json(v));
      j["lambda_eigenvalues"] = lambda_eigs;
      j["warnings"] = ranks.warnings;
      write_text(root / "estimates" / "ranks.json", j.dump(2) + "\n");
    }

    stage = "align";
    AlignedLoadings aligned = align_all(pooled, ranks, cfg.op_iters, cfg.op_tol);
    write_matrix_csv(root / "estimates" / "phi_star.csv", aligned.phi_star,
                     factor_names(static_cast<int>(aligned.phi_star.cols())));
    for (int s = 0; s < n_studies; ++s) {
      const Matrix& lam = aligned.lambda_star[static_cast<size_t>(s)];
      write_matrix_csv(root / "estimates" / ("lambda_star_" + std::to_string(s + 1) + ".csv"),
                       lam, factor_names(static_cast<int>(lam.cols())));
    }

    stage = "network";
    const SignedGraph net = extract_network(cov.sigma_phi, cfg.threshold_edge, names);
    {
      std::ostringstream csv;
      csv << "source,target,weight,sign,cluster\n";
      for (const SignedEdge& e : net.edges) {
        csv << net.nodes[static_cast<size_t>(e.p)] << ',' << net.nodes[static_cast<size_t>(e.q)]
            << ',' << format_double(e.weight) << ',' << e.sign << ','
            << net.cluster[static_cast<size_t>(e.p)] << '\n';
      }
      write_text(root / "network" / "edges.csv", csv.str());
    }

    stage = "metrics";
    {
      double loglik = 0.0;
      for (int s = 0; s < n_studies; ++s) {
        loglik += log_likelihood(ing.studies[static_cast<size_t>(s)], aligned.phi_star,
                                 aligned.lambda_star[static_cast<size_t>(s)],
                                 cov.psi_hat[static_cast<size_t>(s)]);
      }
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      json j;
      j["studies"] = n_studies;
      j["P"] = p;
      j["n"] = n_s;
      j["chains"] = cfg.sampler.n_chains;
      j["n_iter"] = cfg.sampler.n_iter;
      j["burn_in"] = cfg.sampler.burn_in;
      j["thin"] = cfg.sampler.thin;
      j["retained_draws"] = pooled.draws();
      j["K_hat"] = ranks.K_hat;
      j["J_hat"] = ranks.J_hat;
      j["log_likelihood_at_estimate"] = loglik;
      j["network_edges"] = net.edges.size();
      j["network_clusters"] = net.n_clusters;
      j["elapsed_seconds"] = elapsed;
      j["warnings"] = warnings;
      write_text(root / "metrics" / "summary.json", j.dump(2) + "\n");

      out << "studies: " << n_studies << "  P: " << p << "  retained draws: " << pooled.draws()
          << '\n';
      out << "K_hat: " << ranks.K_hat << "  J_hat:";
      for (int jh : ranks.J_hat) out << ' ' << jh;
      out << '\n';
      out << "outputs: " << root.string() << '\n';
    }
    return 0;
  } catch (const InputError& e) {
    err << "error in stage " << stage << ": " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "error in stage " << stage << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error in stage " << stage << ": " << e.what() << '\n';
    return 3;
  }
}

void write_simulation(const ScenarioSpec& spec, const Truth& truth,
                      const std::vector<StudyData>& studies,
                      const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "truth");
  for (const StudyData& s : studies) {
    write_study_csv(out_dir / ("study_" + std::to_string(s.id) + ".csv"), s);
  }
  write_matrix_csv(out_dir / "truth" / "phi.csv", truth.phi,
                   factor_names(static_cast<int>(truth.phi.cols())));
  for (size_t s = 0; s < truth.lambdas.size(); ++s) {
    write_matrix_csv(out_dir / "truth" / ("lambda_" + std::to_string(s + 1) + ".csv"),
                     truth.lambdas[s], factor_names(static_cast<int>(truth.lambdas[s].cols())));
    write_matrix_csv(out_dir / "truth" / ("psi_" + std::to_string(s + 1) + ".csv"),
                     truth.psis[s], {"psi"});
  }
  std::ostringstream echo;
  echo << "S = " << spec.S << '\n';
  echo << "P = " << spec.P << '\n';
  echo << "n = ";
  for (size_t i = 0; i < spec.n.size(); ++i) {
    if (i) echo << ", ";
    echo << spec.n[i];
  }
  echo << '\n';
  echo << "K_true = " << spec.K_true << '\n';
  echo << "J_true = ";
  for (size_t i = 0; i < spec.J_true.size(); ++i) {
    if (i) echo << ", ";
    echo << spec.J_true[i];
  }
  echo << '\n';
  echo << "sparsity = " << format_double(spec.sparsity) << '\n';
  echo << "zero_pattern = "
       << (spec.zero_pattern == ZeroPattern::Structured ? "structured" : "random") << '\n';
  echo << "lambda_scale = " << format_double(spec.lambda_scale) << '\n';
  echo << "seed = " << spec.seed << '\n';
  write_text(out_dir / "scenario.txt", echo.str());
}

std::string evaluate_run(const std::filesystem::path& run_dir,
                         const std::filesystem::path& truth_dir) {
  const std::filesystem::path est = run_dir / "estimates";

  json ranks;
  {
    std::ifstream in(est / "ranks.json");
    if (!in) throw InputError("cannot open: " + (est / "ranks.json").string());
    in >> ranks;
  }
  const int k_hat = ranks.at("K_hat").get<int>();
  const std::vector<int> j_hat = ranks.at("J_hat").get<std::vector<int>>();
  const int n_studies = static_cast<int>(j_hat.size());

  const Matrix sigma_phi = read_matrix_csv(est / "sigma_phi.csv");
  const Matrix phi_star = read_matrix_csv(est / "phi_star.csv");
  const Matrix phi_true = read_matrix_csv(truth_dir / "phi.csv");
  if (phi_true.rows() != sigma_phi.rows()) {
    throw InputError("truth has P = " + std::to_string(phi_true.rows()) + ", run has P = " +
                     std::to_string(sigma_phi.rows()));
  }
  const int k_true = static_cast<int>(phi_true.cols());
  const Matrix sigma_phi_true = outer_product_sym(phi_true);

  json out;
  std::vector<std::string> notes;
  try {
    out["rv_sigma_phi"] = rv_coefficient(sigma_phi_true, sigma_phi);
    out["rv_modified_sigma_phi"] = rv_modified(sigma_phi_true, sigma_phi);
  } catch (const InputError& e) {
    out["rv_sigma_phi"] = nullptr;
    out["rv_modified_sigma_phi"] = nullptr;
    notes.push_back(std::string("rv_sigma_phi: ") + e.what());
  }
  {
    const int width = std::max(k_hat, k_true);
    const LoadingCorrelation corr =
        loading_correlation(zero_pad_columns(phi_star, width), zero_pad_columns(phi_true, width));
    out["loading_correlation_phi"] = corr.value;
  }
  out["K_hat"] = k_hat;
  out["K_true"] = k_true;
  out["rank_hit"] = (k_hat == k_true);
  out["J_hat"] = j_hat;

  json rv_lambda = json::array();
  json corr_lambda = json::array();
  json j_true_arr = json::array();
  json j_hits = json::array();
  for (int s = 0; s < n_studies; ++s) {
    const std::string tag = std::to_string(s + 1);
    const Matrix sigma_lam = read_matrix_csv(est / ("sigma_lambda_" + tag + ".csv"));
    const Matrix lam_star = read_matrix_csv(est / ("lambda_star_" + tag + ".csv"));
    const Matrix lam_true = read_matrix_csv(truth_dir / ("lambda_" + tag + ".csv"));
    if (lam_true.rows() != sigma_phi.rows()) {
      throw InputError("truth lambda_" + tag + " has wrong P");
    }
    try {
      rv_lambda.push_back(rv_coefficient(outer_product_sym(lam_true), sigma_lam));
    } catch (const InputError& e) {
      rv_lambda.push_back(nullptr);
      notes.push_back("rv_sigma_lambda_" + tag + ": " + e.what());
    }
    const int width = std::max<int>(static_cast<int>(lam_true.cols()), j_hat[static_cast<size_t>(s)]);
    const LoadingCorrelation corr = loading_correlation(zero_pad_columns(lam_star, width),
                                                        zero_pad_columns(lam_true, width));
    corr_lambda.push_back(corr.value);
    j_true_arr.push_back(lam_true.cols());
    j_hits.push_back(j_hat[static_cast<size_t>(s)] == lam_true.cols());
  }
  out["rv_sigma_lambda"] = rv_lambda;
  out["loading_correlation_lambda"] = corr_lambda;
  out["J_true"] = j_true_arr;
  out["rank_hits_lambda"] = j_hits;
  if (!notes.empty()) out["notes"] = notes;
  return out.dump(2) + "\n";
}

}  // namespace msfa
