// Command line front end: run / simulate / evaluate / network.
//
// Exit codes: 0 success, 2 bad input (files, config, flags), 3 numerical
// failure during sampling or post-processing.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msfa/runner.hpp"

namespace {

int write_or_print(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return 0;
  }
  std::ofstream out(out_path);
  if (!out) {
    std::cerr << "error: cannot open for writing: " << out_path << '\n';
    return 2;
  }
  out << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-study factor analysis: Gibbs sampling, rank selection, alignment"};
  app.require_subcommand(1);

  // --- run ---------------------------------------------------------------
  CLI::App* run = app.add_subcommand("run", "Fit the model and write all artifacts");
  std::string run_config_path;
  std::vector<std::string> run_studies;
  std::string run_out;
  long run_seed = 0;
  int run_chains = 0;
  long run_iters = 0, run_burnin = -1;
  double run_thr_eigen = -1.0, run_thr_edge = -1.0;
  run->add_option("--config", run_config_path, "Config file (key = value lines)")
      ->check(CLI::ExistingFile);
  run->add_option("--study", run_studies, "Study CSV (repeatable; overrides config list)");
  run->add_option("--out", run_out, "Output directory (overrides config)");
  CLI::Option* opt_seed = run->add_option("--seed", run_seed, "Master RNG seed");
  CLI::Option* opt_chains = run->add_option("--chains", run_chains, "Number of chains");
  CLI::Option* opt_iters = run->add_option("--iters", run_iters, "Total sweeps per chain");
  CLI::Option* opt_burnin = run->add_option("--burnin", run_burnin, "Sweeps to discard");
  CLI::Option* opt_thr_eigen =
      run->add_option("--threshold-eigen", run_thr_eigen, "Eigenvalue cutoff for rank selection");
  CLI::Option* opt_thr_edge =
      run->add_option("--threshold-edge", run_thr_edge, "|covariance| cutoff for network edges");

  // --- simulate ------------------------------------------------------------
  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic scenario dataset");
  int sim_scenario = 1;
  std::string sim_scale = "full";
  std::string sim_out;
  long sim_seed = 0;
  sim->add_option("--scenario", sim_scenario, "Scenario id (1-4)")->required();
  sim->add_option("--scale", sim_scale, "Problem size: full or desk")
      ->check(CLI::IsMember({"full", "desk"}));
  sim->add_option("--out", sim_out, "Output directory")->required();
  CLI::Option* opt_sim_seed = sim->add_option("--seed", sim_seed, "Scenario seed");

  // --- evaluate ------------------------------------------------------------
  CLI::App* eval = app.add_subcommand("evaluate", "Score a run's estimates against truth");
  std::string eval_run, eval_truth, eval_out;
  eval->add_option("--run", eval_run, "Run output directory")->required();
  eval->add_option("--truth", eval_truth, "Truth directory (phi.csv, lambda_<s>.csv)")->required();
  eval->add_option("--out", eval_out, "Write metrics JSON here (default: stdout)");

  // --- network -------------------------------------------------------------
  CLI::App* net = app.add_subcommand("network", "Extract a signed graph from a covariance CSV");
  std::string net_input, net_out;
  double net_threshold = 0.5;
  net->add_option("--input", net_input, "Covariance CSV (e.g. estimates/sigma_phi.csv)")
      ->required()
      ->check(CLI::ExistingFile);
  net->add_option("--threshold-edge", net_threshold, "|covariance| cutoff for edges");
  net->add_option("--out", net_out, "Write edges CSV here (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) {
      msfa::RunConfig cfg;
      if (!run_config_path.empty()) cfg = msfa::parse_config(run_config_path);
      if (!run_studies.empty()) cfg.studies = run_studies;
      if (!run_out.empty()) cfg.out_dir = run_out;
      if (*opt_seed) cfg.sampler.seed = static_cast<uint64_t>(run_seed);
      if (*opt_chains) cfg.sampler.n_chains = run_chains;
      if (*opt_iters) cfg.sampler.n_iter = run_iters;
      if (*opt_burnin) cfg.sampler.burn_in = run_burnin;
      if (*opt_thr_eigen) cfg.threshold_eigen = run_thr_eigen;
      if (*opt_thr_edge) cfg.threshold_edge = run_thr_edge;
      return msfa::run_pipeline(cfg, std::cout, std::cerr);
    }

    if (sim->parsed()) {
      const msfa::ScenarioScale scale =
          sim_scale == "desk" ? msfa::ScenarioScale::Desk : msfa::ScenarioScale::Full;
      msfa::ScenarioSpec spec = msfa::scenario(sim_scenario, scale);
      if (*opt_sim_seed) spec.seed = static_cast<uint64_t>(sim_seed);
      const msfa::Truth truth = msfa::generate_truth(spec);
      const std::vector<msfa::StudyData> studies = msfa::generate_data(truth, spec);
      msfa::write_simulation(spec, truth, studies, sim_out);
      std::cout << "wrote scenario " << sim_scenario << " (" << sim_scale << ") to " << sim_out
                << '\n';
      return 0;
    }

    if (eval->parsed()) {
      return write_or_print(msfa::evaluate_run(eval_run, eval_truth), eval_out);
    }

    if (net->parsed()) {
      std::vector<std::string> names;
      const msfa::Matrix sigma = msfa::read_matrix_csv(net_input, &names);
      const msfa::SignedGraph graph = msfa::extract_network(sigma, net_threshold, names);
      std::string csv = "source,target,weight,sign,cluster\n";
      for (const msfa::SignedEdge& e : graph.edges) {
        csv += graph.nodes[static_cast<size_t>(e.p)] + ',' +
               graph.nodes[static_cast<size_t>(e.q)] + ',' + msfa::format_double(e.weight) + ',' +
               std::to_string(e.sign) + ',' + std::to_string(graph.cluster[static_cast<size_t>(e.p)]) +
               '\n';
      }
      return write_or_print(csv, net_out);
    }
  } catch (const msfa::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const msfa::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
