// Command-line front end: benchmark sweeps, single solves, pruning and
// certificate checks.

#include "cast/experiment.hpp"
#include "cast/io.hpp"
#include "cast/qcqp.hpp"
#include "cast/relax.hpp"
#include "cast/robust.hpp"
#include "cast/simulate.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace {

using namespace cast;

ShapeLibrary load_library(const std::string& path) {
  return path.empty() ? default_library() : library_from_json(read_json_file(path));
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::optional<int> trials,
            std::optional<std::uint64_t> seed, std::optional<int> workers) {
  ExperimentConfig cfg = experiment_from_json(read_json_file(config_path));
  if (trials) cfg.trials = *trials;
  if (seed) cfg.seed = *seed;
  if (workers) cfg.workers = *workers;
  cfg.validate();
  const SweepOutput out = run_sweep(cfg, out_dir, true);
  int failures = 0;
  for (const auto& r : out.rows) {
    if (!r.failed) continue;
    ++failures;
    std::cerr << "flagged: value=" << r.sweep_value << " horizon=" << r.horizon << " trial=" << r.trial << ": "
              << r.error << '\n';
  }
  std::cout << "wrote " << out.rows.size() << " rows to " << out.csv.string() << " (" << failures
            << " flagged), summary in " << out.summary.string() << '\n';
  return 0;
}

int cmd_simulate(int horizon, double sigma, double process, double outliers, std::uint64_t seed,
                 const std::string& library, const std::string& out_path) {
  const ShapeLibrary lib = load_library(library);
  ScenarioConfig sc;
  sc.horizon = horizon;
  sc.characteristic_length = lib.length_scale();
  NoiseConfig noise;
  noise.measurement_sigma = sigma;
  noise.velocity_sigma = process;
  noise.rotation_rate_sigma = process;
  noise.outlier_ratio = outliers;
  noise.rng_seed = seed;
  const Scenario scen = generate_scenario(sc, noise, lib);
  Json out = measurements_to_json(scen.measurements);
  Json mask = Json::array();
  for (int t = 0; t < horizon; ++t) {
    Json row = Json::array();
    for (int i = 0; i < lib.num_keypoints(); ++i) row.push_back(static_cast<bool>(scen.is_outlier(t, i)));
    mask.push_back(row);
  }
  out["truth"] = {{"trajectory", trajectory_to_json(scen.truth)},
                  {"shape", std::vector<double>(scen.shape.vector().data(),
                                                scen.shape.vector().data() + scen.shape.size())},
                  {"is_outlier", mask}};
  write_json_file(out_path, out);
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

int cmd_solve(const std::string& meas_path, const std::string& library, double omega, double kappa,
              double lambda, bool robust, std::optional<double> epsilon, const std::string& dump,
              const std::string& out_path) {
  const ShapeLibrary lib = load_library(library);
  MeasurementSet meas = measurements_from_json(read_json_file(meas_path));
  const SmootherWeights weights = SmootherWeights::constant(meas.horizon(), omega, kappa, lambda);
  Json report;
  Estimate est;
  if (robust) {
    const double eps = epsilon.value_or(0.03);
    const PruningResult pr = prune(meas, lib, eps);
    GncSettings gs;
    gs.eps_bar = std::max(eps, 1e-9);
    const GncResult g = gnc_solve(pr.measurements, lib, weights, gs);
    est = g.estimate;
    meas = pr.measurements;
    for (int t = 0; t < meas.horizon(); ++t)
      for (int i = 0; i < meas.keypoints(); ++i) meas.set_weight(t, i, meas.weight(t, i) * g.weights(t, i));
    report["pruning"] = pr.report;
    report["gnc"] = {{"iterations", g.iterations}, {"degraded", g.degraded}};
  } else {
    est = solve_certifiable(meas, lib, weights);
  }
  if (!dump.empty()) {
    // The dump carries the weighted problem that produced the estimate.
    const ShapeOperators ops = precompute_shape_operators(lib, meas, weights);
    const QcqpProblem prob = build_qcqp(meas, lib, ops, weights);
    const LiftedPoint pt = lift(est.trajectory, prob.layout);
    std::ofstream os(dump);
    if (!os) throw Error("cannot write " + dump);
    write_problem_dump(os, prob, &pt);
  }
  report["status"] = sdp::to_string(est.status);
  report["certificate"] = est.certificate;
  report["shape"] = std::vector<double>(est.shape.vector().data(), est.shape.vector().data() + est.shape.size());
  report["trajectory"] = trajectory_to_json(est.trajectory);
  report["sdp_iterations"] = est.sdp_iterations;
  report["solve_seconds"] = est.solve_seconds;
  if (out_path.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_json_file(out_path, report);
  }
  return sdp::usable(est.status) ? 0 : 3;
}

int cmd_certify(const std::string& problem_path) {
  std::ifstream is(problem_path);
  if (!is) throw Error("cannot open " + problem_path);
  const ProblemDump dump = read_problem_dump(is);
  const ProblemCertificate pc = certify_problem(dump.problem, dump.point);
  const Json out{{"status", sdp::to_string(pc.status)},
                 {"certificate", pc.certificate},
                 {"candidate", pc.from_dump_point ? "dump" : "rounded"},
                 {"max_violation", pc.max_violation}};
  std::cout << out.dump(2) << '\n';
  return sdp::usable(pc.status) ? 0 : 3;
}

int cmd_prune(const std::string& meas_path, const std::string& library, double epsilon, bool all_pairs,
              const std::string& out_path) {
  const ShapeLibrary lib = load_library(library);
  const MeasurementSet meas = measurements_from_json(read_json_file(meas_path));
  const PruningResult pr =
      prune(meas, lib, epsilon, all_pairs ? TimePairPolicy::All : TimePairPolicy::AnchorAndPredecessor);
  Json report = pr.report;
  Json keep = Json::array();
  for (int t = 0; t < meas.horizon(); ++t) {
    Json row = Json::array();
    for (int i = 0; i < meas.keypoints(); ++i) row.push_back(static_cast<bool>(pr.keep(t, i)));
    keep.push_back(row);
  }
  report["keep"] = keep;
  if (out_path.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_json_file(out_path, report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certifiable joint shape and pose tracking"};
  app.require_subcommand(1);

  std::string config, out_dir;
  std::optional<int> trials, workers;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run a benchmark sweep");
  run->add_option("--config", config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--trials", trials, "Trials per sweep point")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Base seed");
  run->add_option("--workers", workers, "Concurrent trials")->check(CLI::PositiveNumber);

  int horizon = 8;
  double sigma = 0.01, process = 0.01, outliers = 0.0;
  std::uint64_t sim_seed = 0;
  std::string library, sim_out;
  auto* sim = app.add_subcommand("simulate", "Write a synthetic measurement set");
  sim->add_option("--horizon", horizon, "Frames")->check(CLI::Range(2, 1000));
  sim->add_option("--sigma", sigma, "Measurement noise std (m)");
  sim->add_option("--process", process, "Velocity (m/step) and rotation-rate (rad/step) noise std");
  sim->add_option("--outlier-ratio", outliers, "Fraction of gross outliers")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--seed", sim_seed, "Seed");
  sim->add_option("--library", library, "Shape library JSON (default: bundled)");
  sim->add_option("--out", sim_out, "Output JSON")->required();

  std::string meas_path, dump, solve_out;
  double omega = 1.0, kappa = 1.0, lambda = 0.1;
  bool robust = false;
  std::optional<double> solve_eps;
  auto* solve = app.add_subcommand("solve", "Estimate shape and poses for one measurement set");
  solve->add_option("--measurements", meas_path, "Measurement JSON")->required()->check(CLI::ExistingFile);
  solve->add_option("--library", library, "Shape library JSON (default: bundled)");
  solve->add_option("--omega", omega, "Velocity smoothing weight");
  solve->add_option("--kappa", kappa, "Rotation-rate smoothing weight");
  solve->add_option("--lambda", lambda, "Shape regularizer");
  solve->add_flag("--robust", robust, "Prune and run GNC before the final solve");
  solve->add_option("--epsilon", solve_eps, "Inlier tolerance (m) for --robust, default 0.03");
  solve->add_option("--dump", dump, "Write the QCQP and the estimate for `certify`");
  solve->add_option("--out", solve_out, "Write the report here instead of stdout");

  std::string problem;
  auto* cert = app.add_subcommand("certify", "Re-check a certificate from a problem dump");
  cert->add_option("--problem", problem, "Problem dump")->required()->check(CLI::ExistingFile);

  double epsilon = 0.03;
  bool all_pairs = false;
  std::string prune_out;
  auto* pr = app.add_subcommand("prune", "Compatibility pruning of a measurement set");
  pr->add_option("--measurements", meas_path, "Measurement JSON")->required()->check(CLI::ExistingFile);
  pr->add_option("--library", library, "Shape library JSON (default: bundled)");
  pr->add_option("--epsilon", epsilon, "Inlier tolerance (m)")->check(CLI::NonNegativeNumber);
  pr->add_flag("--all-time-pairs", all_pairs, "Test every frame pair instead of anchor and predecessor");
  pr->add_option("--out", prune_out, "Write the report here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, out_dir, trials, seed, workers);
    if (*sim) return cmd_simulate(horizon, sigma, process, outliers, sim_seed, library, sim_out);
    if (*solve) return cmd_solve(meas_path, library, omega, kappa, lambda, robust, solve_eps, dump, solve_out);
    if (*cert) return cmd_certify(problem);
    if (*pr) return cmd_prune(meas_path, library, epsilon, all_pairs, prune_out);
  } catch (const cast::InconsistencyError& e) {
    std::cerr << "inconsistent certificate: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
