#ifndef CAST_EXPERIMENT_HPP
#define CAST_EXPERIMENT_HPP

// Synthetic benchmark: sweeps over measurement noise, process noise or outlier
// ratio, fixed-lag windows of several lengths, CSV rows plus a JSON summary.

#include "cast/io.hpp"
#include "cast/relax.hpp"
#include "cast/robust.hpp"
#include "cast/simulate.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace cast {

enum class SweepAxis { MeasurementNoise, ProcessNoise, OutlierRatio };
enum class WeightMode { Unit, Map };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::MeasurementNoise: return "measurement-noise";
    case SweepAxis::ProcessNoise: return "process-noise";
    case SweepAxis::OutlierRatio: return "outlier-ratio";
  }
  return "";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "measurement-noise") return SweepAxis::MeasurementNoise;
  if (s == "process-noise") return SweepAxis::ProcessNoise;
  if (s == "outlier-ratio") return SweepAxis::OutlierRatio;
  throw InvalidArgumentError("unknown sweep axis '" + s + "'");
}

/// Default grids: measurement noise as a fraction of l, process noise as a
/// multiple of the base sigmas, outlier ratios.
inline std::vector<double> default_sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::MeasurementNoise: return {0.01, 0.025, 0.05, 0.075, 0.1};
    case SweepAxis::ProcessNoise: return {1, 2, 5, 10};
    case SweepAxis::OutlierRatio: return {0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  }
  return {};
}

/// A window length, or the unsmoothed variant (ω = κ = 0) over the longest
/// window in the set.
struct HorizonSpec {
  int horizon = 8;
  bool unsmoothed = false;

  std::string label() const { return unsmoothed ? "U" : std::to_string(horizon); }
};

struct ExperimentConfig {
  ScenarioConfig scenario;  // horizon is derived from `horizons`
  NoiseConfig noise;        // base values; the swept quantity overrides one of them
  SweepAxis axis = SweepAxis::MeasurementNoise;
  std::vector<double> values = default_sweep_values(SweepAxis::MeasurementNoise);
  int trials = 50;
  std::vector<HorizonSpec> horizons{{4, false}, {8, false}, {12, false}, {12, true}};
  WeightMode weight_mode = WeightMode::Unit;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  int workers = 1;
  std::optional<double> epsilon;  // pruning tolerance; 3σ when empty
  TimePairPolicy time_pairs = TimePairPolicy::AnchorAndPredecessor;
  SolverOptions solver;
  std::optional<std::string> library_path;

  void validate() const {
    scenario.validate();
    noise.validate();
    if (trials < 1) throw InvalidArgumentError("trials must be >= 1");
    if (workers < 1) throw InvalidArgumentError("workers must be >= 1");
    if (values.empty()) throw InvalidArgumentError("sweep needs at least one value");
    if (horizons.empty()) throw InvalidArgumentError("horizon set is empty");
    for (const auto& h : horizons)
      if (h.horizon < 2) throw InvalidArgumentError("horizons must be >= 2");
    for (double v : values) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgumentError("sweep values must be finite and >= 0");
      if (axis == SweepAxis::OutlierRatio && v > 1.0) throw InvalidArgumentError("outlier ratio above 1");
    }
    if (epsilon && !(*epsilon >= 0.0)) throw InvalidArgumentError("epsilon must be >= 0");
    if (!(lambda >= 0.0)) throw InvalidArgumentError("lambda must be >= 0");
  }

  int scenario_horizon() const {
    int h = 2;
    for (const auto& s : horizons) h = std::max(h, s.horizon);
    return h;
  }

  /// `length` scales the measurement-noise axis.
  NoiseConfig noise_at(double value, double length) const {
    NoiseConfig n = noise;
    switch (axis) {
      case SweepAxis::MeasurementNoise: n.measurement_sigma = value * length; break;
      case SweepAxis::ProcessNoise:
        n.velocity_sigma = value * noise.velocity_sigma;
        n.rotation_rate_sigma = value * noise.rotation_rate_sigma;
        break;
      case SweepAxis::OutlierRatio: n.outlier_ratio = value; break;
    }
    return n;
  }
};

inline Json experiment_to_json(const ExperimentConfig& c) {
  Json horizons = Json::array();
  for (const auto& h : c.horizons) {
    if (h.unsmoothed) {
      horizons.push_back("U");
    } else {
      horizons.push_back(h.horizon);
    }
  }
  Json j{{"scenario",
          {{"characteristic_length", c.scenario.characteristic_length},
           {"initial_speed", c.scenario.initial_speed},
           {"initial_turn_rate", c.scenario.initial_turn_rate}}},
         {"noise",
          {{"measurement_sigma", c.noise.measurement_sigma},
           {"velocity_sigma", c.noise.velocity_sigma},
           {"rotation_rate_sigma", c.noise.rotation_rate_sigma},
           {"outlier_ratio", c.noise.outlier_ratio},
           {"outlier_sigma", c.noise.outlier_sigma}}},
         {"sweep", {{"axis", to_string(c.axis)}, {"values", c.values}}},
         {"trials", c.trials},
         {"horizons", horizons},
         {"weight_mode", c.weight_mode == WeightMode::Unit ? "unit" : "map"},
         {"lambda", c.lambda},
         {"seed", c.seed},
         {"workers", c.workers},
         {"time_pairs", c.time_pairs == TimePairPolicy::All ? "all" : "anchor"},
         {"solver",
          {{"tolerance", c.solver.sdp.tolerance},
           {"max_iterations", c.solver.sdp.max_iterations},
           {"tight_threshold", c.solver.tight_threshold}}}};
  if (c.epsilon) j["epsilon"] = *c.epsilon;
  if (c.library_path) j["library"] = *c.library_path;
  return j;
}

/// Missing keys keep their defaults.
inline ExperimentConfig experiment_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("scenario")) {
      const Json& s = j["scenario"];
      c.scenario.characteristic_length = s.value("characteristic_length", c.scenario.characteristic_length);
      c.scenario.initial_speed = s.value("initial_speed", c.scenario.initial_speed);
      c.scenario.initial_turn_rate = s.value("initial_turn_rate", c.scenario.initial_turn_rate);
    }
    if (j.contains("noise")) {
      const Json& n = j["noise"];
      c.noise.measurement_sigma = n.value("measurement_sigma", c.noise.measurement_sigma);
      c.noise.velocity_sigma = n.value("velocity_sigma", c.noise.velocity_sigma);
      c.noise.rotation_rate_sigma = n.value("rotation_rate_sigma", c.noise.rotation_rate_sigma);
      c.noise.outlier_ratio = n.value("outlier_ratio", c.noise.outlier_ratio);
      c.noise.outlier_sigma = n.value("outlier_sigma", c.noise.outlier_sigma);
    }
    if (j.contains("sweep")) {
      const Json& s = j["sweep"];
      c.axis = sweep_axis_from_string(s.value("axis", std::string(to_string(c.axis))));
      c.values = s.contains("values") ? s["values"].get<std::vector<double>>() : default_sweep_values(c.axis);
    }
    c.trials = j.value("trials", c.trials);
    if (j.contains("horizons")) {
      c.horizons.clear();
      int longest = 0;
      bool want_u = false;
      for (const auto& h : j["horizons"]) {
        if (h.is_string()) {
          if (h.get<std::string>() != "U") throw InvalidArgumentError("horizon must be an integer or \"U\"");
          want_u = true;
        } else {
          c.horizons.push_back({h.get<int>(), false});
          longest = std::max(longest, h.get<int>());
        }
      }
      if (want_u) c.horizons.push_back({longest > 0 ? longest : 12, true});
    }
    const std::string mode = j.value("weight_mode", std::string("unit"));
    if (mode != "unit" && mode != "map") throw InvalidArgumentError("weight_mode must be unit or map");
    c.weight_mode = mode == "unit" ? WeightMode::Unit : WeightMode::Map;
    c.lambda = j.value("lambda", c.lambda);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    if (j.contains("epsilon") && !j["epsilon"].is_null()) c.epsilon = j["epsilon"].get<double>();
    const std::string pairs = j.value("time_pairs", std::string("anchor"));
    if (pairs != "anchor" && pairs != "all") throw InvalidArgumentError("time_pairs must be anchor or all");
    c.time_pairs = pairs == "all" ? TimePairPolicy::All : TimePairPolicy::AnchorAndPredecessor;
    if (j.contains("solver")) {
      const Json& s = j["solver"];
      c.solver.sdp.tolerance = s.value("tolerance", c.solver.sdp.tolerance);
      c.solver.sdp.max_iterations = s.value("max_iterations", c.solver.sdp.max_iterations);
      c.solver.tight_threshold = s.value("tight_threshold", c.solver.tight_threshold);
    }
    if (j.contains("library")) c.library_path = j["library"].get<std::string>();
  } catch (const Json::exception& e) {
    throw InvalidArgumentError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

struct TrialRecord {
  double sweep_value = 0.0;
  std::string horizon;
  int trial = 0;
  int frame = 0;
  double pos_err_pct = std::numeric_limits<double>::quiet_NaN();
  double rot_err_deg = std::numeric_limits<double>::quiet_NaN();
  double shape_err = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::quiet_NaN();
  double rel_gap = std::numeric_limits<double>::quiet_NaN();
  bool tight = false;
  int prune_removed = 0;
  int gnc_iters = 0;
  double time_s = 0.0;
  bool failed = false;
  std::string error;
};

inline std::uint64_t trial_seed(std::uint64_t base, std::size_t point, int trial) {
  // splitmix64 over the combined key
  std::uint64_t z = base ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(point) + 1)) ^
                    (0xbf58476d1ce4e5b9ULL * (static_cast<std::uint64_t>(trial) + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Smoothing weights for a window under the configured weight mode.
inline SmootherWeights window_weights(const ExperimentConfig& cfg, const NoiseConfig& noise, const HorizonSpec& h) {
  if (h.unsmoothed) return SmootherWeights::constant(h.horizon, 0.0, 0.0, cfg.lambda);
  if (cfg.weight_mode == WeightMode::Unit) return SmootherWeights::constant(h.horizon, 1.0, 1.0, cfg.lambda);
  const double sv = std::max(noise.velocity_sigma, 1e-4);
  const double sr = std::max(noise.rotation_rate_sigma, 1e-4);
  return SmootherWeights::constant(h.horizon, 1.0 / (sv * sv), 1.0 / (2.0 * sr * sr), cfg.lambda);
}

inline MeasurementSet window_of(const MeasurementSet& meas, int first, int horizon) {
  MeasurementSet out(horizon, meas.keypoints());
  for (int t = 0; t < horizon; ++t)
    for (int i = 0; i < meas.keypoints(); ++i) {
      out.y(t, i) = meas.y(first + t, i);
      out.set_weight(t, i, meas.weight(first + t, i));
      out.set_valid(t, i, meas.valid(first + t, i));
    }
  return out;
}

/// One scenario, then one record per horizon spec over the trailing window.
/// Failures become flagged records.
inline std::vector<TrialRecord> run_trial(const ExperimentConfig& cfg, const ShapeLibrary& lib,
                                          std::size_t point, int trial) {
  const double value = cfg.values.at(point);
  const NoiseConfig noise = [&] {
    NoiseConfig n = cfg.noise_at(value, lib.length_scale());
    n.rng_seed = trial_seed(cfg.seed, point, trial);
    return n;
  }();
  ScenarioConfig sc = cfg.scenario;
  sc.horizon = cfg.scenario_horizon();
  sc.characteristic_length = lib.length_scale();
  const Scenario scen = generate_scenario(sc, noise, lib);
  const double l = lib.length_scale();
  const double eps = cfg.epsilon ? *cfg.epsilon : 3.0 * noise.measurement_sigma;

  std::vector<TrialRecord> rows;
  for (const auto& h : cfg.horizons) {
    TrialRecord rec;
    rec.sweep_value = value;
    rec.horizon = h.label();
    rec.trial = trial;
    rec.frame = sc.horizon - 1;
    const auto start = std::chrono::steady_clock::now();
    try {
      const int first = sc.horizon - h.horizon;
      MeasurementSet meas = window_of(scen.measurements, first, h.horizon);
      if (cfg.weight_mode == WeightMode::Map) {
        const double sm = std::max(noise.measurement_sigma, 1e-4);
        for (int t = 0; t < meas.horizon(); ++t)
          for (int i = 0; i < meas.keypoints(); ++i) meas.set_weight(t, i, 1.0 / (sm * sm));
      }
      const SmootherWeights weights = window_weights(cfg, noise, h);
      Estimate est;
      if (noise.outlier_ratio > 0.0) {
        const PruningResult pr = prune(meas, lib, eps, cfg.time_pairs);
        rec.prune_removed = pr.report.removed;
        GncSettings gs;
        gs.eps_bar = std::max(eps, 1e-6 * l);
        const GncResult g = gnc_solve(pr.measurements, lib, weights, gs, cfg.solver);
        rec.gnc_iters = g.iterations;
        est = g.estimate;
        if (g.degraded) rec.error = "gnc degraded";
      } else {
        est = solve_certifiable(meas, lib, weights, cfg.solver);
      }
      const Trajectory truth(scen.truth.begin() + first, scen.truth.end());
      const PoseMetrics m = pose_metrics(est.trajectory, truth, est.shape, scen.shape, l);
      rec.pos_err_pct = m.position_error_pct.back();
      rec.rot_err_deg = m.rotation_error_deg.back();
      rec.shape_err = m.shape_error;
      rec.gap = est.certificate.gap;
      rec.rel_gap = est.certificate.rel_gap;
      rec.tight = est.certificate.tight;
      if (!sdp::usable(est.status)) {
        rec.failed = true;
        rec.error = std::string("solver ") + sdp::to_string(est.status);
      }
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
      rec.pos_err_pct = rec.rot_err_deg = rec.shape_err = rec.gap = rec.rel_gap =
          std::numeric_limits<double>::quiet_NaN();
      rec.tight = false;
    }
    rec.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(rec);
  }
  return rows;
}

inline const char* kCsvHeader =
    "sweep_value,horizon,trial,frame,pos_err_pct,rot_err_deg,shape_err,gap,rel_gap,tight,prune_removed,gnc_iters,"
    "time_s";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_row(const TrialRecord& r) {
  std::ostringstream os;
  os << format_number(r.sweep_value) << ',' << r.horizon << ',' << r.trial << ',' << r.frame << ','
     << format_number(r.pos_err_pct) << ',' << format_number(r.rot_err_deg) << ',' << format_number(r.shape_err)
     << ',' << format_number(r.gap) << ',' << format_number(r.rel_gap) << ',' << (r.tight ? 1 : 0) << ','
     << r.prune_removed << ',' << r.gnc_iters << ',' << format_number(r.time_s);
  return os.str();
}

struct Spread {
  double median = std::numeric_limits<double>::quiet_NaN();
  double q25 = std::numeric_limits<double>::quiet_NaN();
  double q75 = std::numeric_limits<double>::quiet_NaN();
};

inline Spread spread(const std::vector<double>& v) {
  if (v.empty()) return {};
  return {median(v), quantile(v, 0.25), quantile(v, 0.75)};
}

inline Json spread_json(const Spread& s) {
  auto num = [](double x) { return std::isnan(x) ? Json(nullptr) : Json(x); };
  return {{"median", num(s.median)}, {"q25", num(s.q25)}, {"q75", num(s.q75)}, {"iqr", num(s.q75 - s.q25)}};
}

/// Per (sweep value, horizon) medians and quartiles over non-failed rows.
inline Json summarize(const ExperimentConfig& cfg, const std::vector<TrialRecord>& rows) {
  Json points = Json::array();
  for (double value : cfg.values) {
    for (const auto& h : cfg.horizons) {
      std::vector<double> pos, rot, shape, gap;
      int n = 0;
      int failures = 0;
      int tight = 0;
      for (const auto& r : rows) {
        if (r.sweep_value != value || r.horizon != h.label()) continue;
        ++n;
        if (r.failed) {
          ++failures;
          continue;
        }
        pos.push_back(r.pos_err_pct);
        rot.push_back(r.rot_err_deg);
        shape.push_back(r.shape_err);
        gap.push_back(r.gap);
        tight += r.tight;
      }
      const int ok = n - failures;
      points.push_back({{"sweep_value", value},
                        {"horizon", h.label()},
                        {"trials", n},
                        {"failures", failures},
                        {"tight_fraction", ok > 0 ? Json(static_cast<double>(tight) / ok) : Json(nullptr)},
                        {"pos_err_pct", spread_json(spread(pos))},
                        {"rot_err_deg", spread_json(spread(rot))},
                        {"shape_err", spread_json(spread(shape))},
                        {"gap", spread_json(spread(gap))}});
    }
  }
  return {{"config", experiment_to_json(cfg)}, {"points", points}};
}

inline ShapeLibrary experiment_library(const ExperimentConfig& cfg) {
  return cfg.library_path ? library_from_json(read_json_file(*cfg.library_path)) : default_library();
}

/// Rows ordered by (sweep point, trial, horizon) whatever the worker count.
inline std::vector<TrialRecord> run_sweep_rows(const ExperimentConfig& cfg, const ShapeLibrary& lib,
                                               bool progress = false) {
  cfg.validate();
  const std::size_t jobs = cfg.values.size() * static_cast<std::size_t>(cfg.trials);
  std::vector<std::vector<TrialRecord>> results(jobs);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t point = job / static_cast<std::size_t>(cfg.trials);
      const int trial = static_cast<int>(job % static_cast<std::size_t>(cfg.trials));
      results[job] = run_trial(cfg, lib, point, trial);
      const std::size_t d = ++done;
      if (progress) std::fprintf(stderr, "\r%zu/%zu trials", d, jobs);
    }
  };
  const int threads = std::min<int>(cfg.workers, static_cast<int>(jobs));
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (progress) std::fprintf(stderr, "\n");
  std::vector<TrialRecord> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

struct SweepOutput {
  std::vector<TrialRecord> rows;
  std::filesystem::path csv;
  std::filesystem::path summary;
};

/// Writes results.csv and summary.json into `out_dir`.
inline SweepOutput run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                             bool progress = false) {
  const ShapeLibrary lib = experiment_library(cfg);
  SweepOutput out;
  out.rows = run_sweep_rows(cfg, lib, progress);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  out.csv = out_dir / "results.csv";
  out.summary = out_dir / "summary.json";
  std::ofstream csv(out.csv);
  if (!csv) throw Error("cannot write " + out.csv.string());
  csv << kCsvHeader << '\n';
  for (const auto& r : out.rows) csv << csv_row(r) << '\n';
  if (!csv) throw Error("write failed for " + out.csv.string());
  write_json_file(out.summary.string(), summarize(cfg, out.rows));
  return out;
}

}  // namespace cast

#endif  // CAST_EXPERIMENT_HPP
