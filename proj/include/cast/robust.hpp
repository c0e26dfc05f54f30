#ifndef CAST_ROBUST_HPP
#define CAST_ROBUST_HPP

// Outlier handling: distance-based compatibility tests between measurements,
// an exact maximum compatible set, and graduated non-convexity with a
// truncated least squares loss around the certifiable solver.

#include "cast/core.hpp"
#include "cast/relax.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace cast {

// ---------------------------------------------------------------------------
// Compatibility bounds

struct PairBounds {
  double b_min = 0.0;
  double b_max = 0.0;
};

/// Per keypoint pair distance range over the shape simplex, with the inlier
/// tolerance ε used by both tests.
class CompatibilityBounds {
 public:
  CompatibilityBounds() = default;
  CompatibilityBounds(int keypoints, double epsilon)
      : n_(keypoints), epsilon_(epsilon), bounds_(static_cast<std::size_t>(keypoints * keypoints)) {
    if (!(epsilon >= 0.0)) throw InvalidArgumentError("epsilon must be >= 0");
  }

  int keypoints() const { return n_; }
  double epsilon() const { return epsilon_; }
  const PairBounds& operator()(int i, int j) const { return bounds_[index(i, j)]; }
  void set(int i, int j, PairBounds b) {
    if (!(b.b_min >= 0.0 && b.b_min <= b.b_max)) throw InvalidArgumentError("need 0 <= b_min <= b_max");
    bounds_[index(i, j)] = b;
    bounds_[index(j, i)] = b;
  }

 private:
  std::size_t index(int i, int j) const {
    require_dims(i >= 0 && j >= 0 && i < n_ && j < n_, "keypoint index");
    return static_cast<std::size_t>(i * n_ + j);
  }
  int n_ = 0;
  double epsilon_ = 0.0;
  std::vector<PairBounds> bounds_;
};

namespace detail {

/// Norm of the point of the affine hull of `pts` closest to the origin, if
/// that point has nonnegative barycentric coordinates.
inline std::optional<double> affine_min_norm(const std::vector<Vec3>& pts) {
  const auto k = static_cast<Eigen::Index>(pts.size());
  // Minimize ‖Σ c_k p_k‖² subject to Σ c_k = 1 through the KKT system.
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + 1, k + 1);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) kkt(a, b) = 2.0 * pts[a].dot(pts[b]);
    kkt(a, k) = 1.0;
    kkt(k, a) = 1.0;
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
  rhs(k) = 1.0;
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(kkt);
  const Eigen::VectorXd sol = cod.solve(rhs);
  const Eigen::VectorXd c = sol.head(k);
  if ((kkt * sol - rhs).norm() > 1e-9 * (1.0 + kkt.norm())) return std::nullopt;
  if ((c.array() < -1e-12).any()) return std::nullopt;
  Vec3 point = Vec3::Zero();
  for (Eigen::Index a = 0; a < k; ++a) point += c(a) * pts[a];
  return point.norm();
}

}  // namespace detail

/// b_max is attained at a vertex of the simplex. b_min is the distance from the
/// origin to the convex hull of the per-model differences; the closest point
/// lies in the hull of at most four of them, so subsets up to size four are
/// enumerated.
inline PairBounds shape_bounds(const ShapeLibrary& lib, int i, int j) {
  if (i == j) throw InvalidArgumentError("shape_bounds needs distinct keypoints");
  const int k = lib.num_models();
  std::vector<Vec3> diff;
  for (int m = 0; m < k; ++m) diff.push_back(lib.keypoint(m, i) - lib.keypoint(m, j));

  PairBounds out;
  out.b_min = std::numeric_limits<double>::infinity();
  for (const auto& d : diff) {
    out.b_max = std::max(out.b_max, d.norm());
    out.b_min = std::min(out.b_min, d.norm());
  }
  std::vector<Vec3> subset;
  std::function<void(int)> visit = [&](int from) {
    if (subset.size() >= 2) {
      if (auto n = detail::affine_min_norm(subset)) out.b_min = std::min(out.b_min, *n);
    }
    if (subset.size() == 4) return;
    for (int m = from; m < k; ++m) {
      subset.push_back(diff[static_cast<std::size_t>(m)]);
      visit(m + 1);
      subset.pop_back();
    }
  };
  visit(0);
  out.b_min = std::clamp(out.b_min, 0.0, out.b_max);
  return out;
}

inline CompatibilityBounds compatibility_bounds(const ShapeLibrary& lib, double epsilon) {
  CompatibilityBounds b(lib.num_keypoints(), epsilon);
  for (int i = 0; i < lib.num_keypoints(); ++i)
    for (int j = i + 1; j < lib.num_keypoints(); ++j) b.set(i, j, shape_bounds(lib, i, j));
  return b;
}

// Absorbs floating-point error so that exact inliers pass at ε = 0.
inline constexpr double kCompatSlack = 1e-9;  // m

inline bool shape_compat(const Vec3& yi, const Vec3& yj, const PairBounds& b, double epsilon) {
  const double dist = (yi - yj).norm();
  return b.b_min - 2.0 * epsilon - kCompatSlack <= dist && dist <= b.b_max + 2.0 * epsilon + kCompatSlack;
}

inline bool time_compat(const Vec3& yli, const Vec3& ylj, const Vec3& ymi, const Vec3& ymj, double epsilon) {
  return std::abs((yli - ylj).norm() - (ymi - ymj).norm()) <= 4.0 * epsilon + kCompatSlack;
}

// ---------------------------------------------------------------------------
// Violation sets

struct ShapeViolation {
  int t, i, j;
  friend bool operator==(const ShapeViolation&, const ShapeViolation&) = default;
};

struct TimeViolation {
  int l, m, i, j;
  friend bool operator==(const TimeViolation&, const TimeViolation&) = default;
};

struct ViolationSets {
  std::vector<ShapeViolation> shape;
  std::vector<TimeViolation> time;
};

enum class TimePairPolicy {
  AnchorAndPredecessor,  // (0, t) and (t-1, t) for every t >= 1
  All,
};

inline std::vector<std::pair<int, int>> time_pairs(int horizon, TimePairPolicy policy) {
  std::vector<std::pair<int, int>> pairs;
  if (policy == TimePairPolicy::All) {
    for (int l = 0; l < horizon; ++l)
      for (int m = l + 1; m < horizon; ++m) pairs.emplace_back(l, m);
    return pairs;
  }
  for (int t = 1; t < horizon; ++t) {
    pairs.emplace_back(0, t);
    if (t - 1 != 0) pairs.emplace_back(t - 1, t);
  }
  return pairs;
}

/// Invalid cells take part in no test.
inline ViolationSets build_violation_sets(const MeasurementSet& meas, const CompatibilityBounds& bounds,
                                          TimePairPolicy policy = TimePairPolicy::AnchorAndPredecessor) {
  require_dims(bounds.keypoints() == meas.keypoints(), "bounds vs measurements");
  const int n = meas.keypoints();
  const double eps = bounds.epsilon();
  ViolationSets out;
  for (int t = 0; t < meas.horizon(); ++t)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (meas.valid(t, i) && meas.valid(t, j) && !shape_compat(meas.y(t, i), meas.y(t, j), bounds(i, j), eps))
          out.shape.push_back({t, i, j});
  for (const auto& [l, m] : time_pairs(meas.horizon(), policy))
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (!(meas.valid(l, i) && meas.valid(l, j) && meas.valid(m, i) && meas.valid(m, j))) continue;
        if (!time_compat(meas.y(l, i), meas.y(l, j), meas.y(m, i), meas.y(m, j), eps))
          out.time.push_back({l, m, i, j});
      }
  return out;
}

inline ViolationSets build_violation_sets(const MeasurementSet& meas, const ShapeLibrary& lib, double epsilon,
                                          TimePairPolicy policy = TimePairPolicy::AnchorAndPredecessor) {
  return build_violation_sets(meas, compatibility_bounds(lib, epsilon), policy);
}

// ---------------------------------------------------------------------------
// Maximum compatible set

using CellMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct CompatibleSet {
  CellMask keep;  // T x N
  int kept = 0;
  long long nodes = 0;
};

namespace detail {

/// Each constraint says "at most size-1 of these cells are kept".
struct Conflict {
  std::array<int, 4> cells{};
  int size = 0;
};

class MaxCompatibleSearch {
 public:
  MaxCompatibleSearch(int cells, std::vector<Conflict> conflicts)
      : n_(cells),
        conflicts_(std::move(conflicts)),
        by_cell_(static_cast<std::size_t>(cells)),
        adjacent_(static_cast<std::size_t>(cells) * static_cast<std::size_t>(cells), 0) {
    for (std::size_t c = 0; c < conflicts_.size(); ++c) {
      const Conflict& con = conflicts_[c];
      for (int k = 0; k < con.size; ++k) by_cell_[at(con.cells, k)].push_back(c);
      if (con.size == 2) {
        adjacent_[pair(con.cells[0], con.cells[1])] = 1;
        adjacent_[pair(con.cells[1], con.cells[0])] = 1;
      }
    }
  }

  /// Lexicographically largest keep vector (in cell order) among those of
  /// maximum cardinality.
  std::vector<std::int8_t> solve(long long& nodes) {
    std::vector<std::int8_t> state(static_cast<std::size_t>(n_), kUndecided);
    best_size_ = greedy();
    // The first pass proves the optimum value branching on the busiest cell.
    // The second finds the preferred optimum by depth-first search in cell
    // order with the keep branch first; its first leaf is the answer.
    target_ = -1;
    search(state, nodes);
    target_ = best_size_;
    found_ = false;
    search(state, nodes);
    return best_;
  }

 private:
  static constexpr std::int8_t kUndecided = -1;

  static std::size_t at(const std::array<int, 4>& cells, int k) {
    return static_cast<std::size_t>(cells[static_cast<std::size_t>(k)]);
  }
  std::size_t pair(int a, int b) const { return static_cast<std::size_t>(a) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(b); }

  int greedy() {
    std::vector<std::int8_t> state(static_cast<std::size_t>(n_), 1);
    std::vector<int> degree(static_cast<std::size_t>(n_), 0);
    for (;;) {
      std::fill(degree.begin(), degree.end(), 0);
      bool any = false;
      for (const auto& c : conflicts_) {
        if (violated(c, state)) {
          any = true;
          for (int k = 0; k < c.size; ++k) ++degree[at(c.cells, k)];
        }
      }
      if (!any) break;
      // Drop the highest-degree cell, latest index on ties.
      int worst = 0;
      for (int i = 0; i < n_; ++i)
        if (degree[static_cast<std::size_t>(i)] >= degree[static_cast<std::size_t>(worst)]) worst = i;
      state[static_cast<std::size_t>(worst)] = 0;
    }
    best_ = state;
    return static_cast<int>(std::count(state.begin(), state.end(), 1));
  }

  static bool violated(const Conflict& c, const std::vector<std::int8_t>& state) {
    for (int k = 0; k < c.size; ++k)
      if (state[at(c.cells, k)] != 1) return false;
    return true;
  }

  /// Forces cells to zero when a conflict has all but one cell kept. Returns
  /// false on a violated conflict. Changes are logged for undo.
  bool propagate(std::vector<std::int8_t>& state, int cell, std::vector<int>& trail) const {
    for (std::size_t ci : by_cell_[static_cast<std::size_t>(cell)]) {
      const Conflict& c = conflicts_[ci];
      int kept = 0;
      int open = -1;
      int open_count = 0;
      for (int k = 0; k < c.size; ++k) {
        const auto s = state[at(c.cells, k)];
        if (s == 1) ++kept;
        if (s == kUndecided) {
          open = c.cells[static_cast<std::size_t>(k)];
          ++open_count;
        }
      }
      if (kept == c.size) return false;
      if (kept == c.size - 1 && open_count == 1) {
        state[static_cast<std::size_t>(open)] = 0;
        trail.push_back(open);
      }
    }
    return true;
  }

  /// Undecided cells are split into disjoint groups, each with a cap on how
  /// many of its cells can be kept: cliques of pairwise conflicts keep one,
  /// an unsatisfied quadruple loses one, any other cell keeps itself.
  int bound(const std::vector<std::int8_t>& state) {
    int kept = 0;
    open_.clear();
    for (int i = 0; i < n_; ++i) {
      kept += state[static_cast<std::size_t>(i)] == 1;
      if (state[static_cast<std::size_t>(i)] == kUndecided) open_.push_back(i);
    }
    used_.assign(static_cast<std::size_t>(n_), 0);
    int cap = 0;
    // Greedy clique cover of the pairwise conflict graph, busiest cells first.
    degree_.assign(static_cast<std::size_t>(n_), 0);
    for (int a : open_)
      for (int b : open_) degree_[static_cast<std::size_t>(a)] += adjacent_[pair(a, b)];
    order_ = open_;
    std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) {
      return degree_[static_cast<std::size_t>(a)] > degree_[static_cast<std::size_t>(b)];
    });
    for (int seed : order_) {
      if (used_[static_cast<std::size_t>(seed)] || degree_[static_cast<std::size_t>(seed)] == 0) continue;
      clique_.assign(1, seed);
      for (int cand : order_) {
        if (used_[static_cast<std::size_t>(cand)] || cand == seed) continue;
        bool all = true;
        for (int member : clique_) all = all && adjacent_[pair(cand, member)];
        if (all) clique_.push_back(cand);
      }
      if (clique_.size() < 2) continue;
      for (int member : clique_) used_[static_cast<std::size_t>(member)] = 1;
      cap += 1;
    }
    int loose = 0;
    for (const auto& c : conflicts_) {
      if (c.size == 2) continue;
      bool live = true;
      bool free = true;
      int open = 0;
      for (int k = 0; k < c.size; ++k) {
        const auto x = at(c.cells, k);
        if (state[x] == 0) live = false;
        if (state[x] == kUndecided) {
          ++open;
          if (used_[x]) free = false;
        }
      }
      if (!live || !free || open == 0) continue;
      for (int k = 0; k < c.size; ++k) {
        const auto x = at(c.cells, k);
        if (state[x] == kUndecided) used_[x] = 1;
      }
      cap += open - 1;
    }
    for (int a : open_) loose += !used_[static_cast<std::size_t>(a)];
    return kept + cap + loose;
  }

  int pick(const std::vector<std::int8_t>& state) const {
    if (target_ >= 0) {
      for (int i = 0; i < n_; ++i)
        if (state[static_cast<std::size_t>(i)] == kUndecided) return i;
      return -1;
    }
    int best = -1;
    int best_live = -1;
    for (int i = 0; i < n_; ++i) {
      if (state[static_cast<std::size_t>(i)] != kUndecided) continue;
      int live = 0;
      for (std::size_t ci : by_cell_[static_cast<std::size_t>(i)]) {
        const Conflict& c = conflicts_[ci];
        bool ok = true;
        for (int k = 0; k < c.size; ++k) ok = ok && state[at(c.cells, k)] != 0;
        live += ok;
      }
      if (live > best_live) {
        best = i;
        best_live = live;
      }
    }
    return best;
  }

  void search(std::vector<std::int8_t>& state, long long& nodes) {
    if (found_) return;
    ++nodes;
    const int b = bound(state);
    if (target_ < 0 ? b <= best_size_ : b < target_) return;
    const int next = pick(state);
    if (next < 0) {
      if (target_ < 0) {
        best_size_ = b;
        best_ = state;
      } else {
        best_ = state;
        found_ = true;
      }
      return;
    }
    for (std::int8_t value : {std::int8_t{1}, std::int8_t{0}}) {
      std::vector<int> trail{next};
      state[static_cast<std::size_t>(next)] = value;
      if (value == 0 || propagate(state, next, trail)) search(state, nodes);
      for (int x : trail) state[static_cast<std::size_t>(x)] = kUndecided;
      if (found_) return;
    }
  }

  int n_;
  std::vector<Conflict> conflicts_;
  std::vector<std::vector<std::size_t>> by_cell_;
  std::vector<char> adjacent_;
  std::vector<std::int8_t> best_;
  std::vector<char> used_;
  std::vector<int> open_, order_, clique_, degree_;
  int best_size_ = 0;
  int target_ = -1;
  bool found_ = false;
};

}  // namespace detail

/// Exact maximizer of the number of kept cells subject to every violated pair
/// losing a cell and every violated quadruple losing a cell. Among optima the
/// keep mask is the lexicographically largest in (t, i) order, so lower
/// indices are kept first. Cells outside `valid` are never kept.
inline CompatibleSet max_compatible_set(const ViolationSets& violations, int horizon, int keypoints,
                                        const CellMask* valid = nullptr) {
  auto cell = [&](int t, int i) {
    require_dims(t >= 0 && t < horizon && i >= 0 && i < keypoints, "violation index out of range");
    return t * keypoints + i;
  };
  std::vector<detail::Conflict> conflicts;
  for (const auto& v : violations.shape) {
    if (v.i == v.j) throw InvalidArgumentError("shape violation needs i != j");
    conflicts.push_back({{cell(v.t, v.i), cell(v.t, v.j), 0, 0}, 2});
  }
  for (const auto& v : violations.time) {
    if (v.i == v.j || v.l == v.m) throw InvalidArgumentError("time violation needs i != j and l != m");
    conflicts.push_back({{cell(v.l, v.i), cell(v.l, v.j), cell(v.m, v.i), cell(v.m, v.j)}, 4});
  }
  const int n = horizon * keypoints;
  if (valid) {
    require_dims(valid->rows() == horizon && valid->cols() == keypoints, "valid mask shape");
    // An invalid cell is a one-cell conflict.
    for (int t = 0; t < horizon; ++t)
      for (int i = 0; i < keypoints; ++i)
        if (!(*valid)(t, i)) conflicts.push_back({{cell(t, i), 0, 0, 0}, 1});
  }

  CompatibleSet out;
  detail::MaxCompatibleSearch search(n, std::move(conflicts));
  const auto state = search.solve(out.nodes);
  out.keep = CellMask::Constant(horizon, keypoints, false);
  for (int c = 0; c < n; ++c) {
    if (state[static_cast<std::size_t>(c)] == 1) {
      out.keep(c / keypoints, c % keypoints) = true;
      ++out.kept;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pruning

struct PruningReport {
  int kept = 0;
  int removed = 0;
  int violations_shape = 0;
  int violations_time = 0;
  long long bnb_nodes = 0;
};

inline void to_json(nlohmann::json& j, const PruningReport& r) {
  j = nlohmann::json{{"kept", r.kept},
                     {"removed", r.removed},
                     {"violations_shape", r.violations_shape},
                     {"violations_time", r.violations_time},
                     {"bnb_nodes", r.bnb_nodes}};
}

struct PruningResult {
  MeasurementSet measurements;  // pruned cells marked invalid
  CellMask keep;
  ViolationSets violations;
  PruningReport report;
};

inline PruningResult prune(const MeasurementSet& meas, const ShapeLibrary& lib, double epsilon,
                           TimePairPolicy policy = TimePairPolicy::AnchorAndPredecessor) {
  require_dims(meas.keypoints() == lib.num_keypoints(), "measurements vs library");
  PruningResult out;
  out.violations = build_violation_sets(meas, lib, epsilon, policy);
  const CellMask valid = meas.mask();
  const CompatibleSet set = max_compatible_set(out.violations, meas.horizon(), meas.keypoints(), &valid);
  out.keep = set.keep;
  out.measurements = meas;
  for (int t = 0; t < meas.horizon(); ++t)
    for (int i = 0; i < meas.keypoints(); ++i)
      if (!set.keep(t, i)) out.measurements.set_valid(t, i, false);
  out.report.kept = set.kept;
  out.report.removed = meas.valid_count() - set.kept;
  out.report.violations_shape = static_cast<int>(out.violations.shape.size());
  out.report.violations_time = static_cast<int>(out.violations.time.size());
  out.report.bnb_nodes = set.nodes;
  return out;
}

// ---------------------------------------------------------------------------
// Graduated non-convexity

/// TLS weight for squared residual r2 at control parameter mu.
inline double tls_weight(double r2, double mu, double eps_bar) {
  const double e2 = eps_bar * eps_bar;
  if (r2 <= mu / (mu + 1.0) * e2) return 1.0;
  if (r2 >= (mu + 1.0) / mu * e2) return 0.0;
  return eps_bar * std::sqrt(mu * (mu + 1.0)) / std::sqrt(r2) - mu;
}

inline double gnc_initial_mu(double r_max2, double eps_bar) {
  const double e2 = eps_bar * eps_bar;
  const double denom = 2.0 * r_max2 - e2;
  if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
  return std::max(e2 / denom, 1e-6);
}

struct GncSettings {
  double eps_bar = 0.03;
  double mu_factor = 1.4;
  int max_iterations = 20;
  double weight_tolerance = 1e-6;
};

struct GncResult {
  Estimate estimate;
  Eigen::MatrixXd weights;  // T x N, zero on invalid cells
  int iterations = 0;
  bool degraded = false;
};

/// r_t^i = ‖y_t^i − R_t B_i c − p_t‖ on valid cells, zero elsewhere.
inline Eigen::MatrixXd measurement_residuals(const Trajectory& traj, const ShapeCoefficient& c,
                                             const MeasurementSet& meas, const ShapeLibrary& lib) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(meas.horizon(), meas.keypoints());
  const std::vector<Vec3> pts = reconstruct_keypoints(lib, c);
  for (int t = 0; t < meas.horizon(); ++t)
    for (int i = 0; i < meas.keypoints(); ++i)
      if (meas.valid(t, i))
        r(t, i) = (meas.y(t, i) - traj[t].rotation.matrix() * pts[static_cast<std::size_t>(i)] -
                   traj[t].position).norm();
  return r;
}

/// The solve callback is the certifiable pipeline by default; tests may swap
/// it out.
using WeightedSolver = std::function<Estimate(const MeasurementSet&)>;

inline GncResult gnc_solve(const MeasurementSet& meas, const ShapeLibrary& lib, const SmootherWeights& weights,
                           const GncSettings& settings, const SolverOptions& opts = {},
                           WeightedSolver solver = {}) {
  if (!(settings.eps_bar > 0.0)) throw InvalidArgumentError("GNC noise bound must be > 0");
  if (!solver) {
    solver = [&](const MeasurementSet& m) { return solve_certifiable(m, lib, weights, opts); };
  }
  const int horizon = meas.horizon();
  const int n = meas.keypoints();
  const Eigen::MatrixXd base = meas.weights();
  Eigen::MatrixXd w = meas.mask().select(Eigen::MatrixXd::Ones(horizon, n), Eigen::MatrixXd::Zero(horizon, n));

  auto weighted = [&](const Eigen::MatrixXd& gnc_w) {
    MeasurementSet m = meas;
    for (int t = 0; t < horizon; ++t)
      for (int i = 0; i < n; ++i) m.set_weight(t, i, base(t, i) * gnc_w(t, i));
    return m;
  };

  GncResult out;
  out.weights = w;
  bool have = false;
  double mu = 0.0;
  const double e2 = settings.eps_bar * settings.eps_bar;
  for (int it = 0; it < settings.max_iterations; ++it) {
    Estimate est;
    try {
      est = solver(weighted(w));
    } catch (const Error&) {
      out.degraded = true;
      if (!have) throw;
      break;
    }
    ++out.iterations;
    if (!sdp::usable(est.status)) {
      out.degraded = true;
      if (!have) {
        out.estimate = est;
        out.weights = w;
        have = true;
      }
      break;
    }
    out.estimate = est;
    out.weights = w;
    have = true;

    const Eigen::MatrixXd r = measurement_residuals(est.trajectory, est.shape, meas, lib);
    const Eigen::MatrixXd r2 = r.cwiseProduct(r);
    const double r_max2 = meas.mask().select(r2, Eigen::MatrixXd::Zero(horizon, n)).maxCoeff();
    if (it == 0) {
      if (r_max2 <= e2) break;  // every residual already inside the noise bound
      mu = gnc_initial_mu(r_max2, settings.eps_bar);
    }

    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(horizon, n);
    bool binary = true;
    for (int t = 0; t < horizon; ++t)
      for (int i = 0; i < n; ++i) {
        if (!meas.valid(t, i)) continue;
        next(t, i) = tls_weight(r2(t, i), mu, settings.eps_bar);
        binary = binary && (next(t, i) == 0.0 || next(t, i) == 1.0);
      }
    const double change = (next - w).cwiseAbs().maxCoeff();
    w = next;
    mu *= settings.mu_factor;
    if (binary || change < settings.weight_tolerance) {
      // One last solve with the final weights unless nothing moved.
      if (change > 0.0) {
        try {
          Estimate fin = solver(weighted(w));
          ++out.iterations;
          if (sdp::usable(fin.status)) {
            out.estimate = fin;
            out.weights = w;
          } else {
            out.degraded = true;
          }
        } catch (const Error&) {
          out.degraded = true;
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace cast

#endif  // CAST_ROBUST_HPP
