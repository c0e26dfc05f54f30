#include "cast/robust.hpp"
#include "cast/simulate.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace cast;

namespace {

ShapeLibrary pair_library(const std::vector<Vec3>& diffs) {
  std::vector<std::vector<Vec3>> models;
  for (const auto& d : diffs) models.push_back({d, Vec3::Zero()});
  return ShapeLibrary::from_models(models);
}

const auto noise_free = oracle::noise_free_scenario;

}  // namespace

TEST(ShapeBounds, SingletonLibrary) {
  const PairBounds b = shape_bounds(pair_library({Vec3(1, 0, 0)}), 0, 1);
  EXPECT_DOUBLE_EQ(b.b_min, 1.0);
  EXPECT_DOUBLE_EQ(b.b_max, 1.0);
}

TEST(ShapeBounds, CollinearEndpoints) {
  const PairBounds b = shape_bounds(pair_library({Vec3(1, 0, 0), Vec3(3, 0, 0)}), 0, 1);
  EXPECT_NEAR(b.b_min, 1.0, 1e-12);
  EXPECT_NEAR(b.b_max, 3.0, 1e-12);
}

TEST(ShapeBounds, InteriorMinimumMatchesGrid) {
  const ShapeLibrary lib = pair_library({Vec3(1, 0, 0), Vec3(-1, 0, 0)});
  const PairBounds b = shape_bounds(lib, 0, 1);
  EXPECT_NEAR(b.b_min, 0.0, 1e-12);
  EXPECT_NEAR(b.b_max, 1.0, 1e-12);
}

// Max of a convex function over the simplex sits at a vertex; the min is a
// convex QP, solved here by projected gradient.
TEST(ShapeBounds, RandomLibrariesAgainstProjectedGradient) {
  Rng rng(14);
  auto project = [](Eigen::VectorXd c) {
    Eigen::VectorXd u = c;
    std::sort(u.data(), u.data() + u.size(), std::greater<>());
    double cum = 0.0, tau = 0.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      cum += u(k);
      const double t = (cum - 1.0) / static_cast<double>(k + 1);
      if (u(k) - t > 0) tau = t;
    }
    return Eigen::VectorXd((c.array() - tau).max(0.0));
  };
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 2 + trial % 4;
    const ShapeLibrary lib = random_library(k, 3, 1.0, rng);
    const Eigen::MatrixXd d = lib.block(0) - lib.block(2);
    const PairBounds b = shape_bounds(lib, 0, 2);
    double hi = 0.0;
    for (int v = 0; v < k; ++v) hi = std::max(hi, d.col(v).norm());
    const double step = 1.0 / (2.0 * std::max(1e-12, (d.transpose() * d).norm()));
    Eigen::VectorXd c = Eigen::VectorXd::Constant(k, 1.0 / k);
    for (int it = 0; it < 200000; ++it) c = project(c - step * 2.0 * d.transpose() * (d * c));
    const double lo = (d * c).norm();
    EXPECT_NEAR(b.b_max, hi, 1e-12);
    EXPECT_LE(b.b_min, lo + 1e-9);
    EXPECT_NEAR(b.b_min, lo, 1e-6);
  }
}

TEST(ShapeBounds, SameKeypointRejected) {
  EXPECT_THROW(shape_bounds(default_library(), 3, 3), InvalidArgumentError);
}

TEST(ShapeCompat, Examples) {
  EXPECT_TRUE(shape_compat(Vec3(0, 0, 0), Vec3(2, 0, 0), {2.0, 2.0}, 0.0));
  EXPECT_FALSE(shape_compat(Vec3(0, 0, 0), Vec3(3.3, 0, 0), {1.0, 3.0}, 0.1));
  EXPECT_TRUE(shape_compat(Vec3(0, 0, 0), Vec3(3.15, 0, 0), {1.0, 3.0}, 0.1));
  EXPECT_FALSE(shape_compat(Vec3(0, 0, 0), Vec3(0.75, 0, 0), {1.0, 3.0}, 0.1));
}

TEST(TimeCompat, Examples) {
  const Vec3 a(0, 0, 0), b(1, 0, 0);
  EXPECT_TRUE(time_compat(a, b, a, b, 0.0));
  EXPECT_FALSE(time_compat(a, b, a, Vec3(1.5, 0, 0), 0.1));
  EXPECT_TRUE(time_compat(a, b, a, Vec3(1.35, 0, 0), 0.1));
}

TEST(Violations, EmptyWithoutNoiseOrOutliers) {
  const Scenario s = noise_free(6, 0.0, 3);
  const ViolationSets v = build_violation_sets(s.measurements, default_library(), 0.0, TimePairPolicy::All);
  EXPECT_TRUE(v.shape.empty());
  EXPECT_TRUE(v.time.empty());
}

TEST(Violations, FarOutlierHitsEveryPairInItsFrame) {
  Scenario s = noise_free(3, 0.0, 5);
  s.measurements.y(1, 1) += Vec3(10.0, 0, 0);
  const ViolationSets v = build_violation_sets(s.measurements, default_library(), 0.01);
  int hits = 0;
  for (const auto& x : v.shape) {
    EXPECT_EQ(x.t, 1);
    EXPECT_TRUE(x.i == 1 || x.j == 1);
    ++hits;
  }
  EXPECT_EQ(hits, 9);
  EXPECT_LE(v.shape.size(), 3u * 45u);
}

TEST(Violations, TimePairPolicies) {
  EXPECT_EQ(time_pairs(5, TimePairPolicy::All).size(), 10u);
  const auto anchor = time_pairs(5, TimePairPolicy::AnchorAndPredecessor);
  // (0,1) appears once; the rest contribute two pairs each.
  EXPECT_EQ(anchor.size(), 7u);
  EXPECT_EQ(anchor.front(), std::make_pair(0, 1));
}

TEST(Violations, InvalidCellsIgnored) {
  Scenario s = noise_free(3, 0.0, 5);
  s.measurements.y(1, 1) += Vec3(10.0, 0, 0);
  s.measurements.set_valid(1, 1, false);
  const ViolationSets v = build_violation_sets(s.measurements, default_library(), 0.01);
  EXPECT_TRUE(v.shape.empty());
  EXPECT_TRUE(v.time.empty());
}

TEST(MaxCompatibleSet, EmptySetsKeepEverything) {
  const CompatibleSet r = max_compatible_set({}, 3, 4);
  EXPECT_EQ(r.kept, 12);
  EXPECT_TRUE(r.keep.all());
}

TEST(MaxCompatibleSet, SinglePairKeepsLowerIndex) {
  ViolationSets v;
  v.shape.push_back({1, 2, 3});
  const CompatibleSet r = max_compatible_set(v, 2, 4);
  EXPECT_EQ(r.kept, 7);
  EXPECT_TRUE(r.keep(1, 2));
  EXPECT_FALSE(r.keep(1, 3));
}

TEST(MaxCompatibleSet, QuadrupleDropsOneCell) {
  ViolationSets v;
  v.time.push_back({0, 1, 0, 1});
  const CompatibleSet r = max_compatible_set(v, 2, 2);
  EXPECT_EQ(r.kept, 3);
  EXPECT_FALSE(r.keep(1, 1));
}

TEST(MaxCompatibleSet, MatchesBruteForce) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    int horizon = 0, n = 0;
    const ViolationSets v = oracle::random_pruning_case(rng, horizon, n);
    const CompatibleSet r = max_compatible_set(v, horizon, n);
    const CellMask expected = oracle::brute_force_compatible(v, horizon, n);
    EXPECT_EQ(r.kept, static_cast<int>(expected.count())) << "trial " << trial;
    EXPECT_TRUE((r.keep == expected).all()) << "trial " << trial;
  }
}

TEST(MaxCompatibleSet, RespectsInvalidCells) {
  CellMask valid = CellMask::Constant(2, 3, true);
  valid(0, 1) = false;
  const CompatibleSet r = max_compatible_set({}, 2, 3, &valid);
  EXPECT_EQ(r.kept, 5);
  EXPECT_FALSE(r.keep(0, 1));
}

TEST(MaxCompatibleSet, RejectsBadIndices) {
  ViolationSets v;
  v.shape.push_back({0, 1, 1});
  EXPECT_THROW(max_compatible_set(v, 2, 3), InvalidArgumentError);
  ViolationSets w;
  w.shape.push_back({5, 0, 1});
  EXPECT_THROW(max_compatible_set(w, 2, 3), DimensionError);
}

TEST(Pruning, NeverRejectsNoiseFreeInliers) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scenario s = noise_free(4, 0.0, seed);
    const double eps = seed % 2 == 0 ? 0.0 : 0.01;
    const ViolationSets v = build_violation_sets(s.measurements, default_library(), eps, TimePairPolicy::All);
    EXPECT_TRUE(v.shape.empty() && v.time.empty()) << "seed " << seed;
  }
}

TEST(Pruning, InliersNeverInViolationsWithOutliersPresent) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scenario s = noise_free(4, 0.3, seed);
    const ViolationSets v = build_violation_sets(s.measurements, default_library(), 0.0);
    for (const auto& x : v.shape) EXPECT_TRUE(s.is_outlier(x.t, x.i) || s.is_outlier(x.t, x.j));
    for (const auto& q : v.time)
      EXPECT_TRUE(s.is_outlier(q.l, q.i) || s.is_outlier(q.l, q.j) || s.is_outlier(q.m, q.i) ||
                  s.is_outlier(q.m, q.j));
  }
}

TEST(Pruning, ReportFields) {
  const Scenario s = noise_free(4, 0.25, 2);
  const PruningResult r = prune(s.measurements, default_library(), 0.001);
  nlohmann::json j = r.report;
  for (const char* key : {"kept", "removed", "violations_shape", "violations_time", "bnb_nodes"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(r.report.kept + r.report.removed, 40);
  EXPECT_EQ(r.measurements.valid_count(), r.report.kept);
  EXPECT_GT(r.report.removed, 0);
}

TEST(Tls, HandValue) {
  EXPECT_NEAR(tls_weight(1.0, 1.0, 1.0), std::sqrt(2.0) - 1.0, 1e-15);
  EXPECT_EQ(tls_weight(0.49, 1.0, 1.0), 1.0);
  EXPECT_EQ(tls_weight(2.01, 1.0, 1.0), 0.0);
}

TEST(Tls, MonotoneAndBracketing) {
  for (double mu : {1e-6, 1e-3, 0.1, 1.0, 10.0, 1e4}) {
    const double eps = 0.7;
    const double lo = mu / (mu + 1.0) * eps * eps;
    const double hi = (mu + 1.0) / mu * eps * eps;
    EXPECT_LE(lo, eps * eps);
    EXPECT_GE(hi, eps * eps);
    double prev = 1.0;
    for (int k = 0; k <= 2000; ++k) {
      const double r2 = hi * 1.2 * k / 2000.0;
      const double w = tls_weight(r2, mu, eps);
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0 + 1e-12);
      EXPECT_LE(w, prev + 1e-12);
      prev = w;
    }
    // Continuous at both thresholds.
    EXPECT_NEAR(tls_weight(lo * (1 + 1e-12), mu, eps), 1.0, 1e-6);
    EXPECT_NEAR(tls_weight(hi * (1 - 1e-12), mu, eps), 0.0, 1e-6);
  }
}

TEST(Tls, InitialMu) {
  EXPECT_NEAR(gnc_initial_mu(1.0, 1.0), 1.0, 1e-15);
  EXPECT_EQ(gnc_initial_mu(1e12, 1e-3), 1e-6);
}

TEST(Gnc, NoOutliersStopsAfterOneSolve) {
  const Scenario s = noise_free(4, 0.0, 6);
  GncSettings gs;
  gs.eps_bar = 0.01;
  const GncResult r = gnc_solve(s.measurements, default_library(), SmootherWeights::constant(4, 1, 1, 0.01), gs);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_FALSE(r.degraded);
  EXPECT_TRUE((r.weights.array() == 1.0).all());
}

TEST(Gnc, SeparatesOutliers) {
  ScenarioConfig sc;
  sc.horizon = 4;
  NoiseConfig noise = NoiseConfig::zero();
  noise.measurement_sigma = 0.002;
  noise.outlier_sigma = 0.2;
  noise.outlier_ratio = 0.3;
  noise.rng_seed = 12;
  const ShapeLibrary lib = default_library();
  const Scenario s = generate_scenario(sc, noise, lib);
  GncSettings gs;
  gs.eps_bar = 0.006;
  const GncResult r = gnc_solve(s.measurements, lib, SmootherWeights::constant(4, 1, 1, 0.1), gs);
  // Within 20 solves μ stays small, so inlier weights may still be fractional;
  // the classes must nonetheless separate.
  for (int t = 0; t < 4; ++t)
    for (int i = 0; i < 10; ++i) {
      if (s.is_outlier(t, i)) {
        EXPECT_EQ(r.weights(t, i), 0.0) << t << "," << i;
      } else {
        EXPECT_GT(r.weights(t, i), 0.0) << t << "," << i;
      }
    }
  EXPECT_LE(r.iterations, gs.max_iterations);
}

TEST(Gnc, FailureWithoutEstimatePropagates) {
  const Scenario s = noise_free(3, 0.0, 1);
  GncSettings gs;
  auto failing = [](const MeasurementSet&) -> Estimate { throw SingularMatrixError("boom"); };
  EXPECT_THROW(gnc_solve(s.measurements, default_library(), SmootherWeights::constant(3, 1, 1, 0.1), gs, {}, failing),
               SingularMatrixError);
}

TEST(Gnc, LaterFailureReturnsBestSoFar) {
  const Scenario s = noise_free(3, 0.3, 1);
  const ShapeLibrary lib = default_library();
  const auto w = SmootherWeights::constant(3, 1, 1, 0.1);
  int calls = 0;
  auto flaky = [&](const MeasurementSet& m) -> Estimate {
    if (++calls > 1) throw SingularMatrixError("boom");
    return solve_certifiable(m, lib, w);
  };
  GncSettings gs;
  gs.eps_bar = 0.001;
  const GncResult r = gnc_solve(s.measurements, lib, w, gs, {}, flaky);
  EXPECT_TRUE(r.degraded);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.estimate.trajectory.size(), 3u);
}
