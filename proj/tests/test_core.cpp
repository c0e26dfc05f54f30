#include "cast/core.hpp"
#include "cast/simulate.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cast;

namespace {

Mat3 random_matrix(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i) = n(rng);
  return m;
}

}  // namespace

TEST(Rotation, RejectsNonOrthogonal) {
  Mat3 m = Mat3::Identity();
  m(0, 1) = 0.1;
  EXPECT_THROW(Rotation{m}, InvalidArgumentError);
}

TEST(Rotation, RejectsReflection) {
  Mat3 m = Mat3::Identity();
  m(2, 2) = -1.0;
  EXPECT_THROW(Rotation{m}, InvalidArgumentError);
}

TEST(Rotation, ExpMatchesAxisAngle) {
  const Rotation r = Rotation::exp(Vec3(0, 0, std::numbers::pi / 2));
  EXPECT_NEAR((r * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((Rotation::exp(Vec3::Zero()).matrix() - Mat3::Identity()).norm(), 0.0, 0.0);
}

// Nearest rotation must beat every sampled rotation, and a local
// perturbation search must not find anything closer.
TEST(ProjectToSo3, BeatsBruteForceSearch) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 m = random_matrix(rng);
    const Rotation p = project_to_so3(m);
    const double best = (m - p.matrix()).norm();
    for (int s = 0; s < 2000; ++s) {
      EXPECT_LE(best, (m - random_rotation(rng).matrix()).norm() + 1e-12);
    }
    for (int s = 0; s < 200; ++s) {
      const Rotation q = p * Rotation::exp(gaussian_vec3(1e-3, rng));
      EXPECT_LE(best, (m - q.matrix()).norm() + 1e-12);
    }
  }
}

TEST(ProjectToSo3, FixesHandedness) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = -1.0;
  const Rotation r = project_to_so3(m);
  EXPECT_NEAR(r.matrix().determinant(), 1.0, 1e-12);
}

TEST(ProjectToSo3, RankDeficientThrows) {
  Mat3 m = Mat3::Zero();
  m(0, 0) = 1.0;
  m(1, 1) = 1.0;
  EXPECT_THROW(project_to_so3(m), DegenerateMatrixError);
}

TEST(GeodesicAngle, MatchesQuaternionAngle) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const Rotation a = random_rotation(rng);
    const Rotation b = random_rotation(rng);
    const Eigen::Quaterniond q(a.matrix().transpose() * b.matrix());
    const double expected = 2.0 * std::acos(std::min(1.0, std::abs(q.w())));
    EXPECT_NEAR(geodesic_angle(a, b), expected, 1e-7);
  }
}

TEST(ShapeCoefficient, SumToOneEnforced) {
  EXPECT_THROW(ShapeCoefficient(Eigen::Vector2d(0.5, 0.6)), InvalidArgumentError);
  const ShapeCoefficient c(Eigen::Vector2d(1.5, -0.5));
  EXPECT_TRUE(c.has_negative());
  EXPECT_DOUBLE_EQ(ShapeCoefficient::mean(4).vector().sum(), 1.0);
}

TEST(ShapeLibrary, BlocksMatchModels) {
  std::vector<std::vector<Vec3>> models{{Vec3(1, 2, 3), Vec3(4, 5, 6)}, {Vec3(7, 8, 9), Vec3(0, 1, 2)}};
  const ShapeLibrary lib = ShapeLibrary::from_models(models, 0.5);
  EXPECT_EQ(lib.num_models(), 2);
  EXPECT_EQ(lib.num_keypoints(), 2);
  EXPECT_EQ(lib.keypoint(1, 0), Vec3(7, 8, 9));
  EXPECT_EQ(Vec3(lib.block(1) * Eigen::Vector2d(0, 1)), Vec3(0, 1, 2));
  EXPECT_THROW(ShapeLibrary::from_models({{Vec3::Zero()}, {}}), InvalidArgumentError);
}

TEST(MeasurementSet, MaskZeroesEffectiveWeight) {
  MeasurementSet m(2, 3);
  m.set_weight(0, 1, 4.0);
  m.set_valid(1, 2, false);
  EXPECT_DOUBLE_EQ(m.effective_weight(0, 1), 4.0);
  EXPECT_DOUBLE_EQ(m.effective_weight(1, 2), 0.0);
  EXPECT_EQ(m.valid_count(), 5);
  EXPECT_THROW(m.set_weight(0, 0, -1.0), InvalidArgumentError);
}

TEST(SmootherWeights, ValidatesLength) {
  EXPECT_NO_THROW(SmootherWeights::constant(5, 1, 1, 0.1).validate(5));
  EXPECT_THROW(SmootherWeights::constant(5, 1, 1, 0.1).validate(6), DimensionError);
}

// One keypoint off by 0.1 m along x with unit weight, no smoothing, shape at
// the library mean: the objective is 0.1² = 0.01.
TEST(Objective, HandValue) {
  const ShapeLibrary lib = ShapeLibrary::from_models({{Vec3(0, 0, 0), Vec3(1, 0, 0)}}, 1.0);
  MeasurementSet meas(2, 2);
  Trajectory traj(2, ObjectState::make(Rotation(), Vec3::Zero(), Vec3::Zero(), Rotation()));
  meas.y(0, 0) = Vec3(0.1, 0, 0);
  meas.y(0, 1) = Vec3(1, 0, 0);
  meas.y(1, 0) = Vec3(0, 0, 0);
  meas.y(1, 1) = Vec3(1, 0, 0);
  const auto w = SmootherWeights::constant(2, 1.0, 1.0, 0.0);
  EXPECT_NEAR(evaluate_objective(traj, ShapeCoefficient::mean(1), meas, lib, w), 0.01, 1e-15);
}

TEST(Objective, SmoothingTerms) {
  const ShapeLibrary lib = ShapeLibrary::from_models({{Vec3(0, 0, 0)}, {Vec3(0, 0, 0)}}, 1.0);
  MeasurementSet meas(3, 1);
  const Rotation turn = Rotation::exp(Vec3(0, 0, 0.5));
  Trajectory traj{ObjectState::make(Rotation(), Vec3::Zero(), Vec3(1, 0, 0), Rotation()),
                  ObjectState::make(Rotation(), Vec3::Zero(), Vec3(1, 2, 0), turn),
                  ObjectState::make(Rotation(), Vec3::Zero(), Vec3::Zero(), Rotation())};
  const auto w = SmootherWeights::constant(3, 0.5, 2.0, 3.0);
  const ShapeCoefficient c(Eigen::Vector2d(1.0, 0.0));
  const double expected = 3.0 * 0.5 + 0.5 * 4.0 + 2.0 * (turn.matrix() - Mat3::Identity()).squaredNorm();
  EXPECT_NEAR(evaluate_objective(traj, c, meas, lib, w), expected, 1e-14);
}

TEST(Metrics, PositionPercentAndDegrees) {
  Trajectory a{ObjectState::make(Rotation(), Vec3::Zero(), Vec3::Zero(), Rotation())};
  Trajectory b{ObjectState::make(Rotation::exp(Vec3(0, 0, std::numbers::pi / 180.0)), Vec3(0.02, 0, 0),
                                 Vec3::Zero(), Rotation())};
  const auto m = pose_metrics(b, a, ShapeCoefficient::mean(2), ShapeCoefficient::vertex(2, 0), 0.2);
  EXPECT_NEAR(m.position_error_pct[0], 10.0, 1e-12);
  EXPECT_NEAR(m.rotation_error_deg[0], 1.0, 1e-9);
  EXPECT_NEAR(m.shape_error, std::sqrt(0.5), 1e-15);
}

TEST(Statistics, MedianAndQuantile) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.75), 7.5);
}
