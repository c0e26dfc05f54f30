#ifndef CAST_SIMULATE_HPP
#define CAST_SIMULATE_HPP

// Synthetic constant-twist trajectories, keypoint measurements and outliers.

#include "cast/core.hpp"

#include <array>
#include <numeric>
#include <optional>
#include <random>

namespace cast {

using Rng = std::mt19937_64;

struct NoiseConfig {
  double measurement_sigma = 0.01;    // m
  double velocity_sigma = 0.01;       // m / step
  double rotation_rate_sigma = 0.01;  // rad / step
  double outlier_ratio = 0.0;
  double outlier_sigma = 0.2;  // m
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(measurement_sigma >= 0.0) || !(velocity_sigma >= 0.0) || !(rotation_rate_sigma >= 0.0) ||
        !(outlier_sigma >= 0.0)) {
      throw InvalidArgumentError("noise sigmas must be >= 0");
    }
    if (!(outlier_ratio >= 0.0 && outlier_ratio <= 1.0)) {
      throw InvalidArgumentError("outlier ratio must be in [0, 1]");
    }
  }

  static NoiseConfig zero() { return NoiseConfig{0.0, 0.0, 0.0, 0.0, 0.0, 0}; }
};

/// Initial twist magnitudes default to 0.05 m/step and 0.1 rad/step about a
/// random axis, which keeps the object within a few length scales over 12 steps.
struct ScenarioConfig {
  int horizon = 8;
  double characteristic_length = 0.2;
  double initial_speed = 0.05;
  double initial_turn_rate = 0.1;
  std::optional<Vec3> initial_velocity;  // overrides initial_speed when set
  std::optional<Vec3> initial_rotation_rate;  // axis-angle, overrides initial_turn_rate
  std::optional<Eigen::VectorXd> shape;  // ground truth c; sampled from the simplex when empty

  void validate() const {
    if (horizon < 2) throw InvalidArgumentError("scenario horizon must be >= 2");
    if (!(characteristic_length > 0.0)) throw InvalidArgumentError("length scale must be > 0");
    if (shape) {
      if (!((shape->array() >= 0.0).all()) || std::abs(shape->sum() - 1.0) > 1e-9) {
        throw InvalidArgumentError("ground-truth shape must lie on the simplex");
      }
    }
  }
};

/// Library bundled with the tool: an aeroplane-like layout of N = 10 keypoints
/// (nose, tail, two mirrored quadruples) in four proportions, all within a box of
/// side 0.2 m. Every model is centered and symmetric under y -> -y and z -> -z,
/// so the cross-covariance of any two models is diagonal.
inline ShapeLibrary default_library() {
  struct Proportions {
    double nose, tail, wing_x, wing_y, wing_z, fin_y, fin_z;
  };
  constexpr std::array<Proportions, 4> kModels{{
      {0.090, 0.080, 0.010, 0.090, 0.010, 0.030, 0.040},
      {0.095, 0.070, 0.020, 0.070, 0.020, 0.040, 0.030},
      {0.080, 0.090, 0.000, 0.095, 0.005, 0.025, 0.050},
      {0.085, 0.085, 0.015, 0.080, 0.015, 0.035, 0.035},
  }};
  std::vector<std::vector<Vec3>> models;
  for (const auto& m : kModels) {
    const double fin_x = -(m.nose - m.tail + 4.0 * m.wing_x) / 4.0;
    std::vector<Vec3> pts{Vec3(m.nose, 0, 0), Vec3(-m.tail, 0, 0)};
    for (const auto& [x, y, z] : {std::array<double, 3>{m.wing_x, m.wing_y, m.wing_z},
                                  std::array<double, 3>{fin_x, m.fin_y, m.fin_z}}) {
      pts.emplace_back(x, y, z);
      pts.emplace_back(x, y, -z);
      pts.emplace_back(x, -y, z);
      pts.emplace_back(x, -y, -z);
    }
    models.push_back(std::move(pts));
  }
  return ShapeLibrary::from_models(models, 0.2);
}

/// Random library for tests: K models of N keypoints uniform in a box.
inline ShapeLibrary random_library(int k, int n, double side, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5 * side, 0.5 * side);
  Eigen::MatrixXd b(3 * n, k);
  for (int c = 0; c < k; ++c)
    for (int r = 0; r < 3 * n; ++r) b(r, c) = u(rng);
  return ShapeLibrary(b, side);
}

inline Vec3 gaussian_vec3(double sigma, Rng& rng) {
  if (sigma == 0.0) return Vec3::Zero();
  std::normal_distribution<double> n(0.0, sigma);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return {x, y, z};
}

inline Rotation random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q;
  q.w() = n(rng);
  q.x() = n(rng);
  q.y() = n(rng);
  q.z() = n(rng);
  q.normalize();
  return project_to_so3(q.toRotationMatrix());
}

inline Vec3 random_unit_vector(Rng& rng) {
  Vec3 v;
  do {
    v = gaussian_vec3(1.0, rng);
  } while (v.norm() < 1e-9);
  return v.normalized();
}

/// Rotation-rate perturbation: exp of an isotropic Gaussian axis-angle vector.
inline Rotation sample_rotation_noise(double sigma, Rng& rng) {
  return Rotation::exp(gaussian_vec3(sigma, rng));
}

/// One step of the constant-twist model. Zero sigmas give the deterministic step.
inline ObjectState propagate_state(const ObjectState& s, const NoiseConfig& noise, Rng& rng) {
  const Vec3 p = s.position + s.rotation.matrix() * s.velocity;
  const Rotation r = project_to_so3(s.rotation.matrix() * s.rotation_rate.matrix());
  const Vec3 v = s.velocity + gaussian_vec3(noise.velocity_sigma, rng);
  Rotation omega = s.rotation_rate;
  if (noise.rotation_rate_sigma > 0.0) {
    omega = project_to_so3(omega.matrix() * sample_rotation_noise(noise.rotation_rate_sigma, rng).matrix());
  }
  return ObjectState::make(r, p, v, omega);
}

inline ObjectState propagate_state(const ObjectState& s) {
  Rng unused(0);
  return propagate_state(s, NoiseConfig::zero(), unused);
}

inline Trajectory generate_trajectory(const ObjectState& initial, int horizon, const NoiseConfig& noise,
                                      Rng& rng) {
  if (horizon < 1) throw InvalidArgumentError("horizon must be >= 1");
  Trajectory traj{initial};
  while (static_cast<int>(traj.size()) < horizon) traj.push_back(propagate_state(traj.back(), noise, rng));
  return traj;
}

/// y_t^i = R_t B_i c + p_t + ε, all cells valid with unit weight.
inline MeasurementSet sample_measurements(const Trajectory& traj, const ShapeLibrary& lib,
                                          const ShapeCoefficient& c, const NoiseConfig& noise, Rng& rng) {
  require_dims(c.size() == lib.num_models(), "shape coefficient vs library");
  MeasurementSet meas(static_cast<int>(traj.size()), lib.num_keypoints());
  const Eigen::VectorXd shape = lib.stacked() * c.vector();
  for (int t = 0; t < meas.horizon(); ++t) {
    for (int i = 0; i < meas.keypoints(); ++i) {
      meas.y(t, i) = traj[t].rotation.matrix() * shape.segment<3>(3 * i) + traj[t].position +
                     gaussian_vec3(noise.measurement_sigma, rng);
    }
  }
  return meas;
}

struct OutlierInjection {
  MeasurementSet measurements;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> is_outlier;  // T x N ground truth
};

/// Replaces round(ratio·T·N) shuffled cells with centroid + N(0, outlier_sigma² I).
/// The centroid is that of the object's true keypoints at that frame.
inline OutlierInjection inject_outliers(const MeasurementSet& meas, const Trajectory& traj,
                                        const ShapeLibrary& lib, const ShapeCoefficient& c,
                                        const NoiseConfig& noise, Rng& rng) {
  noise.validate();
  require_dims(static_cast<int>(traj.size()) == meas.horizon(), "trajectory vs measurements");
  OutlierInjection out{meas, Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
                                 meas.horizon(), meas.keypoints(), false)};
  const int cells = meas.horizon() * meas.keypoints();
  const auto count = static_cast<int>(std::lround(noise.outlier_ratio * cells));
  if (count == 0) return out;

  std::vector<int> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  Vec3 body_centroid = Vec3::Zero();
  for (int i = 0; i < lib.num_keypoints(); ++i) body_centroid += lib.block(i) * c.vector();
  body_centroid /= lib.num_keypoints();

  for (int n = 0; n < count; ++n) {
    const int t = order[static_cast<std::size_t>(n)] / meas.keypoints();
    const int i = order[static_cast<std::size_t>(n)] % meas.keypoints();
    const Vec3 centroid = traj[t].rotation.matrix() * body_centroid + traj[t].position;
    out.measurements.y(t, i) = centroid + gaussian_vec3(noise.outlier_sigma, rng);
    out.is_outlier(t, i) = true;
  }
  return out;
}

/// Symmetric Dirichlet(1) draw.
inline ShapeCoefficient sample_simplex_shape(int k, Rng& rng) {
  if (k < 1) throw InvalidArgumentError("K must be >= 1");
  if (k == 1) return ShapeCoefficient(Eigen::VectorXd::Ones(1));
  std::exponential_distribution<double> e(1.0);
  Eigen::VectorXd c(k);
  for (int i = 0; i < k; ++i) c(i) = e(rng);
  c /= c.sum();
  return ShapeCoefficient(c, 1e-12);
}

/// A full synthetic instance.
struct Scenario {
  Trajectory truth;
  ShapeCoefficient shape;
  MeasurementSet measurements;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> is_outlier;
};

inline Scenario generate_scenario(const ScenarioConfig& cfg, const NoiseConfig& noise,
                                  const ShapeLibrary& lib) {
  cfg.validate();
  noise.validate();
  Rng rng(noise.rng_seed);
  Scenario sc;
  sc.shape = cfg.shape ? ShapeCoefficient(*cfg.shape) : sample_simplex_shape(lib.num_models(), rng);

  const Rotation r0 = random_rotation(rng);
  const Vec3 p0 = gaussian_vec3(cfg.characteristic_length, rng);
  const Vec3 v0 = cfg.initial_velocity ? *cfg.initial_velocity
                                       : Vec3(cfg.initial_speed * random_unit_vector(rng));
  const Rotation omega0 = cfg.initial_rotation_rate
                              ? Rotation::exp(*cfg.initial_rotation_rate)
                              : Rotation::exp(cfg.initial_turn_rate * random_unit_vector(rng));
  sc.truth = generate_trajectory(ObjectState::make(r0, p0, v0, omega0), cfg.horizon, noise, rng);

  MeasurementSet clean = sample_measurements(sc.truth, lib, sc.shape, noise, rng);
  auto injected = inject_outliers(clean, sc.truth, lib, sc.shape, noise, rng);
  sc.measurements = std::move(injected.measurements);
  sc.is_outlier = std::move(injected.is_outlier);
  return sc;
}

}  // namespace cast

#endif  // CAST_SIMULATE_HPP
