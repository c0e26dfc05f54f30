#ifndef CAST_CORE_HPP
#define CAST_CORE_HPP

// Domain types shared by every stage of the tracker: rotations, object
// states, trajectories, the active shape library, keypoint measurements,
// smoothing weights, plus the MAP objective and the error metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace cast {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DegenerateMatrixError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class InconsistencyError : public Error {
 public:
  using Error::Error;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError("dimension mismatch: " + what);
}

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kTypeTolerance = 1e-9;

/// Element of SO(3). Construction validates orthonormality and handedness.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  explicit Rotation(const Mat3& m, double tol = kTypeTolerance) : m_(m) {
    if (!m.allFinite()) throw InvalidArgumentError("rotation has non-finite entries");
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(m.determinant() - 1.0) > tol) {
      throw InvalidArgumentError("matrix is not a rotation");
    }
  }

  static Rotation identity() { return Rotation(); }

  static Rotation about_axis(const Vec3& axis, double angle) {
    return Rotation(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
  }

  /// Exponential map of an axis-angle vector.
  static Rotation exp(const Vec3& omega) {
    double angle = omega.norm();
    if (angle < 1e-300) return Rotation();
    return Rotation(Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix());
  }

  const Mat3& matrix() const { return m_; }
  Rotation inverse() const { return Rotation(m_.transpose(), 1e-6); }

  friend Rotation operator*(const Rotation& a, const Rotation& b) {
    return Rotation(a.m_ * b.m_, 1e-6);
  }
  friend Vec3 operator*(const Rotation& a, const Vec3& v) { return a.m_ * v; }

 private:
  Mat3 m_;
};

/// Nearest rotation in Frobenius norm, via SVD with determinant correction.
inline Rotation project_to_so3(const Mat3& m) {
  if (!m.allFinite()) throw DegenerateMatrixError("project_to_so3: non-finite input");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(2) < 1e-12) {
    throw DegenerateMatrixError("project_to_so3: smallest singular value below 1e-12");
  }
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  Mat3 r = u * v.transpose();
  return Rotation(r, 1e-8);
}

/// Angle of R1ᵀR2 in radians, in [0, π].
/// Chordal form ‖A − B‖_F = 2√2 sin(θ/2); unlike acos of the trace it keeps
/// full precision near θ = 0.
inline double geodesic_angle(const Rotation& a, const Rotation& b) {
  const double s = (a.matrix() - b.matrix()).norm() / (2.0 * std::numbers::sqrt2);
  return 2.0 * std::asin(std::min(s, 1.0));
}

/// Pose and twist at one time step. `body_position` is Rᵀp.
struct ObjectState {
  Rotation rotation;
  Vec3 position = Vec3::Zero();
  Vec3 body_position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Rotation rotation_rate;

  static ObjectState make(const Rotation& r, const Vec3& p, const Vec3& v,
                          const Rotation& omega) {
    ObjectState s;
    s.rotation = r;
    s.position = p;
    s.body_position = r.matrix().transpose() * p;
    s.velocity = v;
    s.rotation_rate = omega;
    return s;
  }
};

/// Ordered states over a horizon. Velocity and rotation rate of state t
/// describe the step t -> t+1, so only the first T-1 of them are meaningful.
using Trajectory = std::vector<ObjectState>;

/// K library models of N keypoints each, stored as the stacked 3N x K matrix B.
class ShapeLibrary {
 public:
  ShapeLibrary() = default;

  explicit ShapeLibrary(Eigen::MatrixXd stacked, double length_scale = 1.0)
      : b_(std::move(stacked)), length_scale_(length_scale) {
    if (b_.rows() < 3 || b_.rows() % 3 != 0 || b_.cols() < 1) {
      throw InvalidArgumentError("shape library needs 3N x K with N, K >= 1");
    }
    if (!b_.allFinite()) throw InvalidArgumentError("shape library has non-finite entries");
    if (!(length_scale_ > 0.0)) throw InvalidArgumentError("length scale must be positive");
  }

  /// models[k][i] is keypoint i of model k.
  static ShapeLibrary from_models(const std::vector<std::vector<Vec3>>& models,
                                  double length_scale = 1.0) {
    if (models.empty() || models.front().empty()) {
      throw InvalidArgumentError("shape library needs at least one model and keypoint");
    }
    const auto n = static_cast<Eigen::Index>(models.front().size());
    Eigen::MatrixXd b(3 * n, static_cast<Eigen::Index>(models.size()));
    for (std::size_t k = 0; k < models.size(); ++k) {
      if (static_cast<Eigen::Index>(models[k].size()) != n) {
        throw InvalidArgumentError("library models have differing keypoint counts");
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        b.block<3, 1>(3 * i, static_cast<Eigen::Index>(k)) = models[k][static_cast<std::size_t>(i)];
      }
    }
    return ShapeLibrary(std::move(b), length_scale);
  }

  int num_models() const { return static_cast<int>(b_.cols()); }
  int num_keypoints() const { return static_cast<int>(b_.rows() / 3); }
  double length_scale() const { return length_scale_; }

  const Eigen::MatrixXd& stacked() const { return b_; }
  auto block(int i) const { return b_.middleRows(3 * i, 3); }
  Vec3 keypoint(int model, int i) const { return b_.block<3, 1>(3 * i, model); }

 private:
  Eigen::MatrixXd b_;
  double length_scale_ = 1.0;
};

/// Coefficients of the active shape model. Entries sum to one; they may be
/// negative since the estimator does not enforce nonnegativity.
class ShapeCoefficient {
 public:
  ShapeCoefficient() = default;

  explicit ShapeCoefficient(Eigen::VectorXd c, double tol = kTypeTolerance) : c_(std::move(c)) {
    if (c_.size() < 1 || !c_.allFinite()) throw InvalidArgumentError("invalid shape coefficient");
    if (std::abs(c_.sum() - 1.0) > tol) {
      throw InvalidArgumentError("shape coefficient must sum to one");
    }
  }

  static ShapeCoefficient mean(int k) {
    return ShapeCoefficient(Eigen::VectorXd::Constant(k, 1.0 / k));
  }
  static ShapeCoefficient vertex(int k, int index) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
    c(index) = 1.0;
    return ShapeCoefficient(c);
  }

  const Eigen::VectorXd& vector() const { return c_; }
  int size() const { return static_cast<int>(c_.size()); }
  bool has_negative() const { return (c_.array() < 0.0).any(); }

 private:
  Eigen::VectorXd c_;
};

/// Keypoint observations y_t^i over a horizon with per-cell weights and a
/// validity mask. Masked-out cells are ignored everywhere.
class MeasurementSet {
 public:
  MeasurementSet() = default;

  MeasurementSet(int horizon, int keypoints)
      : horizon_(horizon),
        keypoints_(keypoints),
        y_(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(keypoints), Vec3::Zero()),
        weights_(Eigen::MatrixXd::Ones(horizon, keypoints)),
        mask_(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(horizon, keypoints, true)) {
    if (horizon < 1 || keypoints < 1) throw InvalidArgumentError("empty measurement set");
  }

  int horizon() const { return horizon_; }
  int keypoints() const { return keypoints_; }

  const Vec3& y(int t, int i) const { return y_[index(t, i)]; }
  Vec3& y(int t, int i) { return y_[index(t, i)]; }

  double weight(int t, int i) const { return weights_(t, i); }
  void set_weight(int t, int i, double w) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgumentError("weights must be finite and >= 0");
    weights_(t, i) = w;
  }
  bool valid(int t, int i) const { return mask_(t, i); }
  void set_valid(int t, int i, bool v) { mask_(t, i) = v; }

  /// Weight with the mask applied.
  double effective_weight(int t, int i) const { return mask_(t, i) ? weights_(t, i) : 0.0; }
  Eigen::MatrixXd effective_weights() const {
    return mask_.select(weights_, Eigen::MatrixXd::Zero(horizon_, keypoints_));
  }

  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask() const { return mask_; }

  int valid_count() const { return static_cast<int>(mask_.count()); }

 private:
  std::size_t index(int t, int i) const {
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(keypoints_) + static_cast<std::size_t>(i);
  }

  int horizon_ = 0;
  int keypoints_ = 0;
  std::vector<Vec3> y_;
  Eigen::MatrixXd weights_;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask_;
};

/// Smoothing and prior weights. Measurement weights live in MeasurementSet.
/// `velocity[t]` and `rotation_rate[t]` weight the change between the
/// twists of steps t and t+1, so both hold T-2 entries.
struct SmootherWeights {
  std::vector<double> velocity;
  std::vector<double> rotation_rate;
  double lambda = 0.1;

  static SmootherWeights constant(int horizon, double omega, double kappa, double lambda) {
    SmootherWeights w;
    const auto n = static_cast<std::size_t>(std::max(0, horizon - 2));
    w.velocity.assign(n, omega);
    w.rotation_rate.assign(n, kappa);
    w.lambda = lambda;
    return w;
  }

  void validate(int horizon) const {
    const auto n = static_cast<std::size_t>(std::max(0, horizon - 2));
    require_dims(velocity.size() == n && rotation_rate.size() == n,
                 "smoother weights need T-2 entries");
    auto bad = [](double w) { return !(w >= 0.0) || !std::isfinite(w); };
    if (std::any_of(velocity.begin(), velocity.end(), bad) ||
        std::any_of(rotation_rate.begin(), rotation_rate.end(), bad) || bad(lambda)) {
      throw InvalidArgumentError("smoother weights must be finite and >= 0");
    }
  }
};

/// Sum of weighted keypoint residuals, the shape prior and the velocity and
/// rotation-rate smoothing terms. Dynamics are not checked here.
inline double evaluate_objective(const Trajectory& traj, const ShapeCoefficient& c,
                                 const MeasurementSet& meas, const ShapeLibrary& lib,
                                 const SmootherWeights& weights) {
  const int horizon = static_cast<int>(traj.size());
  require_dims(horizon == meas.horizon(), "trajectory length vs measurement horizon");
  require_dims(meas.keypoints() == lib.num_keypoints(), "measurement keypoints vs library");
  require_dims(c.size() == lib.num_models(), "shape coefficient vs library");
  weights.validate(horizon);

  const Eigen::VectorXd shape = lib.stacked() * c.vector();
  double f = 0.0;
  for (int t = 0; t < horizon; ++t) {
    const Mat3& r = traj[t].rotation.matrix();
    for (int i = 0; i < meas.keypoints(); ++i) {
      const double w = meas.effective_weight(t, i);
      if (w == 0.0) continue;
      f += w * (meas.y(t, i) - r * shape.segment<3>(3 * i) - traj[t].position).squaredNorm();
    }
  }
  const int k = lib.num_models();
  f += weights.lambda * (c.vector() - Eigen::VectorXd::Constant(k, 1.0 / k)).squaredNorm();
  for (int t = 0; t + 2 < horizon; ++t) {
    f += weights.velocity[t] * (traj[t + 1].velocity - traj[t].velocity).squaredNorm();
    f += weights.rotation_rate[t] *
         (traj[t + 1].rotation_rate.matrix() - traj[t].rotation_rate.matrix()).squaredNorm();
  }
  return f;
}

struct PoseMetrics {
  std::vector<double> position_error_pct;
  std::vector<double> rotation_error_deg;
  double shape_error = 0.0;
};

inline PoseMetrics pose_metrics(const Trajectory& est, const Trajectory& gt,
                                const ShapeCoefficient& c_est, const ShapeCoefficient& c_gt,
                                double characteristic_length) {
  require_dims(est.size() == gt.size(), "pose_metrics horizons");
  require_dims(c_est.size() == c_gt.size(), "pose_metrics shape sizes");
  PoseMetrics m;
  for (std::size_t t = 0; t < est.size(); ++t) {
    m.position_error_pct.push_back(100.0 * (est[t].position - gt[t].position).norm() /
                                   characteristic_length);
    m.rotation_error_deg.push_back(geodesic_angle(est[t].rotation, gt[t].rotation) * 180.0 /
                                   std::numbers::pi);
  }
  m.shape_error = (c_est.vector() - c_gt.vector()).norm();
  return m;
}

/// Median of a copy of the values; mean of the middle pair for even counts.
inline double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

/// Linear-interpolated quantile, q in [0, 1].
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace cast

#endif  // CAST_CORE_HPP
