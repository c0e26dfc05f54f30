#ifndef CAST_SHAPE_HPP
#define CAST_SHAPE_HPP

// Closed-form optimal shape coefficient for fixed poses, and dense keypoint
// reconstruction from the active shape model.
//
// With W = sum_t W_t (diagonal keypoint weights, masked cells zeroed),
//   H = 1/2 (Bᵀ W B + λI)^-1
//   G = H - H 1 1ᵀ H / (1ᵀ H 1),   g = H 1 / (1ᵀ H 1)
//   c* = 2 G (sum_t Bᵀ W_t h_t + λ c̄) + g,   h_t[i] = R_tᵀ (y_t^i - p_t).

#include "cast/core.hpp"

namespace cast {

struct ShapeOperators {
  Eigen::MatrixXd h;  // K x K, symmetric positive definite
  Eigen::MatrixXd g_mat;  // K x K
  Eigen::VectorXd g_vec;  // K
  Eigen::MatrixXd weights;  // T x N effective keypoint weights
  double lambda = 0.0;

  int num_models() const { return static_cast<int>(h.rows()); }
  int horizon() const { return static_cast<int>(weights.rows()); }
};

/// `keypoint_weights` is the T x N matrix of effective weights (mask applied).
inline ShapeOperators precompute_shape_operators(const ShapeLibrary& lib,
                                                 const Eigen::MatrixXd& keypoint_weights,
                                                 double lambda) {
  const int k = lib.num_models();
  const int n = lib.num_keypoints();
  require_dims(keypoint_weights.cols() == n, "keypoint weights vs library keypoints");
  if (!(lambda >= 0.0)) throw InvalidArgumentError("lambda must be >= 0");
  if (lambda == 0.0 && k > n) throw InvalidArgumentError("lambda must be > 0 when the library has more models than keypoints");

  Eigen::MatrixXd normal = lambda * Eigen::MatrixXd::Identity(k, k);
  const Eigen::VectorXd per_keypoint = keypoint_weights.colwise().sum().transpose();
  for (int i = 0; i < n; ++i) {
    if (per_keypoint(i) == 0.0) continue;
    normal.noalias() += per_keypoint(i) * lib.block(i).transpose() * lib.block(i);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
    throw SingularMatrixError("shape normal matrix is singular; use lambda > 0");
  }

  ShapeOperators ops;
  ops.h = 0.5 * llt.solve(Eigen::MatrixXd::Identity(k, k));
  ops.h = 0.5 * (ops.h + ops.h.transpose()).eval();
  const Eigen::VectorXd h1 = ops.h.rowwise().sum();
  const double denom = h1.sum();
  ops.g_mat = ops.h - h1 * h1.transpose() / denom;
  ops.g_vec = h1 / denom;
  ops.weights = keypoint_weights;
  ops.lambda = lambda;
  return ops;
}

inline ShapeOperators precompute_shape_operators(const ShapeLibrary& lib, const MeasurementSet& meas,
                                                 const SmootherWeights& weights) {
  return precompute_shape_operators(lib, meas.effective_weights(), weights.lambda);
}

/// Body-frame form: rotations R_t and s_t = R_tᵀ p_t.
inline ShapeCoefficient optimal_shape_body(const std::vector<Rotation>& rotations,
                                           const std::vector<Vec3>& body_positions,
                                           const MeasurementSet& meas, const ShapeLibrary& lib,
                                           const ShapeOperators& ops) {
  const int horizon = meas.horizon();
  const int k = lib.num_models();
  require_dims(static_cast<int>(rotations.size()) == horizon &&
                   static_cast<int>(body_positions.size()) == horizon,
               "poses vs measurement horizon");
  require_dims(ops.horizon() == horizon && ops.num_models() == k, "shape operators");
  require_dims(meas.keypoints() == lib.num_keypoints(), "measurements vs library");

  Eigen::VectorXd rhs = Eigen::VectorXd::Constant(k, ops.lambda / k);
  for (int t = 0; t < horizon; ++t) {
    const Mat3& r = rotations[t].matrix();
    for (int i = 0; i < meas.keypoints(); ++i) {
      const double w = ops.weights(t, i);
      if (w == 0.0) continue;
      const Vec3 body = r.transpose() * meas.y(t, i) - body_positions[t];
      rhs.noalias() += w * lib.block(i).transpose() * body;
    }
  }
  Eigen::VectorXd c = 2.0 * ops.g_mat * rhs + ops.g_vec;
  // Rounding leaves 1ᵀc within ~1e-15 of one; renormalise the residual away.
  c += Eigen::VectorXd::Constant(k, (1.0 - c.sum()) / k);
  return ShapeCoefficient(c, 1e-9);
}

inline ShapeCoefficient optimal_shape(const Trajectory& traj, const MeasurementSet& meas,
                                      const ShapeLibrary& lib, const ShapeOperators& ops) {
  std::vector<Rotation> rotations;
  std::vector<Vec3> body;
  for (const auto& s : traj) {
    rotations.push_back(s.rotation);
    body.push_back(s.rotation.matrix().transpose() * s.position);
  }
  return optimal_shape_body(rotations, body, meas, lib, ops);
}

/// x_i = B_i c for every keypoint.
inline std::vector<Vec3> reconstruct_keypoints(const ShapeLibrary& lib, const ShapeCoefficient& c) {
  require_dims(c.size() == lib.num_models(), "shape coefficient vs library");
  std::vector<Vec3> points;
  points.reserve(static_cast<std::size_t>(lib.num_keypoints()));
  for (int i = 0; i < lib.num_keypoints(); ++i) points.emplace_back(lib.block(i) * c.vector());
  return points;
}

}  // namespace cast

#endif  // CAST_SHAPE_HPP
