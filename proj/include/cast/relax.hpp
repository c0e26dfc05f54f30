#ifndef CAST_RELAX_HPP
#define CAST_RELAX_HPP

// Shor relaxation of the tracking QCQP, rounding of its solution to a feasible
// trajectory, and the suboptimality-gap certificate.

#include "cast/core.hpp"
#include "cast/qcqp.hpp"
#include "cast/sdp.hpp"
#include "cast/shape.hpp"

#include "json.hpp"

#include <optional>

namespace cast {

struct SdpSolution {
  sdp::Solution raw;
  Eigen::VectorXd spectrum;  // eigenvalues of X, descending
  double lower_bound = 0.0;

  bool ok() const { return sdp::usable(raw.status); }
};

struct Certificate {
  double f_hat = 0.0;
  double f_sdp = 0.0;
  double gap = 0.0;
  double rel_gap = 0.0;
  double rank1_ratio = 0.0;
  bool tight = false;
};

inline void to_json(nlohmann::json& j, const Certificate& c) {
  j = nlohmann::json{{"f_hat", c.f_hat}, {"f_sdp", c.f_sdp}, {"gap", c.gap},
                     {"rel_gap", c.rel_gap}, {"rank1_ratio", c.rank1_ratio}, {"tight", c.tight}};
}

inline void from_json(const nlohmann::json& j, Certificate& c) {
  j.at("f_hat").get_to(c.f_hat);
  j.at("f_sdp").get_to(c.f_sdp);
  j.at("gap").get_to(c.gap);
  j.at("rel_gap").get_to(c.rel_gap);
  j.at("rank1_ratio").get_to(c.rank1_ratio);
  j.at("tight").get_to(c.tight);
}

/// One PSD block of order D, free v, one equality per QCQP constraint:
/// trace(A_i X) + d_iᵀv = -f_i.
inline sdp::Program assemble_sdp(const QcqpProblem& prob) {
  sdp::Program prog;
  prog.c = prob.q;
  prog.p = prob.p;
  const auto m = static_cast<Eigen::Index>(prob.constraints.size());
  prog.d = Eigen::MatrixXd::Zero(m, prob.layout.linear_dim());
  prog.b = Eigen::VectorXd::Zero(m);
  prog.a.reserve(prob.constraints.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = prob.constraints[static_cast<std::size_t>(i)];
    prog.a.push_back(c.a);
    prog.d.row(i) = c.d.transpose();
    prog.b(i) = -c.f;
  }
  return prog;
}

inline SdpSolution solve_sdp(const sdp::Program& prog, const sdp::Settings& settings = {}) {
  SdpSolution sol;
  sol.raw = sdp::solve(prog, settings);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.raw.x, Eigen::EigenvaluesOnly);
  sol.spectrum = es.eigenvalues().reverse();
  sol.lower_bound = sol.raw.dual_objective;
  return sol;
}

inline double rank1_ratio(const Eigen::VectorXd& spectrum) {
  if (spectrum.size() < 2) return std::numeric_limits<double>::infinity();
  const double l1 = spectrum(0);
  const double l2 = std::max(std::abs(spectrum(1)), 1e-16 * std::abs(l1));
  return l1 / l2;
}

struct RoundedSolution {
  Trajectory trajectory;
  ShapeCoefficient shape;
  double f_hat = 0.0;
  LiftedPoint lifted;
};

/// Leading eigenvector of X scaled to h = +1, rotation blocks projected onto
/// SO(3), Ω_t = R_tᵀR_{t+1} and v_t = Ω_t s_{t+1} - s_t. The result satisfies
/// every QCQP constraint.
inline Trajectory round_poses(const Eigen::MatrixXd& x_mat, const VariableLayout& layout) {
  require_dims(x_mat.rows() == layout.dim() && x_mat.cols() == layout.dim(), "sdp matrix vs layout");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x_mat);
  const Eigen::Index top = x_mat.rows() - 1;
  Eigen::VectorXd x = es.eigenvectors().col(top) * std::sqrt(std::max(es.eigenvalues()(top), 0.0));
  const double h = x(layout.homogenizer());
  if (std::abs(h) < 1e-6) throw DegenerateMatrixError("leading eigenvector has vanishing homogenizer");
  x /= h;

  const int horizon = layout.horizon;
  std::vector<Rotation> rot;
  std::vector<Vec3> body;
  for (int t = 0; t < horizon; ++t) {
    rot.push_back(project_to_so3(block_matrix(x, layout.rotation(t))));
    body.push_back(x.segment<3>(layout.body_position(t)));
  }
  Trajectory traj;
  for (int t = 0; t < horizon; ++t) {
    const int tw = std::min(t, horizon - 2);
    const Rotation omega(rot[tw].matrix().transpose() * rot[tw + 1].matrix(), 1e-8);
    const Vec3 v = omega.matrix() * body[tw + 1] - body[tw];
    traj.push_back(ObjectState::make(rot[t], rot[t].matrix() * body[t], v, omega));
  }
  return traj;
}

/// Rounded poses, the optimal shape for them, and the objective there.
inline RoundedSolution round_solution(const Eigen::MatrixXd& x_mat, const VariableLayout& layout,
                                      const MeasurementSet& meas, const ShapeLibrary& lib,
                                      const ShapeOperators& ops, const SmootherWeights& weights) {
  Trajectory traj = round_poses(x_mat, layout);
  ShapeCoefficient shape = optimal_shape(traj, meas, lib, ops);
  RoundedSolution out{traj, shape, 0.0, lift(traj, layout)};
  out.f_hat = evaluate_objective(out.trajectory, out.shape, meas, lib, weights);
  return out;
}

/// Raises InconsistencyError when the bound exceeds the rounded objective by more
/// than 1e-6 (relative to max(1, |f̂|)), which would contradict the relaxation.
inline Certificate certify(double f_hat, double f_sdp, double rank1, double tight_threshold = 1e-4) {
  if (!std::isfinite(f_hat) || !std::isfinite(f_sdp)) throw InvalidArgumentError("certify: non-finite input");
  Certificate c;
  c.f_hat = f_hat;
  c.f_sdp = f_sdp;
  c.gap = f_hat - f_sdp;
  c.rel_gap = c.gap / std::max(1.0, std::abs(f_hat));
  c.rank1_ratio = rank1;
  c.tight = c.rel_gap < tight_threshold;
  if (c.rel_gap < -1e-6) {
    throw InconsistencyError("negative suboptimality gap " + std::to_string(c.gap) +
                             ": lower bound exceeds a feasible objective");
  }
  return c;
}

inline Certificate certify(double f_hat, const SdpSolution& sol, double tight_threshold = 1e-4) {
  return certify(f_hat, sol.lower_bound, rank1_ratio(sol.spectrum), tight_threshold);
}

struct SolverOptions {
  sdp::Settings sdp;
  double tight_threshold = 1e-4;
};

struct Estimate {
  Trajectory trajectory;
  ShapeCoefficient shape;
  Certificate certificate;
  sdp::Status status = sdp::Status::NumericalFailure;
  int sdp_iterations = 0;
  double solve_seconds = 0.0;
  bool negative_shape = false;
};

/// Outlier-free certifiable estimate for one horizon of measurements.
inline Estimate solve_certifiable(const MeasurementSet& meas, const ShapeLibrary& lib,
                                  const SmootherWeights& weights, const SolverOptions& opts = {}) {
  const ShapeOperators ops = precompute_shape_operators(lib, meas, weights);
  const QcqpProblem prob = build_qcqp(meas, lib, ops, weights);
  const SdpSolution sol = solve_sdp(assemble_sdp(prob), opts.sdp);
  RoundedSolution rounded = round_solution(sol.raw.x, prob.layout, meas, lib, ops, weights);
  Estimate est;
  est.trajectory = std::move(rounded.trajectory);
  est.shape = rounded.shape;
  est.certificate = certify(rounded.f_hat, sol, opts.tight_threshold);
  est.status = sol.raw.status;
  est.sdp_iterations = sol.raw.iterations;
  est.solve_seconds = sol.raw.solve_seconds;
  est.negative_shape = est.shape.has_negative();
  return est;
}

struct ProblemCertificate {
  Certificate certificate;
  sdp::Status status = sdp::Status::NumericalFailure;
  double max_violation = 0.0;  // of the point whose value is f̂
  bool from_dump_point = false;
};

/// Certificate for a bare QCQP. f̂ is the value at the supplied point when it
/// is feasible to `feasibility_tol`, otherwise at the rounded SDP solution.
inline ProblemCertificate certify_problem(const QcqpProblem& prob, const std::optional<LiftedPoint>& point,
                                          const SolverOptions& opts = {}, double feasibility_tol = 1e-8) {
  const SdpSolution sol = solve_sdp(assemble_sdp(prob), opts.sdp);
  ProblemCertificate out;
  out.status = sol.raw.status;
  LiftedPoint candidate;
  if (point && prob.max_constraint_violation(point->x, point->v) <= feasibility_tol) {
    candidate = *point;
    out.from_dump_point = true;
  } else {
    candidate = lift(round_poses(sol.raw.x, prob.layout), prob.layout);
  }
  out.max_violation = prob.max_constraint_violation(candidate.x, candidate.v);
  out.certificate = certify(prob.objective(candidate.x, candidate.v), sol, opts.tight_threshold);
  return out;
}

}  // namespace cast

#endif  // CAST_RELAX_HPP
