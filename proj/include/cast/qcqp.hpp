#ifndef CAST_QCQP_HPP
#define CAST_QCQP_HPP

// Canonical QCQP over a horizon of T frames:
//
//   min  xᵀQx + vᵀPv   s.t.  xᵀA_i x + d_iᵀv + f_i = 0
//
// x stacks vec(R_t) (t < T), vec(Ω_t) (t < T-1), s_t = R_tᵀp_t (t < T) and a
// homogenizing scalar h, for D = 21T - 8 entries. v stacks the body
// velocities v_t (t < T-1). Rotations are vectorized column-major.
// The shape coefficient is eliminated through its closed form, which is
// linear in x.

#include "cast/core.hpp"
#include "cast/shape.hpp"

#include <Eigen/Sparse>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <tuple>
#include <sstream>
#include <string>

namespace cast {

class HorizonError : public Error {
 public:
  using Error::Error;
};

struct VariableLayout {
  int horizon = 0;

  int dim() const { return 21 * horizon - 8; }
  int linear_dim() const { return 3 * horizon - 3; }

  int rotation(int t) const { return 9 * t; }
  int rotation_rate(int t) const { return 9 * horizon + 9 * t; }
  int body_position(int t) const { return 18 * horizon - 9 + 3 * t; }
  int homogenizer() const { return 21 * horizon - 9; }
  int velocity(int t) const { return 3 * t; }

  /// Index of entry (row, col) of a rotation block starting at `base`.
  static int entry(int base, int row, int col) { return base + 3 * col + row; }
};

inline VariableLayout build_layout(int horizon) {
  if (horizon < 2) throw HorizonError("horizon must be at least 2");
  return VariableLayout{horizon};
}

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Accumulates a symmetric quadratic form from bilinear monomials.
class QuadraticFormBuilder {
 public:
  explicit QuadraticFormBuilder(int dim) : dim_(dim) {}

  /// Adds coef · x_i x_j to the form.
  void add(int i, int j, double coef) {
    if (i == j) {
      triplets_.emplace_back(i, i, coef);
    } else {
      triplets_.emplace_back(i, j, 0.5 * coef);
      triplets_.emplace_back(j, i, 0.5 * coef);
    }
  }

  SparseMatrix build() const {
    SparseMatrix m(dim_, dim_);
    m.setFromTriplets(triplets_.begin(), triplets_.end());
    m.prune(0.0);
    return m;
  }

 private:
  int dim_;
  std::vector<Eigen::Triplet<double>> triplets_;
};

struct QuadraticConstraint {
  SparseMatrix a;          // D x D symmetric
  Eigen::VectorXd d;       // linear coefficients on v
  double f = 0.0;
  std::string kind;
};

struct QcqpProblem {
  Eigen::MatrixXd q;  // D x D
  Eigen::MatrixXd p;  // (3T-3) x (3T-3)
  std::vector<QuadraticConstraint> constraints;
  VariableLayout layout;

  double objective(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    return x.dot(q * x) + v.dot(p * v);
  }
  double constraint_residual(std::size_t i, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    const auto& c = constraints[i];
    return x.dot(c.a * x) + c.d.dot(v) + c.f;
  }
  double max_constraint_violation(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    double worst = 0.0;
    for (std::size_t i = 0; i < constraints.size(); ++i) {
      worst = std::max(worst, std::abs(constraint_residual(i, x, v)));
    }
    return worst;
  }
};

/// Affine map x -> c* (K x D) realizing the closed-form optimal shape in the
/// body-frame variables. The constant part multiplies the homogenizer.
inline Eigen::MatrixXd shape_map(const MeasurementSet& meas, const ShapeLibrary& lib,
                                 const ShapeOperators& ops, const VariableLayout& layout) {
  const int k = lib.num_models();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k, layout.dim());
  rhs.col(layout.homogenizer()) = Eigen::VectorXd::Constant(k, ops.lambda / k);
  for (int t = 0; t < meas.horizon(); ++t) {
    for (int i = 0; i < meas.keypoints(); ++i) {
      const double w = ops.weights(t, i);
      if (w == 0.0) continue;
      const Eigen::MatrixXd bt = w * lib.block(i).transpose();  // K x 3
      const Vec3& y = meas.y(t, i);
      // (R_tᵀ y)_a = sum_b R(b, a) y_b
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          rhs.col(VariableLayout::entry(layout.rotation(t), b, a)) += bt.col(a) * y(b);
        }
        rhs.col(layout.body_position(t) + a) -= bt.col(a);
      }
    }
  }
  Eigen::MatrixXd map = 2.0 * ops.g_mat * rhs;
  map.col(layout.homogenizer()) += ops.g_vec;
  return map;
}

/// Objective matrices (Q, P). Each residual is written as a linear map of x and
/// its Gram contribution is accumulated.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_objective(const MeasurementSet& meas,
                                                                   const ShapeLibrary& lib,
                                                                   const ShapeOperators& ops,
                                                                   const SmootherWeights& weights,
                                                                   const VariableLayout& layout) {
  require_dims(meas.horizon() == layout.horizon, "measurements vs layout horizon");
  require_dims(ops.horizon() == layout.horizon && ops.num_models() == lib.num_models(),
               "shape operators vs layout");
  require_dims(meas.keypoints() == lib.num_keypoints(), "measurements vs library");
  weights.validate(layout.horizon);

  const int dim = layout.dim();
  const int k = lib.num_models();
  const Eigen::MatrixXd c_map = shape_map(meas, lib, ops, layout);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(dim, dim);

  Eigen::MatrixXd residual(3, dim);
  for (int t = 0; t < meas.horizon(); ++t) {
    for (int i = 0; i < meas.keypoints(); ++i) {
      const double w = ops.weights(t, i);
      if (w == 0.0) continue;
      // R_tᵀ y - B_i c - s_t
      residual.noalias() = -lib.block(i) * c_map;
      const Vec3& y = meas.y(t, i);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) residual(a, VariableLayout::entry(layout.rotation(t), b, a)) += y(b);
        residual(a, layout.body_position(t) + a) -= 1.0;
      }
      q.selfadjointView<Eigen::Lower>().rankUpdate(residual.transpose(), w);
    }
  }
  if (weights.lambda > 0.0) {
    Eigen::MatrixXd prior = c_map;
    prior.col(layout.homogenizer()).array() -= 1.0 / k;
    q.selfadjointView<Eigen::Lower>().rankUpdate(prior.transpose(), weights.lambda);
  }
  q = q.selfadjointView<Eigen::Lower>();

  for (int t = 0; t + 2 < layout.horizon; ++t) {
    const double kappa = weights.rotation_rate[t];
    if (kappa == 0.0) continue;
    for (int e = 0; e < 9; ++e) {
      const int a = layout.rotation_rate(t) + e;
      const int b = layout.rotation_rate(t + 1) + e;
      q(a, a) += kappa;
      q(b, b) += kappa;
      q(a, b) -= kappa;
      q(b, a) -= kappa;
    }
  }

  const int nv = layout.linear_dim();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nv, nv);
  for (int t = 0; t + 2 < layout.horizon; ++t) {
    const double omega = weights.velocity[t];
    for (int e = 0; e < 3; ++e) {
      const int a = layout.velocity(t) + e;
      const int b = layout.velocity(t + 1) + e;
      p(a, a) += omega;
      p(b, b) += omega;
      p(a, b) -= omega;
      p(b, a) -= omega;
    }
  }
  return {q, p};
}

namespace detail {

inline void emit_rotation_block(int base, int h, int dim, int nv, std::vector<QuadraticConstraint>& out) {
  auto make = [&](const char* kind) {
    QuadraticConstraint c;
    c.d = Eigen::VectorXd::Zero(nv);
    c.kind = kind;
    return std::pair{QuadraticFormBuilder(dim), c};
  };
  auto at = [base](int row, int col) { return VariableLayout::entry(base, row, col); };

  // Columns: c_aᵀ c_b = δ_ab h².
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b) {
      auto [form, c] = make("so3_columns");
      for (int r = 0; r < 3; ++r) form.add(at(r, a), at(r, b), 1.0);
      if (a == b) form.add(h, h, -1.0);
      c.a = form.build();
      out.push_back(std::move(c));
    }
  }
  // Rows: r_aᵀ r_b = δ_ab h².
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b) {
      auto [form, c] = make("so3_rows");
      for (int col = 0; col < 3; ++col) form.add(at(a, col), at(b, col), 1.0);
      if (a == b) form.add(h, h, -1.0);
      c.a = form.build();
      out.push_back(std::move(c));
    }
  }
  // Handedness: c_i × c_j = h c_k for cyclic (i, j, k).
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3;
    const int k = (i + 2) % 3;
    for (int r = 0; r < 3; ++r) {
      const int r1 = (r + 1) % 3;
      const int r2 = (r + 2) % 3;
      auto [form, c] = make("so3_handedness");
      form.add(at(r1, i), at(r2, j), 1.0);
      form.add(at(r2, i), at(r1, j), -1.0);
      form.add(h, at(r, k), -1.0);
      c.a = form.build();
      out.push_back(std::move(c));
    }
  }
}

}  // namespace detail

/// Homogenization, SO(3) (columns, rows, handedness) for every R_t and Ω_t,
/// translation dynamics Ω_t s_{t+1} - s_t - v_t = 0 and rotation dynamics
/// R_{t+1} - R_t Ω_t = 0.
inline std::vector<QuadraticConstraint> build_constraints(const VariableLayout& layout) {
  const int dim = layout.dim();
  const int nv = layout.linear_dim();
  const int h = layout.homogenizer();
  const int horizon = layout.horizon;
  std::vector<QuadraticConstraint> out;
  out.reserve(static_cast<std::size_t>(1 + 21 * (2 * horizon - 1) + 12 * (horizon - 1)));

  {
    QuadraticFormBuilder form(dim);
    form.add(h, h, 1.0);
    out.push_back({form.build(), Eigen::VectorXd::Zero(nv), -1.0, "homogenization"});
  }
  for (int t = 0; t < horizon; ++t) detail::emit_rotation_block(layout.rotation(t), h, dim, nv, out);
  for (int t = 0; t + 1 < horizon; ++t) detail::emit_rotation_block(layout.rotation_rate(t), h, dim, nv, out);

  for (int t = 0; t + 1 < horizon; ++t) {
    for (int a = 0; a < 3; ++a) {
      QuadraticFormBuilder form(dim);
      for (int b = 0; b < 3; ++b) {
        form.add(VariableLayout::entry(layout.rotation_rate(t), a, b), layout.body_position(t + 1) + b, 1.0);
      }
      form.add(h, layout.body_position(t) + a, -1.0);
      QuadraticConstraint c{form.build(), Eigen::VectorXd::Zero(nv), 0.0, "translation_dynamics"};
      c.d(layout.velocity(t) + a) = -1.0;
      out.push_back(std::move(c));
    }
  }
  for (int t = 0; t + 1 < horizon; ++t) {
    for (int col = 0; col < 3; ++col) {
      for (int row = 0; row < 3; ++row) {
        QuadraticFormBuilder form(dim);
        form.add(h, VariableLayout::entry(layout.rotation(t + 1), row, col), 1.0);
        for (int k = 0; k < 3; ++k) {
          form.add(VariableLayout::entry(layout.rotation(t), row, k),
                   VariableLayout::entry(layout.rotation_rate(t), k, col), -1.0);
        }
        out.push_back({form.build(), Eigen::VectorXd::Zero(nv), 0.0, "rotation_dynamics"});
      }
    }
  }
  return out;
}

inline std::size_t expected_constraint_count(int horizon) {
  return static_cast<std::size_t>(1 + 21 * (2 * horizon - 1) + 12 * (horizon - 1));
}

inline QcqpProblem build_qcqp(const MeasurementSet& meas, const ShapeLibrary& lib,
                              const ShapeOperators& ops, const SmootherWeights& weights) {
  QcqpProblem prob;
  prob.layout = build_layout(meas.horizon());
  std::tie(prob.q, prob.p) = build_objective(meas, lib, ops, weights, prob.layout);
  prob.constraints = build_constraints(prob.layout);
  return prob;
}

struct LiftedPoint {
  Eigen::VectorXd x;
  Eigen::VectorXd v;
};

/// States -> (x, v) with h = 1. Uses the stored rotation rates and velocities.
inline LiftedPoint lift(const Trajectory& traj, const VariableLayout& layout) {
  require_dims(static_cast<int>(traj.size()) == layout.horizon, "trajectory vs layout");
  LiftedPoint pt{Eigen::VectorXd::Zero(layout.dim()), Eigen::VectorXd::Zero(layout.linear_dim())};
  for (int t = 0; t < layout.horizon; ++t) {
    const Mat3& r = traj[t].rotation.matrix();
    pt.x.segment<9>(layout.rotation(t)) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(r.data());
    pt.x.segment<3>(layout.body_position(t)) = r.transpose() * traj[t].position;
    if (t + 1 < layout.horizon) {
      const Mat3& om = traj[t].rotation_rate.matrix();
      pt.x.segment<9>(layout.rotation_rate(t)) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(om.data());
      pt.v.segment<3>(layout.velocity(t)) = traj[t].velocity;
    }
  }
  pt.x(layout.homogenizer()) = 1.0;
  return pt;
}

inline Mat3 block_matrix(const Eigen::VectorXd& x, int base) {
  return Eigen::Map<const Mat3>(x.data() + base);
}

/// (x, v) with h = 1 and exact rotation blocks -> states. The final state
/// repeats the last twist.
inline Trajectory unlift(const LiftedPoint& pt, const VariableLayout& layout) {
  require_dims(pt.x.size() == layout.dim() && pt.v.size() == layout.linear_dim(), "lifted point");
  Trajectory traj;
  for (int t = 0; t < layout.horizon; ++t) {
    const Rotation r = project_to_so3(block_matrix(pt.x, layout.rotation(t)));
    const int tw = std::min(t, layout.horizon - 2);
    const Rotation om = project_to_so3(block_matrix(pt.x, layout.rotation_rate(tw)));
    const Vec3 s = pt.x.segment<3>(layout.body_position(t));
    ObjectState st = ObjectState::make(r, r.matrix() * s, pt.v.segment<3>(layout.velocity(tw)), om);
    traj.push_back(st);
  }
  return traj;
}

// Sparse-triplet text dump. Indices are 0-based; symmetric matrices list the
// upper triangle only. Values are written with 17 significant digits.
//
//   cast-qcqp 1
//   dims <D> <nv> <m> <T>
//   matrix Q <nnz>          then <row> <col> <value> lines
//   matrix P <nnz>
//   constraint <i> <kind> <nnz_A> <nnz_d> <f>
//                          then nnz_A "<row> <col> <value>", nnz_d "<index> <value>"
//   point                   optional: D values of x then nv values of v
//   end

namespace detail {

inline void write_upper(std::ostream& os, const Eigen::MatrixXd& m) {
  std::vector<std::tuple<int, int, double>> entries;
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r <= c; ++r)
      if (m(r, c) != 0.0) entries.emplace_back(r, c, m(r, c));
  os << entries.size() << "\n";
  for (const auto& [r, c, v] : entries) os << r << " " << c << " " << v << "\n";
}

}  // namespace detail

inline void write_problem_dump(std::ostream& os, const QcqpProblem& prob,
                               const LiftedPoint* point = nullptr) {
  os << std::setprecision(17);
  os << "cast-qcqp 1\n";
  os << "dims " << prob.layout.dim() << " " << prob.layout.linear_dim() << " " << prob.constraints.size()
     << " " << prob.layout.horizon << "\n";
  os << "matrix Q ";
  detail::write_upper(os, prob.q);
  os << "matrix P ";
  detail::write_upper(os, prob.p);
  for (std::size_t i = 0; i < prob.constraints.size(); ++i) {
    const auto& c = prob.constraints[i];
    std::vector<std::tuple<int, int, double>> a;
    for (int col = 0; col < c.a.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(c.a, col); it; ++it)
        if (it.row() <= it.col()) a.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    std::vector<std::pair<int, double>> d;
    for (int j = 0; j < c.d.size(); ++j)
      if (c.d(j) != 0.0) d.emplace_back(j, c.d(j));
    os << "constraint " << i << " " << c.kind << " " << a.size() << " " << d.size() << " " << c.f << "\n";
    for (const auto& [r, col, v] : a) os << r << " " << col << " " << v << "\n";
    for (const auto& [j, v] : d) os << j << " " << v << "\n";
  }
  if (point != nullptr) {
    os << "point\n";
    for (int j = 0; j < point->x.size(); ++j) os << point->x(j) << "\n";
    for (int j = 0; j < point->v.size(); ++j) os << point->v(j) << "\n";
  }
  os << "end\n";
}

struct ProblemDump {
  QcqpProblem problem;
  std::optional<LiftedPoint> point;
};

inline ProblemDump read_problem_dump(std::istream& is) {
  auto fail = [](const std::string& what) -> void { throw InvalidArgumentError("problem dump: " + what); };
  std::string word;
  int version = 0;
  if (!(is >> word >> version) || word != "cast-qcqp" || version != 1) fail("bad header");
  int dim = 0;
  int nv = 0;
  std::size_t m = 0;
  int horizon = 0;
  if (!(is >> word >> dim >> nv >> m >> horizon) || word != "dims") fail("bad dims line");
  if (horizon < 2 || dim != 21 * horizon - 8 || nv != 3 * horizon - 3) fail("inconsistent dims");

  ProblemDump dump;
  dump.problem.layout = build_layout(horizon);
  auto read_sym = [&](const char* name, int n) {
    std::string tag;
    std::size_t nnz = 0;
    if (!(is >> word >> tag >> nnz) || word != "matrix" || tag != name) fail(std::string("expected matrix ") + name);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t e = 0; e < nnz; ++e) {
      int r = 0;
      int c = 0;
      double v = 0.0;
      if (!(is >> r >> c >> v) || r < 0 || c < 0 || r >= n || c >= n) fail("bad matrix entry");
      out(r, c) = v;
      out(c, r) = v;
    }
    return out;
  };
  dump.problem.q = read_sym("Q", dim);
  dump.problem.p = read_sym("P", nv);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t idx = 0;
    std::size_t nnz_a = 0;
    std::size_t nnz_d = 0;
    QuadraticConstraint c;
    if (!(is >> word >> idx >> c.kind >> nnz_a >> nnz_d >> c.f) || word != "constraint" || idx != i) {
      fail("bad constraint header");
    }
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t e = 0; e < nnz_a; ++e) {
      int r = 0;
      int col = 0;
      double v = 0.0;
      if (!(is >> r >> col >> v) || r < 0 || col < 0 || r >= dim || col >= dim) fail("bad constraint entry");
      trip.emplace_back(r, col, v);
      if (r != col) trip.emplace_back(col, r, v);
    }
    c.a = SparseMatrix(dim, dim);
    c.a.setFromTriplets(trip.begin(), trip.end());
    c.d = Eigen::VectorXd::Zero(nv);
    for (std::size_t e = 0; e < nnz_d; ++e) {
      int j = 0;
      double v = 0.0;
      if (!(is >> j >> v) || j < 0 || j >= nv) fail("bad linear entry");
      c.d(j) = v;
    }
    dump.problem.constraints.push_back(std::move(c));
  }
  if (!(is >> word)) fail("missing end");
  if (word == "point") {
    LiftedPoint pt{Eigen::VectorXd(dim), Eigen::VectorXd(nv)};
    for (int j = 0; j < dim; ++j)
      if (!(is >> pt.x(j))) fail("bad point");
    for (int j = 0; j < nv; ++j)
      if (!(is >> pt.v(j))) fail("bad point");
    dump.point = std::move(pt);
    if (!(is >> word)) fail("missing end");
  }
  if (word != "end") fail("missing end");
  return dump;
}

}  // namespace cast

#endif  // CAST_QCQP_HPP
