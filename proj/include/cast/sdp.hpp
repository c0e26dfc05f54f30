#ifndef CAST_SDP_HPP
#define CAST_SDP_HPP

// Primal-dual interior-point solver for semidefinite programs with one PSD
// block and a block of free variables carrying a convex quadratic cost:
//
//   min  <C, X> + vᵀPv   s.t.  <A_i, X> + d_iᵀv = b_i,   X ⪰ 0
//
// Dual:  max  bᵀy - vᵀPv   s.t.  S = C - Σ y_i A_i ⪰ 0,  Dᵀy = 2Pv.
//
// Search directions use the HKM scaling with Mehrotra's predictor-corrector.
// Rows are normalized and linearly dependent rows are dropped before the
// iteration starts.

#include "cast/core.hpp"

#include <Eigen/Sparse>

#include <chrono>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace cast::sdp {

struct Program {
  Eigen::MatrixXd c;                             // n x n symmetric
  Eigen::MatrixXd p;                             // nv x nv symmetric PSD
  std::vector<Eigen::SparseMatrix<double>> a;    // m symmetric n x n
  Eigen::MatrixXd d;                             // m x nv
  Eigen::VectorXd b;                             // m

  int dim() const { return static_cast<int>(c.rows()); }
  int free_dim() const { return static_cast<int>(p.rows()); }
  int num_constraints() const { return static_cast<int>(a.size()); }
};

struct Settings {
  double tolerance = 1e-9;
  int max_iterations = 100;
  double step_fraction = 0.98;
  double dependency_tolerance = 1e-10;
  // Accepted when progress stalls before `tolerance` is reached.
  double acceptable_tolerance = 1e-6;
  int stall_iterations = 6;
  int refinement_steps = 2;
  bool verbose = false;
};

enum class Status { Optimal, NearOptimal, MaxIterations, NumericalFailure };

inline bool usable(Status s) { return s == Status::Optimal || s == Status::NearOptimal; }

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::NearOptimal: return "near_optimal";
    case Status::MaxIterations: return "max_iterations";
    case Status::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct Solution {
  Status status = Status::NumericalFailure;
  Eigen::MatrixXd x;
  Eigen::VectorXd v;
  Eigen::VectorXd y;
  Eigen::MatrixXd s;
  double primal_objective = std::numeric_limits<double>::quiet_NaN();
  double dual_objective = std::numeric_limits<double>::quiet_NaN();
  double primal_infeasibility = std::numeric_limits<double>::infinity();
  double dual_infeasibility = std::numeric_limits<double>::infinity();
  double relative_gap = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int dropped_constraints = 0;
  double solve_seconds = 0.0;
};

namespace detail {

struct Entry {
  int row;
  int col;
  double value;
};

using EntryList = std::vector<Entry>;

inline EntryList entries_of(const Eigen::SparseMatrix<double>& a, double scale) {
  EntryList out;
  for (int k = 0; k < a.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it)
      if (it.value() != 0.0) out.push_back({static_cast<int>(it.row()), static_cast<int>(it.col()), it.value() * scale});
  return out;
}

inline double apply(const EntryList& a, const Eigen::MatrixXd& x) {
  double s = 0.0;
  for (const auto& e : a) s += e.value * x(e.row, e.col);
  return s;
}

inline void accumulate(const EntryList& a, double coef, Eigen::MatrixXd& out) {
  for (const auto& e : a) out(e.row, e.col) += coef * e.value;
}

/// Indices of a maximal linearly independent subset of rows, found by
/// pivoted Cholesky on the Gram matrix.
inline std::vector<int> independent_rows(const Eigen::MatrixXd& gram, double tol) {
  const int m = static_cast<int>(gram.rows());
  Eigen::VectorXd diag = gram.diagonal();
  const double scale = std::max(1.0, diag.maxCoeff());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  std::vector<int> chosen;
  std::vector<bool> used(static_cast<std::size_t>(m), false);
  for (int k = 0; k < m; ++k) {
    int best = -1;
    double best_val = tol * scale;
    for (int i = 0; i < m; ++i) {
      if (!used[static_cast<std::size_t>(i)] && diag(i) > best_val) {
        best = i;
        best_val = diag(i);
      }
    }
    if (best < 0) break;
    used[static_cast<std::size_t>(best)] = true;
    const double piv = std::sqrt(diag(best));
    const int col = static_cast<int>(chosen.size());
    for (int i = 0; i < m; ++i) {
      if (used[static_cast<std::size_t>(i)] && i != best) continue;
      double val = gram(i, best);
      for (int j = 0; j < col; ++j) val -= l(i, j) * l(best, j);
      l(i, col) = val / piv;
    }
    for (int i = 0; i < m; ++i)
      if (!used[static_cast<std::size_t>(i)]) diag(i) -= l(i, col) * l(i, col);
    chosen.push_back(best);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// Largest step in (0, inf] keeping M + α dM positive semidefinite, given the
/// Cholesky factor of M.
inline double max_step(const Eigen::LLT<Eigen::MatrixXd>& chol, const Eigen::MatrixXd& dm) {
  Eigen::MatrixXd t = chol.matrixL().solve(dm);
  t = chol.matrixL().solve(t.transpose()).transpose();
  t = 0.5 * (t + t.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  return lmin < 0.0 ? -1.0 / lmin : std::numeric_limits<double>::infinity();
}

inline Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

inline Solution solve(const Program& prog, const Settings& settings = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto start = std::chrono::steady_clock::now();

  const int n = prog.dim();
  const int nv = prog.free_dim();
  const int m_all = prog.num_constraints();
  require_dims(prog.c.cols() == n && prog.p.cols() == nv, "sdp cost blocks");
  require_dims(prog.d.rows() == m_all && prog.d.cols() == nv && prog.b.size() == m_all, "sdp constraint data");

  Solution sol;

  // Row normalization.
  std::vector<double> row_norm(static_cast<std::size_t>(m_all));
  for (int i = 0; i < m_all; ++i) {
    row_norm[static_cast<std::size_t>(i)] =
        std::sqrt(prog.a[static_cast<std::size_t>(i)].squaredNorm() + prog.d.row(i).squaredNorm());
  }

  // Dependent rows.
  std::vector<int> nonzero;
  for (int i = 0; i < m_all; ++i)
    if (row_norm[static_cast<std::size_t>(i)] > 0.0) nonzero.push_back(i);
  std::vector<int> keep;
  {
    const int mz = static_cast<int>(nonzero.size());
    std::vector<Eigen::Triplet<double>> trip;
    for (int r = 0; r < mz; ++r) {
      const int i = nonzero[static_cast<std::size_t>(r)];
      const double s = 1.0 / row_norm[static_cast<std::size_t>(i)];
      const auto& a = prog.a[static_cast<std::size_t>(i)];
      for (int k = 0; k < a.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it)
          trip.emplace_back(r, static_cast<int>(it.col() * n + it.row()), it.value() * s);
      for (int j = 0; j < nv; ++j)
        if (prog.d(i, j) != 0.0) trip.emplace_back(r, n * n + j, prog.d(i, j) * s);
    }
    Eigen::SparseMatrix<double> rows(mz, n * n + nv);
    rows.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseMatrix<double> gram_sparse = rows * rows.transpose();
    const MatrixXd gram(gram_sparse);
    for (int r : detail::independent_rows(gram, settings.dependency_tolerance)) {
      keep.push_back(nonzero[static_cast<std::size_t>(r)]);
    }
  }
  const int m = static_cast<int>(keep.size());
  sol.dropped_constraints = m_all - m;

  std::vector<detail::EntryList> a(static_cast<std::size_t>(m));
  MatrixXd d(m, nv);
  VectorXd b(m);
  for (int r = 0; r < m; ++r) {
    const int i = keep[static_cast<std::size_t>(r)];
    const double s = 1.0 / row_norm[static_cast<std::size_t>(i)];
    a[static_cast<std::size_t>(r)] = detail::entries_of(prog.a[static_cast<std::size_t>(i)], s);
    d.row(r) = prog.d.row(i) * s;
    b(r) = prog.b(i) * s;
  }

  // Objective scaling.
  const double obj_scale = std::max({prog.c.norm(), prog.p.norm(), 1e-12});
  const MatrixXd c = detail::sym(prog.c) / obj_scale;
  const MatrixXd p = detail::sym(prog.p) / obj_scale;

  auto op_a = [&](const MatrixXd& x) {
    VectorXd out(m);
    for (int r = 0; r < m; ++r) out(r) = detail::apply(a[static_cast<std::size_t>(r)], x);
    return out;
  };
  auto op_at = [&](const VectorXd& y) {
    MatrixXd out = MatrixXd::Zero(n, n);
    for (int r = 0; r < m; ++r)
      if (y(r) != 0.0) detail::accumulate(a[static_cast<std::size_t>(r)], y(r), out);
    return out;
  };

  // Starting point.
  double max_a = 0.0;
  double xi = std::max(10.0, std::sqrt(static_cast<double>(n)));
  for (int r = 0; r < m; ++r) {
    xi = std::max(xi, n * (1.0 + std::abs(b(r))) / 2.0);
    max_a = std::max(max_a, 1.0);
  }
  const double eta = std::max({10.0, std::sqrt(static_cast<double>(n)), max_a, c.norm()});
  MatrixXd x = xi * MatrixXd::Identity(n, n);
  MatrixXd s = eta * MatrixXd::Identity(n, n);
  VectorXd y = VectorXd::Zero(m);
  VectorXd v = VectorXd::Zero(nv);

  const double b_norm = b.norm();
  const double c_norm = c.norm();

  struct Iterate {
    MatrixXd x, s;
    VectorXd y, v;
    double merit = std::numeric_limits<double>::infinity();
  } best;

  Status status = Status::MaxIterations;
  int it = 0;
  int since_best = 0;
  double pinf = 0.0;
  double dinf = 0.0;
  double relgap = 0.0;
  double pobj = 0.0;
  double dobj = 0.0;
  for (; it <= settings.max_iterations; ++it) {
    const VectorXd rp = b - op_a(x) - d * v;
    const MatrixXd rd = c - op_at(y) - s;
    const VectorXd rv = d.transpose() * y - 2.0 * p * v;
    const double pv = v.dot(p * v);
    pobj = (c.cwiseProduct(x)).sum() + pv;
    dobj = b.dot(y) - pv;
    pinf = rp.norm() / (1.0 + b_norm);
    dinf = std::sqrt(rd.squaredNorm() + rv.squaredNorm()) / (1.0 + c_norm);
    relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    const double mu = x.cwiseProduct(s).sum() / n;
    const double merit = std::max({pinf, dinf, relgap});
    if (merit < 0.5 * best.merit) {
      since_best = 0;
    } else {
      ++since_best;
    }
    if (merit < best.merit) best = {x, s, y, v, merit};
    if (settings.verbose) {
      std::fprintf(stderr, "it %3d  pobj %+.10e  dobj %+.10e  pinf %.2e  dinf %.2e  gap %.2e  mu %.2e\n", it,
                   pobj * obj_scale, dobj * obj_scale, pinf, dinf, relgap, mu);
    }
    if (pinf < settings.tolerance && dinf < settings.tolerance && relgap < settings.tolerance) {
      status = Status::Optimal;
      break;
    }
    if (it == settings.max_iterations) break;
    if (since_best >= settings.stall_iterations) {
      status = Status::NumericalFailure;
      break;
    }

    Eigen::LLT<MatrixXd> chol_x(x);
    Eigen::LLT<MatrixXd> chol_s(s);
    if (chol_x.info() != Eigen::Success || chol_s.info() != Eigen::Success) {
      status = Status::NumericalFailure;
      break;
    }
    MatrixXd s_inv = chol_s.solve(MatrixXd::Identity(n, n));
    s_inv = detail::sym(s_inv);

    // Schur complement M_ij = <A_i, X A_j S^-1>.
    MatrixXd schur(m, m);
    for (int i = 0; i < m; ++i) {
      const auto& ai = a[static_cast<std::size_t>(i)];
      for (int j = i; j < m; ++j) {
        const auto& aj = a[static_cast<std::size_t>(j)];
        double acc = 0.0;
        for (const auto& ei : ai) {
          for (const auto& ej : aj) acc += ei.value * ej.value * x(ei.col, ej.row) * s_inv(ej.col, ei.row);
        }
        schur(i, j) = acc;
        schur(j, i) = acc;
      }
    }
    // Block elimination through M when it is positive definite. Rows acting only
    // on v leave M singular; those fall back to LU on [M D; Dᵀ -2P].
    const Eigen::LLT<MatrixXd> chol_m(schur);
    const bool eliminate = chol_m.info() == Eigen::Success;
    MatrixXd minv_d;
    Eigen::LDLT<MatrixXd> chol_v;
    Eigen::PartialPivLU<MatrixXd> lu;
    if (eliminate) {
      minv_d = chol_m.solve(d);
      chol_v.compute(d.transpose() * minv_d + 2.0 * p);
    } else {
      MatrixXd kkt(m + nv, m + nv);
      kkt.topLeftCorner(m, m) = schur;
      kkt.topRightCorner(m, nv) = d;
      kkt.bottomLeftCorner(nv, m) = d.transpose();
      kkt.bottomRightCorner(nv, nv) = -2.0 * p;
      lu.compute(kkt);
    }

    const MatrixXd x_rd_sinv = x * rd * s_inv;

    struct Direction {
      MatrixXd dx, ds;
      VectorXd dy, dv;
    };
    // M dy + D dv = r1 and Dᵀdy - 2P dv = -r2.
    auto reduced = [&](const VectorXd& r1, const VectorXd& r2, VectorXd& dy, VectorXd& dv) {
      if (eliminate) {
        dv = nv > 0 ? VectorXd(chol_v.solve(minv_d.transpose() * r1 + r2)) : VectorXd::Zero(0);
        dy = chol_m.solve(r1 - d * dv);
        return;
      }
      VectorXd rhs(m + nv);
      rhs << r1, -r2;
      const VectorXd z = lu.solve(rhs);
      dy = z.head(m);
      dv = z.tail(nv);
    };
    auto direction = [&](const MatrixXd& rc) {
      Direction dir;
      const MatrixXd k = detail::sym(rc - x_rd_sinv);
      const VectorXd r1 = rp - op_a(k);
      reduced(r1, rv, dir.dy, dir.dv);
      MatrixXd at_dy = op_at(dir.dy);
      dir.dx = k + detail::sym(x * at_dy * s_inv);
      // The Schur matrix loses accuracy as X approaches low rank; refine against
      // the exact operators so the primal residual keeps shrinking.
      for (int ref = 0; ref < settings.refinement_steps; ++ref) {
        const VectorXd e1 = rp - op_a(dir.dx) - d * dir.dv;
        const VectorXd e2 = rv + d.transpose() * dir.dy - 2.0 * p * dir.dv;
        if (e1.norm() + e2.norm() <= 1e-15 * (1.0 + rp.norm() + rv.norm())) break;
        VectorXd cy, cv;
        reduced(e1, e2, cy, cv);
        const MatrixXd at_cy = op_at(cy);
        dir.dy += cy;
        dir.dv += cv;
        at_dy += at_cy;
        dir.dx += detail::sym(x * at_cy * s_inv);
      }
      dir.ds = rd - at_dy;
      return dir;
    };
    auto step_length = [&](const Direction& dir) {
      const double ap = detail::max_step(chol_x, dir.dx);
      const double ad = detail::max_step(chol_s, dir.ds);
      return std::min(1.0, settings.step_fraction * std::min(ap, ad));
    };

    const Direction pred = direction(-x);
    const double alpha_aff = step_length(pred);
    const double mu_aff =
        (x + alpha_aff * pred.dx).cwiseProduct(s + alpha_aff * pred.ds).sum() / n;
    const double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);
    const MatrixXd rc = sigma * mu * s_inv - x - pred.dx * pred.ds * s_inv;
    const Direction corr = direction(rc);
    const double alpha = step_length(corr);
    if (!(alpha > 1e-10) || !corr.dx.allFinite() || !corr.dv.allFinite()) {
      status = Status::NumericalFailure;
      break;
    }
    x = detail::sym(x + alpha * corr.dx);
    s = detail::sym(s + alpha * corr.ds);
    y += alpha * corr.dy;
    v += alpha * corr.dv;
  }

  if (status != Status::Optimal) {
    if (status == Status::NumericalFailure && best.merit < settings.acceptable_tolerance) {
      status = Status::NearOptimal;
    }
    x = best.x;
    s = best.s;
    y = best.y;
    v = best.v;
    const VectorXd rp = b - op_a(x) - d * v;
    const MatrixXd rd = c - op_at(y) - s;
    const VectorXd rv = d.transpose() * y - 2.0 * p * v;
    const double pv = v.dot(p * v);
    pobj = (c.cwiseProduct(x)).sum() + pv;
    dobj = b.dot(y) - pv;
    pinf = rp.norm() / (1.0 + b_norm);
    dinf = std::sqrt(rd.squaredNorm() + rv.squaredNorm()) / (1.0 + c_norm);
    relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
  }

  sol.status = status;
  sol.x = x;
  sol.v = v;
  sol.s = s * obj_scale;
  sol.y = VectorXd::Zero(m_all);
  for (int r = 0; r < m; ++r) {
    const int i = keep[static_cast<std::size_t>(r)];
    sol.y(i) = y(r) * obj_scale / row_norm[static_cast<std::size_t>(i)];
  }
  sol.primal_objective = pobj * obj_scale;
  sol.dual_objective = dobj * obj_scale;
  sol.primal_infeasibility = pinf;
  sol.dual_infeasibility = dinf;
  sol.relative_gap = relgap;
  sol.iterations = it;
  sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

}  // namespace cast::sdp

#endif  // CAST_SDP_HPP
