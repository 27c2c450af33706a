#include "dskill/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "dskill/errors.hpp"

namespace dskill {

namespace {

constexpr double kRegularization = 1e-12;

// Per-coordinate working-set state.
enum : signed char { kFree = 0, kAtLower = 1, kAtUpper = 2 };

// minimize xᵀHx + gᵀx  s.t.  A x = b,  lb <= x <= ub  (A has full row rank).
struct Engine {
  const Eigen::MatrixXd& H;
  const Eigen::VectorXd& g;
  const Eigen::MatrixXd& A;
  const Eigen::VectorXd& b;
  const Eigen::VectorXd& lb;
  const Eigen::VectorXd& ub;

  Eigen::Index n() const { return H.rows(); }
  Eigen::Index m() const { return A.rows(); }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const { return 2.0 * (H * x) + g; }

  // Minimizer over the free coordinates with working bounds held fixed.
  // Returns the full point and the equality multipliers.
  void solve_eqp(const std::vector<signed char>& state, Eigen::VectorXd* x_out, Eigen::VectorXd* nu_out) const {
    std::vector<Eigen::Index> free;
    Eigen::VectorXd x(n());
    for (Eigen::Index i = 0; i < n(); ++i) {
      if (state[i] == kFree) {
        free.push_back(i);
        x[i] = 0.0;
      } else {
        x[i] = state[i] == kAtLower ? lb[i] : ub[i];
      }
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    const Eigen::Index dim = nf + m();
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs(dim);
    // x currently holds the fixed values on working coordinates and 0 elsewhere.
    const Eigen::VectorXd hx_fixed = 2.0 * (H * x);
    const Eigen::VectorXd ax_fixed = A * x;
    for (Eigen::Index r = 0; r < nf; ++r) {
      for (Eigen::Index c = 0; c < nf; ++c) K(r, c) = 2.0 * H(free[r], free[c]);
      for (Eigen::Index k = 0; k < m(); ++k) {
        K(r, nf + k) = -A(k, free[r]);
        K(nf + k, r) = A(k, free[r]);
      }
      rhs[r] = -g[free[r]] - hx_fixed[free[r]];
    }
    for (Eigen::Index k = 0; k < m(); ++k) rhs[nf + k] = b[k] - ax_fixed[k];

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) {
      for (Eigen::Index r = 0; r < nf; ++r) K(r, r) += 2.0 * kRegularization;
      lu.compute(K);
      if (!lu.isInvertible()) throw QpSolverError("singular KKT system after regularization");
    }
    const Eigen::VectorXd sol = lu.solve(rhs);
    for (Eigen::Index r = 0; r < nf; ++r) x[free[r]] = sol[r];
    *x_out = std::move(x);
    *nu_out = sol.tail(m());
  }

  // Primal active-set iterations from a bound-feasible x. On return x, state
  // and nu describe the final iterate.
  QpStatus run(Eigen::VectorXd& x, std::vector<signed char>& state, Eigen::VectorXd& nu, double tol,
               int max_iter, int* iterations) const {
    Eigen::VectorXd target;
    for (int it = 0; it < max_iter; ++it) {
      *iterations = it + 1;
      solve_eqp(state, &target, &nu);
      const Eigen::VectorXd p = target - x;
      const double scale = 1.0 + x.lpNorm<Eigen::Infinity>();
      const double p_floor = 1e-14 * scale;

      double alpha = 1.0;
      Eigen::Index blocking = -1;
      signed char blocking_side = kFree;
      for (Eigen::Index i = 0; i < n(); ++i) {
        if (state[i] != kFree || std::abs(p[i]) <= p_floor) continue;
        if (p[i] < 0.0 && std::isfinite(lb[i])) {
          const double a = (lb[i] - x[i]) / p[i];
          if (a < alpha) {
            alpha = std::max(a, 0.0);
            blocking = i;
            blocking_side = kAtLower;
          }
        } else if (p[i] > 0.0 && std::isfinite(ub[i])) {
          const double a = (ub[i] - x[i]) / p[i];
          if (a < alpha) {
            alpha = std::max(a, 0.0);
            blocking = i;
            blocking_side = kAtUpper;
          }
        }
      }

      if (blocking >= 0) {
        x += alpha * p;
        state[blocking] = blocking_side;
        x[blocking] = blocking_side == kAtLower ? lb[blocking] : ub[blocking];
        continue;
      }

      // Full step: x is the working-set minimizer. Check bound multipliers.
      x = target;
      for (Eigen::Index i = 0; i < n(); ++i) {
        if (state[i] == kFree) x[i] = std::clamp(x[i], lb[i], ub[i]);
      }
      const Eigen::VectorXd z = gradient(x) - A.transpose() * nu;
      const double dual_tol = tol * std::max(1.0, z.lpNorm<Eigen::Infinity>());
      Eigen::Index worst = -1;
      double worst_violation = dual_tol;
      for (Eigen::Index i = 0; i < n(); ++i) {
        if (state[i] == kFree || lb[i] == ub[i]) continue;
        const double violation = state[i] == kAtLower ? -z[i] : z[i];
        if (violation > worst_violation) {
          worst_violation = violation;
          worst = i;
        }
      }
      if (worst < 0) return QpStatus::kOptimal;
      state[worst] = kFree;
    }
    return QpStatus::kMaxIter;
  }
};

Eigen::VectorXd clamp_to(const Eigen::VectorXd& x, const Eigen::VectorXd& lb, const Eigen::VectorXd& ub) {
  return x.cwiseMax(lb).cwiseMin(ub);
}

// Bounded least squares: minimize ‖A x − b‖² over the box. Active-set
// iteration with minimum-norm least-squares steps on the free coordinates.
Eigen::VectorXd bounded_least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& lb,
                                      const Eigen::VectorXd& ub, double tol) {
  const Eigen::Index n = A.cols();
  Eigen::VectorXd x = clamp_to(A.completeOrthogonalDecomposition().solve(b), lb, ub);
  std::vector<signed char> state(n, kFree);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x[i] == lb[i]) state[i] = kAtLower;
    else if (x[i] == ub[i]) state[i] = kAtUpper;
  }
  const int max_iter = 20 * static_cast<int>(n + A.rows()) + 50;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (state[i] == kFree) free.push_back(i);
    }
    const Eigen::VectorXd r = b - A * x;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    if (!free.empty()) {
      Eigen::MatrixXd af(A.rows(), static_cast<Eigen::Index>(free.size()));
      for (std::size_t k = 0; k < free.size(); ++k) af.col(static_cast<Eigen::Index>(k)) = A.col(free[k]);
      const Eigen::VectorXd pf = af.completeOrthogonalDecomposition().solve(r);
      for (std::size_t k = 0; k < free.size(); ++k) p[free[k]] = pf[static_cast<Eigen::Index>(k)];
    }
    const double scale = 1.0 + x.lpNorm<Eigen::Infinity>();
    if (p.lpNorm<Eigen::Infinity>() <= 1e-13 * scale) {
      const Eigen::VectorXd grad = -2.0 * (A.transpose() * r);
      const double dual_tol = tol * std::max(1.0, grad.lpNorm<Eigen::Infinity>());
      Eigen::Index worst = -1;
      double worst_violation = dual_tol;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (state[i] == kFree || lb[i] == ub[i]) continue;
        const double violation = state[i] == kAtLower ? -grad[i] : grad[i];
        if (violation > worst_violation) {
          worst_violation = violation;
          worst = i;
        }
      }
      if (worst < 0) break;
      state[worst] = kFree;
      continue;
    }
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    signed char side = kFree;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (state[i] != kFree || std::abs(p[i]) <= 1e-14 * scale) continue;
      const double a = p[i] < 0.0 ? (lb[i] - x[i]) / p[i] : (ub[i] - x[i]) / p[i];
      if (a < alpha) {
        alpha = std::max(a, 0.0);
        blocking = i;
        side = p[i] < 0.0 ? kAtLower : kAtUpper;
      }
    }
    x = clamp_to(x + alpha * p, lb, ub);
    if (blocking >= 0) {
      state[blocking] = side;
      x[blocking] = side == kAtLower ? lb[blocking] : ub[blocking];
    }
  }
  return x;
}

// Linearly independent subset of the rows of A (rank-revealing QR on Aᵀ).
std::vector<Eigen::Index> independent_rows(const Eigen::MatrixXd& A) {
  std::vector<Eigen::Index> rows;
  if (A.rows() == 0) return rows;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  for (Eigen::Index k = 0; k < rank; ++k) rows.push_back(qr.colsPermutation().indices()[k]);
  std::sort(rows.begin(), rows.end());
  return rows;
}

QpSolution package(const Engine& e, const Eigen::VectorXd& x, const std::vector<signed char>& state,
                   const Eigen::VectorXd& nu_reduced, const std::vector<Eigen::Index>& rows, Eigen::Index m_full,
                   QpStatus status, int iterations) {
  QpSolution s;
  s.x = x;
  s.status = status;
  s.iterations = iterations;
  s.eq_multipliers = Eigen::VectorXd::Zero(m_full);
  for (std::size_t k = 0; k < rows.size(); ++k) s.eq_multipliers[rows[k]] = nu_reduced[static_cast<Eigen::Index>(k)];
  const Eigen::VectorXd z = e.gradient(x) - e.A.transpose() * nu_reduced;
  s.bound_multipliers = Eigen::VectorXd::Zero(e.n());
  for (Eigen::Index i = 0; i < e.n(); ++i) {
    if (state[i] == kFree) continue;
    s.bound_multipliers[i] = z[i];
    s.active_set.push_back({i, state[i] == kAtLower ? BoundSide::kLower : BoundSide::kUpper});
  }
  return s;
}

}  // namespace

void QpProblem::validate() const {
  const Eigen::Index nn = H.rows();
  if (nn == 0 || H.cols() != nn) throw ContractViolation("QpProblem: H must be square and non-empty");
  if (A_eq.cols() != nn && A_eq.rows() > 0) throw ContractViolation("QpProblem: A_eq column count must equal n");
  if (A_eq.rows() > nn) throw ContractViolation("QpProblem: more equality rows than variables");
  if (b_eq.size() != A_eq.rows()) throw ContractViolation("QpProblem: b_eq size must match A_eq rows");
  if (lb.size() != nn || ub.size() != nn) throw ContractViolation("QpProblem: bound vectors must have size n");
  if (!H.allFinite() || !A_eq.allFinite() || !b_eq.allFinite()) {
    throw ContractViolation("QpProblem: non-finite entries");
  }
  if ((H - H.transpose()).lpNorm<Eigen::Infinity>() > 1e-12 * std::max(1.0, H.lpNorm<Eigen::Infinity>())) {
    throw ContractViolation("QpProblem: H is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) throw ContractViolation("QpProblem: H is not positive definite");
  for (Eigen::Index i = 0; i < nn; ++i) {
    if (!(lb[i] <= ub[i])) throw ContractViolation("QpProblem: lb > ub at index " + std::to_string(i));
  }
}

double KktResiduals::max() const {
  return std::max({stationarity, primal_eq, primal_bounds, complementarity, dual_feasibility});
}

std::string to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kMaxIter: return "max_iter";
  }
  return "unknown";
}

QpSolution solve_qp(const QpProblem& p, double tol, int max_iter, const std::vector<ActiveBound>* warm_start) {
  p.validate();
  const Eigen::Index n = p.n();
  const Eigen::MatrixXd A = p.A_eq.rows() > 0 ? p.A_eq : Eigen::MatrixXd(0, n);

  // Phase 1: is {A x = b} ∩ box non-empty?
  Eigen::VectorXd x = A.rows() > 0 ? bounded_least_squares(A, p.b_eq, p.lb, p.ub, tol)
                                   : clamp_to(Eigen::VectorXd::Zero(n), p.lb, p.ub);
  const double residual = A.rows() > 0 ? (A * x - p.b_eq).lpNorm<Eigen::Infinity>() : 0.0;
  const double feas_tol = 1e-9 * (1.0 + p.b_eq.lpNorm<Eigen::Infinity>());
  if (residual > feas_tol) {
    QpSolution s;
    s.x = x;
    s.status = QpStatus::kInfeasible;
    s.eq_multipliers = Eigen::VectorXd::Zero(A.rows());
    s.bound_multipliers = Eigen::VectorXd::Zero(n);
    s.objective = x.dot(p.H * x);
    return s;
  }

  // Consistent but possibly rank-deficient equalities: keep an independent subset.
  const std::vector<Eigen::Index> rows = independent_rows(A);
  Eigen::MatrixXd Ar(static_cast<Eigen::Index>(rows.size()), n);
  Eigen::VectorXd br(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    Ar.row(static_cast<Eigen::Index>(k)) = A.row(rows[k]);
    br[static_cast<Eigen::Index>(k)] = p.b_eq[rows[k]];
  }
  const Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  const Engine engine{p.H, g, Ar, br, p.lb, p.ub};

  std::vector<signed char> state(n, kFree);
  if (warm_start != nullptr && !warm_start->empty()) {
    std::vector<signed char> warm(n, kFree);
    bool valid = true;
    for (const ActiveBound& ab : *warm_start) {
      if (ab.index < 0 || ab.index >= n) {
        valid = false;
        break;
      }
      warm[ab.index] = ab.side == BoundSide::kLower ? kAtLower : kAtUpper;
    }
    if (valid) {
      try {
        Eigen::VectorXd xw, nuw;
        engine.solve_eqp(warm, &xw, &nuw);
        const double slack = 1e-12 * (1.0 + xw.lpNorm<Eigen::Infinity>());
        if (((xw - p.lb).minCoeff() >= -slack) && ((p.ub - xw).minCoeff() >= -slack)) {
          x = clamp_to(xw, p.lb, p.ub);
          state = warm;
        }
      } catch (const QpSolverError&) {
        // Warm set incompatible with the equality block; cold start instead.
      }
    }
  }

  Eigen::VectorXd nu;
  int iterations = 0;
  const QpStatus status = engine.run(x, state, nu, tol, max_iter, &iterations);
  QpSolution s = package(engine, x, state, nu, rows, A.rows(), status, iterations);
  s.objective = s.x.dot(p.H * s.x);
  return s;
}

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& s) {
  KktResiduals r;
  const Eigen::Index n = p.n();
  if (s.x.size() != n) throw ContractViolation("kkt_residuals: solution has wrong dimension");
  Eigen::VectorXd nu = s.eq_multipliers.size() == p.m() ? s.eq_multipliers : Eigen::VectorXd::Zero(p.m());
  Eigen::VectorXd z = s.bound_multipliers.size() == n ? s.bound_multipliers : Eigen::VectorXd::Zero(n);

  Eigen::VectorXd stat = 2.0 * (p.H * s.x) - z;
  if (p.m() > 0) stat -= p.A_eq.transpose() * nu;
  r.stationarity = stat.lpNorm<Eigen::Infinity>();
  r.primal_eq = p.m() > 0 ? (p.A_eq * s.x - p.b_eq).lpNorm<Eigen::Infinity>() : 0.0;

  std::vector<int> side(n, kFree);
  for (const ActiveBound& ab : s.active_set) {
    if (ab.index >= 0 && ab.index < n) side[ab.index] = ab.side == BoundSide::kLower ? kAtLower : kAtUpper;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    r.primal_bounds = std::max({r.primal_bounds, p.lb[i] - s.x[i], s.x[i] - p.ub[i]});
    const double zl = std::max(z[i], 0.0);
    const double zu = std::max(-z[i], 0.0);
    if (zl > 0.0) r.complementarity = std::max(r.complementarity, zl * std::abs(s.x[i] - p.lb[i]));
    if (zu > 0.0) r.complementarity = std::max(r.complementarity, zu * std::abs(p.ub[i] - s.x[i]));
    double dual = 0.0;
    if (side[i] == kFree) {
      dual = std::abs(z[i]);
    } else if (p.lb[i] != p.ub[i]) {
      dual = side[i] == kAtLower ? std::max(-z[i], 0.0) : std::max(z[i], 0.0);
    }
    r.dual_feasibility = std::max(r.dual_feasibility, dual);
  }
  return r;
}

QpSolution solve_qp_relaxed(const QpProblem& p, double penalty, double tol, int max_iter) {
  p.validate();
  if (!(penalty > 0.0)) throw ContractViolation("solve_qp_relaxed: penalty must be > 0");
  const Eigen::Index n = p.n();
  Eigen::MatrixXd H = p.H;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  if (p.m() > 0) {
    H += penalty * (p.A_eq.transpose() * p.A_eq);
    g = -2.0 * penalty * (p.A_eq.transpose() * p.b_eq);
  }
  H = 0.5 * (H + H.transpose());
  const Eigen::MatrixXd A(0, n);
  const Eigen::VectorXd b(0);
  const Engine engine{H, g, A, b, p.lb, p.ub};

  Eigen::VectorXd x = clamp_to(Eigen::VectorXd::Zero(n), p.lb, p.ub);
  std::vector<signed char> state(n, kFree);
  Eigen::VectorXd nu;
  int iterations = 0;
  const QpStatus status = engine.run(x, state, nu, tol, max_iter, &iterations);
  QpSolution s = package(engine, x, state, nu, {}, 0, status, iterations);
  const double residual = p.m() > 0 ? (p.A_eq * s.x - p.b_eq).squaredNorm() : 0.0;
  s.objective = s.x.dot(p.H * s.x) + penalty * residual;
  return s;
}

}  // namespace dskill
