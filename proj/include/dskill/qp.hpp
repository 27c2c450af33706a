#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace dskill {

/// minimize xᵀ H x  subject to  A_eq x = b_eq,  lb <= x <= ub.
///
/// H must be symmetric positive definite. The solver does not exploit any
/// sparsity or diagonal structure; problems are expected to be small.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  Eigen::Index n() const { return H.rows(); }
  Eigen::Index m() const { return A_eq.rows(); }
  /// Throws ContractViolation when shapes, symmetry, definiteness or bounds are off.
  void validate() const;
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIter };
enum class BoundSide { kLower, kUpper };

struct ActiveBound {
  Eigen::Index index = 0;
  BoundSide side = BoundSide::kLower;
  bool operator==(const ActiveBound&) const = default;
};

/// Multiplier convention: 2Hx − A_eqᵀ·eq_multipliers − bound_multipliers = 0,
/// with bound_multipliers[i] >= 0 on an active lower bound, <= 0 on an active
/// upper bound and 0 on free coordinates.
struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;
  Eigen::VectorXd bound_multipliers;
  std::vector<ActiveBound> active_set;
  QpStatus status = QpStatus::kMaxIter;
  double objective = 0.0;
  int iterations = 0;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_bounds = 0.0;
  double complementarity = 0.0;
  double dual_feasibility = 0.0;

  double max() const;
};

std::string to_string(QpStatus status);

/// Primal active-set solve. A phase-1 bounded least-squares pass decides
/// feasibility; an optional warm active set (e.g. from the previous control
/// step) is tried first and silently dropped when it does not fit.
QpSolution solve_qp(const QpProblem& p, double tol = 1e-10, int max_iter = 200,
                    const std::vector<ActiveBound>* warm_start = nullptr);

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& s);

/// minimize xᵀHx + penalty·‖A_eq x − b_eq‖² subject to the bounds only.
/// Used when the equality block is infeasible. Multipliers of the returned
/// solution refer to this penalized problem (eq_multipliers is empty).
QpSolution solve_qp_relaxed(const QpProblem& p, double penalty = 1e6, double tol = 1e-10,
                            int max_iter = 200);

}  // namespace dskill
