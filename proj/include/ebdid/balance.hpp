#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ebdid/panel.hpp"
#include "ebdid/trends.hpp"
#include "ebdid/weights.hpp"

namespace ebdid {

/// Moment-constraint system for entropy balancing.
///
/// Row i of `constraint_matrix` holds the moment functions evaluated on
/// comparison unit i; `targets` holds the treated-group means of the same
/// functions. Second moments are raw (uncentered) powers.
struct BalanceProblem {
  Eigen::MatrixXd constraint_matrix;  // N0 x J
  Eigen::VectorXd targets;            // J
  Eigen::VectorXd base_weights;       // N0, uniform 1/N0
  std::vector<std::string> column_labels;
  std::vector<std::string> comparison_ids;
  Index n_treated = 0;
  std::vector<std::string> warnings;

  Index n_comparison() const { return constraint_matrix.rows(); }
  Index n_constraints() const { return constraint_matrix.cols(); }
};

struct CovariateBlock {
  Eigen::MatrixXd comparison;  // N0 x p
  Eigen::MatrixXd treated;     // N1 x p
  std::vector<std::string> names;
};

/// Columns are ordered by moment, then feature: with features (a, b) and
/// moments {1, 2} the columns are a, b, a^2, b^2. Covariate columns follow
/// the trend columns in the same layout.
///
/// A comparison column that is constant is dropped with a warning when the
/// treated target equals that constant, and raises InfeasibleTargets when it
/// does not. Throws InputError on mismatched trend kinds or moment orders
/// outside {1, 2}, and DegenerateConstraints when no column survives.
BalanceProblem build_constraints(const TrendMatrix& comparison,
                                 const TrendMatrix& treated,
                                 const std::optional<CovariateBlock>& covariates,
                                 const std::set<int>& moment_orders);

/// Convenience wrapper: splits `trends` (all panel units, panel order) and
/// the named covariates by group.
BalanceProblem build_constraints(const Panel& panel, const TrendMatrix& trends,
                                 const std::vector<std::string>& covariate_names,
                                 const std::set<int>& moment_orders);

struct SolverSettings {
  double tolerance = 1e-8;  // max standardized constraint violation
  int max_iterations = 200;
  double max_dual_norm = 1e6;  // beyond this the targets are deemed infeasible
};

struct SolverDiagnostics {
  int iterations = 0;
  double max_violation = 0.0;      // standardized units
  double max_raw_violation = 0.0;  // original column units
  double dual_gradient_norm = 0.0;
  int gradient_fallbacks = 0;
};

struct BalanceWeights {
  Eigen::VectorXd comparison_weights;  // positive, sums to 1
  double treated_weight = 0.0;         // 1 / N1
  Eigen::VectorXd dual;                // w_i ∝ q_i exp(-dual' C_i), raw units
  SolverDiagnostics diagnostics;

  UnitWeights unit_weights(Index n_treated) const;
};

/// Minimizes sum_i w_i log(w_i / q_i) subject to C' w = targets, sum w = 1,
/// w > 0, through its unconstrained dual.
///
/// Columns are standardized to treated mean 0 and comparison SD 1, and the
/// dual is solved by Newton's method with the analytic Hessian (the
/// weighted covariance of the standardized columns) and Armijo
/// backtracking. A singular Hessian falls back to a gradient step.
///
/// Throws InfeasibleTargets when the dual norm exceeds
/// `max_dual_norm` (the dual is unbounded exactly when the targets are
/// outside the convex hull of the constraint rows), DegenerateConstraints on
/// collinear columns and NonConvergence when the iteration budget runs out.
BalanceWeights solve_entropy_balance(const BalanceProblem& problem,
                                     const SolverSettings& settings = {});

/// residual_j = sum_i w_i C_ij - target_j.
Eigen::VectorXd check_balance(const BalanceWeights& weights,
                              const BalanceProblem& problem);
Eigen::VectorXd check_balance(const Eigen::VectorXd& comparison_weights,
                              const BalanceProblem& problem);

/// sum_i w_i log(w_i / q_i); terms with w_i == 0 contribute 0.
double kl_divergence(const Eigen::VectorXd& weights,
                     const Eigen::VectorXd& base_weights);

/// CSV `unit,weight`.
void write_weights_csv(const BalanceWeights& weights,
                       const BalanceProblem& problem, std::ostream& out);

}  // namespace ebdid
