#include "ebdid/balance.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "text_util.hpp"

namespace ebdid {

namespace {

void append_columns(const Eigen::MatrixXd& comparison, const Eigen::MatrixXd& treated,
                    const std::vector<std::string>& names,
                    const std::set<int>& moment_orders, std::vector<Eigen::VectorXd>& cols,
                    std::vector<double>& targets, std::vector<std::string>& labels) {
  for (int order : moment_orders) {
    for (Index c = 0; c < comparison.cols(); ++c) {
      Eigen::VectorXd col = comparison.col(c).array().pow(order);
      const double target = treated.col(c).array().pow(order).mean();
      cols.push_back(std::move(col));
      targets.push_back(target);
      labels.push_back(order == 1 ? names[c] : names[c] + "^" + std::to_string(order));
    }
  }
}

// log sum_i q_i exp(z_i), computed stably.
double log_sum_exp(const Eigen::VectorXd& log_q_plus_z) {
  const double m = log_q_plus_z.maxCoeff();
  return m + std::log((log_q_plus_z.array() - m).exp().sum());
}

}  // namespace

UnitWeights BalanceWeights::unit_weights(Index n_treated) const {
  UnitWeights w;
  w.treated = Eigen::VectorXd::Constant(n_treated, treated_weight);
  w.comparison = comparison_weights;
  w.label = "entropy";
  return w;
}

BalanceProblem build_constraints(const TrendMatrix& comparison,
                                 const TrendMatrix& treated,
                                 const std::optional<CovariateBlock>& covariates,
                                 const std::set<int>& moment_orders) {
  if (!comparison.same_shape_as(treated))
    throw InputError("treated and comparison trend matrices differ in kind or order");
  if (moment_orders.empty()) throw InputError("moment_orders is empty");
  for (int m : moment_orders)
    if (m != 1 && m != 2) throw InputError("moment orders must be 1 or 2");
  if (comparison.n_units() == 0 || treated.n_units() == 0)
    throw InputError("both groups need at least one unit");

  std::vector<Eigen::VectorXd> cols;
  std::vector<double> targets;
  std::vector<std::string> labels;
  append_columns(comparison.features, treated.features, comparison.feature_names(),
                 moment_orders, cols, targets, labels);
  if (covariates) {
    if (covariates->comparison.rows() != comparison.n_units() ||
        covariates->treated.rows() != treated.n_units() ||
        covariates->comparison.cols() != covariates->treated.cols() ||
        static_cast<Index>(covariates->names.size()) != covariates->comparison.cols())
      throw InputError("covariate block does not match the trend matrices");
    append_columns(covariates->comparison, covariates->treated, covariates->names,
                   moment_orders, cols, targets, labels);
  }

  BalanceProblem prob;
  prob.comparison_ids = comparison.unit_ids;
  prob.n_treated = treated.n_units();
  const Index n0 = comparison.n_units();
  std::vector<Index> keep;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& col = cols[j];
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    const double scale = std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
    if (hi - lo > 1e-12 * scale) {
      keep.push_back(static_cast<Index>(j));
      continue;
    }
    if (std::abs(targets[j] - lo) <= 1e-10 * scale) {
      prob.warnings.push_back("dropped constant constraint '" + labels[j] +
                              "' (treated target already equals it)");
    } else {
      throw InfeasibleTargets("constraint '" + labels[j] +
                              "' is constant in the comparison group (" +
                              detail::format_double(lo) + ") but its treated target is " +
                              detail::format_double(targets[j]));
    }
  }
  if (keep.empty()) throw DegenerateConstraints("no non-degenerate constraint columns");

  prob.constraint_matrix.resize(n0, static_cast<Index>(keep.size()));
  prob.targets.resize(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    prob.constraint_matrix.col(static_cast<Index>(k)) = cols[keep[k]];
    prob.targets[static_cast<Index>(k)] = targets[keep[k]];
    prob.column_labels.push_back(labels[keep[k]]);
  }
  prob.base_weights = Eigen::VectorXd::Constant(n0, 1.0 / static_cast<double>(n0));
  for (const auto& w : comparison.warnings) prob.warnings.push_back(w);
  return prob;
}

BalanceProblem build_constraints(const Panel& panel, const TrendMatrix& trends,
                                 const std::vector<std::string>& covariate_names,
                                 const std::set<int>& moment_orders) {
  if (trends.n_units() != panel.n_units())
    throw InputError("trend matrix does not cover the panel units");
  std::optional<CovariateBlock> block;
  if (!covariate_names.empty()) {
    CovariateBlock b;
    b.names = covariate_names;
    b.comparison.resize(panel.n_comparison(), static_cast<Index>(covariate_names.size()));
    b.treated.resize(panel.n_treated(), static_cast<Index>(covariate_names.size()));
    for (std::size_t c = 0; c < covariate_names.size(); ++c) {
      auto idx = panel.covariate_index(covariate_names[c]);
      if (!idx) throw InputError("unknown covariate '" + covariate_names[c] + "'");
      for (Index r = 0; r < panel.n_comparison(); ++r)
        b.comparison(r, static_cast<Index>(c)) =
            panel.covariates()(panel.comparison_rows()[r], *idx);
      for (Index r = 0; r < panel.n_treated(); ++r)
        b.treated(r, static_cast<Index>(c)) =
            panel.covariates()(panel.treated_rows()[r], *idx);
    }
    block = std::move(b);
  }
  return build_constraints(comparison_trends(trends, panel),
                           treated_trends(trends, panel), block, moment_orders);
}

BalanceWeights solve_entropy_balance(const BalanceProblem& problem,
                                     const SolverSettings& settings) {
  const Eigen::MatrixXd& c = problem.constraint_matrix;
  const Index n = c.rows();
  const Index j = c.cols();
  if (n == 0 || j == 0) throw InputError("empty balance problem");
  if (problem.targets.size() != j || problem.base_weights.size() != n)
    throw InputError("balance problem dimensions disagree");
  if (!c.allFinite() || !problem.targets.allFinite())
    throw InputError("balance problem has non-finite entries");
  if ((problem.base_weights.array() <= 0.0).any())
    throw InputError("base weights must be strictly positive");

  const Eigen::VectorXd q = problem.base_weights / problem.base_weights.sum();
  const Eigen::VectorXd log_q = q.array().log();

  // Standardize: treated mean 0, comparison SD 1.
  const Eigen::RowVectorXd comp_mean = q.transpose() * c;
  Eigen::VectorXd sd(j);
  for (Index k = 0; k < j; ++k) {
    const double var = q.dot((c.col(k).array() - comp_mean[k]).square().matrix());
    sd[k] = std::sqrt(var);
    if (!(sd[k] > 0.0))
      throw DegenerateConstraints("constraint '" +
                                  (k < static_cast<Index>(problem.column_labels.size())
                                       ? problem.column_labels[k]
                                       : std::to_string(k)) +
                                  "' has zero variance in the comparison group");
  }
  const Eigen::MatrixXd cs =
      (c.rowwise() - problem.targets.transpose()).array().rowwise() / sd.transpose().array();

  {
    // Collinearity: correlation matrix of the columns under q.
    const Eigen::RowVectorXd m = q.transpose() * cs;
    Eigen::MatrixXd cov = cs.transpose() * q.asDiagonal() * cs - m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    if (ev.minCoeff() <= 1e-10 * std::max(1.0, ev.maxCoeff()))
      throw DegenerateConstraints("constraint columns are collinear in the comparison group");
  }

  auto dual_objective = [&](const Eigen::VectorXd& lambda) {
    return log_sum_exp(log_q - cs * lambda);
  };

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(j);
  Eigen::VectorXd w(n);
  Eigen::VectorXd residual(j);
  SolverDiagnostics diag;
  bool converged = false;
  for (int iter = 0;; ++iter) {
    Eigen::VectorXd logits = log_q - cs * lambda;
    logits.array() -= logits.maxCoeff();
    w = logits.array().exp();
    w /= w.sum();
    residual = cs.transpose() * w;
    diag.iterations = iter;
    diag.max_violation = residual.cwiseAbs().maxCoeff();
    diag.dual_gradient_norm = residual.norm();
    if (diag.max_violation <= settings.tolerance) {
      converged = true;
      break;
    }
    if (iter >= settings.max_iterations) break;

    // f(lambda) = log sum q exp(-cs lambda); grad f = -residual,
    // Hessian = Cov_w(cs).
    Eigen::MatrixXd hess =
        cs.transpose() * w.asDiagonal() * cs - residual * residual.transpose();
    Eigen::VectorXd step;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    bool newton_ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
    if (newton_ok) {
      step = ldlt.solve(residual);
      newton_ok = step.allFinite() && step.dot(residual) > 0.0;
    }
    if (!newton_ok) {
      step = residual;
      ++diag.gradient_fallbacks;
    }

    const double f0 = dual_objective(lambda);
    const double slope = residual.dot(step);
    double alpha = 1.0;
    Eigen::VectorXd trial = lambda + step;
    while (dual_objective(trial) > f0 - 1e-4 * alpha * slope && alpha > 1e-14) {
      alpha *= 0.5;
      trial = lambda + alpha * step;
    }
    lambda = trial;
    if (!lambda.allFinite() || lambda.norm() > settings.max_dual_norm) {
      std::ostringstream msg;
      msg << "entropy balancing targets appear infeasible: dual norm exceeded "
          << settings.max_dual_norm << " after " << iter + 1
          << " iterations (targets outside the convex hull of the comparison "
             "constraint rows; overlap between groups likely fails)";
      throw InfeasibleTargets(msg.str());
    }
  }

  if (!converged) {
    std::ostringstream msg;
    msg << "entropy balancing did not converge in " << settings.max_iterations
        << " iterations (max standardized violation " << diag.max_violation
        << "); overlap between groups may be insufficient";
    throw NonConvergence(msg.str());
  }

  BalanceWeights out;
  out.comparison_weights = w;
  out.treated_weight =
      problem.n_treated > 0 ? 1.0 / static_cast<double>(problem.n_treated) : 0.0;
  out.dual = lambda.array() / sd.array();
  diag.max_raw_violation = check_balance(w, problem).cwiseAbs().maxCoeff();
  out.diagnostics = diag;
  return out;
}

Eigen::VectorXd check_balance(const Eigen::VectorXd& comparison_weights,
                              const BalanceProblem& problem) {
  if (comparison_weights.size() != problem.n_comparison())
    throw InputError("weight vector does not match the balance problem");
  return problem.constraint_matrix.transpose() * comparison_weights - problem.targets;
}

Eigen::VectorXd check_balance(const BalanceWeights& weights,
                              const BalanceProblem& problem) {
  return check_balance(weights.comparison_weights, problem);
}

double kl_divergence(const Eigen::VectorXd& weights, const Eigen::VectorXd& base_weights) {
  double kl = 0.0;
  for (Index i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) kl += weights[i] * std::log(weights[i] / base_weights[i]);
  return kl;
}

double effective_sample_size(const Eigen::VectorXd& weights) {
  const double s = weights.sum();
  const double s2 = weights.squaredNorm();
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

void write_weights_csv(const BalanceWeights& weights, const BalanceProblem& problem,
                       std::ostream& out) {
  out << "unit,weight\n";
  for (Index i = 0; i < weights.comparison_weights.size(); ++i)
    out << detail::quote_if_needed(problem.comparison_ids.at(static_cast<std::size_t>(i)))
        << ',' << detail::format_double(weights.comparison_weights[i]) << '\n';
}

}  // namespace ebdid
