#pragma once

#include <Eigen/Dense>

#include <string>

namespace ebdid {

// Per-unit regression weights for both groups, indexed like
// Panel::treated_rows() and Panel::comparison_rows(). Zero is allowed and
// drops the unit from the fit.
struct UnitWeights {
  Eigen::VectorXd treated;
  Eigen::VectorXd comparison;
  std::string label;
};

// Kish effective sample size (sum w)^2 / sum w^2.
double effective_sample_size(const Eigen::VectorXd& weights);

}  // namespace ebdid
