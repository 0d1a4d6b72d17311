#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebdid/error.hpp"

namespace ebdid {

using Index = Eigen::Index;

struct ValidationIssue {
  std::string code;
  std::string message;
  std::optional<std::string> unit;
  std::optional<double> time;
};

struct PanelCounts {
  Index n_comparison = 0;
  Index n_treated = 0;
  Index k_pre = 0;
  Index k_post = 0;
};

struct ValidationReport {
  std::vector<ValidationIssue> errors;
  std::vector<ValidationIssue> warnings;
  PanelCounts counts;

  bool ok() const { return errors.empty(); }
  // One line per issue, errors first.
  std::string summary() const;
};

// Raised when a Panel cannot be constructed; carries the full report.
class ValidationError : public InputError {
 public:
  explicit ValidationError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// Balanced long-format panel: N units observed at the same K times.
///
/// Units are stored sorted by identifier (numerically when every identifier
/// parses as an integer, lexicographically otherwise) and times ascending.
/// Instances are immutable once constructed.
class Panel {
 public:
  /// Validates and sorts. Throws ValidationError when the data violate the
  /// panel invariants (binary group, both groups present, at least one pre
  /// and one post time, finite values, distinct ids).
  static Panel Create(std::vector<std::string> unit_ids,
                      std::vector<int> group,
                      Eigen::VectorXd times,
                      double intervention_time,
                      Eigen::MatrixXd outcomes,
                      Eigen::MatrixXd covariates = {},
                      std::vector<std::string> covariate_names = {});

  Index n_units() const { return static_cast<Index>(unit_ids_.size()); }
  Index n_times() const { return times_.size(); }
  Index n_treated() const { return static_cast<Index>(treated_rows_.size()); }
  Index n_comparison() const {
    return static_cast<Index>(comparison_rows_.size());
  }
  Index k_pre() const { return k_pre_; }
  Index k_post() const { return n_times() - k_pre_; }

  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<int>& group() const { return group_; }
  bool is_treated(Index row) const { return group_[row] == 1; }
  const Eigen::VectorXd& times() const { return times_; }
  double intervention_time() const { return intervention_time_; }
  bool is_post(Index time_index) const {
    return times_[time_index] >= intervention_time_;
  }
  const Eigen::MatrixXd& outcomes() const { return outcomes_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const std::vector<std::string>& covariate_names() const {
    return covariate_names_;
  }
  std::optional<Index> covariate_index(const std::string& name) const;

  // Row indices of each group in panel order.
  const std::vector<Index>& treated_rows() const { return treated_rows_; }
  const std::vector<Index>& comparison_rows() const { return comparison_rows_; }

  PanelCounts counts() const {
    return {n_comparison(), n_treated(), k_pre(), k_post()};
  }

  /// Restriction to times strictly before the intervention time. The
  /// intervention time is kept as metadata, so the result has no post
  /// period; it is intended for trend estimation only.
  Panel pre_panel() const;

  bool operator==(const Panel& other) const;

 private:
  Panel() = default;

  std::vector<std::string> unit_ids_;
  std::vector<int> group_;
  Eigen::VectorXd times_;
  double intervention_time_ = 0.0;
  Eigen::MatrixXd outcomes_;
  Eigen::MatrixXd covariates_;
  std::vector<std::string> covariate_names_;
  std::vector<Index> treated_rows_;
  std::vector<Index> comparison_rows_;
  Index k_pre_ = 0;
};

struct PanelLoad {
  std::optional<Panel> panel;
  ValidationReport report;
};

/// Reads long-format CSV with header `unit,time,group,outcome[,covariate...]`.
/// Never throws on data problems; they are collected in the report.
PanelLoad load_panel(std::istream& in, double intervention_time);
PanelLoad load_panel_file(const std::string& path, double intervention_time);

/// Emits the same schema load_panel reads. Values use shortest round-trip
/// formatting, so a reload reproduces the panel bit for bit.
void write_panel_csv(const Panel& panel, std::ostream& out);

/// Returns the outcome series of every unit with group == 1 (treated) or
/// group == 0 (comparison) as a matrix, rows in panel order.
Eigen::MatrixXd group_outcomes(const Panel& panel, int group);

struct BalanceRow {
  std::string label;
  double treated_mean = 0.0;
  double comparison_mean = 0.0;
  double comparison_weighted_mean = 0.0;
};

struct BalanceTable {
  std::vector<BalanceRow> rows;
  double ess_treated = 0.0;
  double ess_comparison = 0.0;
  double ess_comparison_weighted = 0.0;
};

/// Group means of the selected columns. A selector is either a covariate
/// name or `outcome@<time>` for the outcome level at that time.
/// `comparison_weights` is indexed like panel.comparison_rows(); pass an
/// empty vector for the unweighted table.
BalanceTable balance_table(const Panel& panel,
                           std::span<const std::string> columns,
                           const Eigen::VectorXd& comparison_weights = {});

}  // namespace ebdid
