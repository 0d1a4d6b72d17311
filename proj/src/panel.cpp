#include "ebdid/panel.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "ebdid/weights.hpp"
#include "text_util.hpp"

namespace ebdid {

namespace {

std::string describe(const ValidationIssue& issue) {
  std::string s = issue.code + ": " + issue.message;
  return s;
}

std::vector<std::size_t> unit_order(const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  bool all_integer = std::all_of(ids.begin(), ids.end(), [](const auto& id) {
    return detail::parse_integer(id).has_value();
  });
  if (all_integer) {
    std::vector<long long> keys;
    keys.reserve(ids.size());
    for (const auto& id : ids) keys.push_back(*detail::parse_integer(id));
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return keys[a] < keys[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return ids[a] < ids[b]; });
  }
  return order;
}

void add_error(ValidationReport& r, std::string code, std::string message,
               std::optional<std::string> unit = std::nullopt,
               std::optional<double> time = std::nullopt) {
  r.errors.push_back({std::move(code), std::move(message), std::move(unit), time});
}

void add_warning(ValidationReport& r, std::string code, std::string message) {
  r.warnings.push_back({std::move(code), std::move(message), std::nullopt,
                        std::nullopt});
}

}  // namespace

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& e : errors) os << "error " << describe(e) << '\n';
  for (const auto& w : warnings) os << "warning " << describe(w) << '\n';
  return os.str();
}

ValidationError::ValidationError(ValidationReport report)
    : InputError("invalid panel:\n" + report.summary()),
      report_(std::move(report)) {}

Panel Panel::Create(std::vector<std::string> unit_ids, std::vector<int> group,
                    Eigen::VectorXd times, double intervention_time,
                    Eigen::MatrixXd outcomes, Eigen::MatrixXd covariates,
                    std::vector<std::string> covariate_names) {
  ValidationReport report;
  const auto n = static_cast<Index>(unit_ids.size());
  if (static_cast<Index>(group.size()) != n || outcomes.rows() != n ||
      outcomes.cols() != times.size()) {
    add_error(report, "shape", "unit ids, group, outcomes and times disagree in size");
    throw ValidationError(std::move(report));
  }
  if (covariates.size() == 0) covariates.resize(n, 0);
  if (covariates.rows() != n ||
      covariates.cols() != static_cast<Index>(covariate_names.size())) {
    add_error(report, "shape", "covariate matrix does not match unit count or names");
    throw ValidationError(std::move(report));
  }

  {
    std::set<std::string> seen;
    for (const auto& id : unit_ids)
      if (!seen.insert(id).second)
        add_error(report, "duplicate_unit", "unit '" + id + "' appears twice", id);
  }
  for (Index i = 0; i < n; ++i) {
    if (group[i] != 0 && group[i] != 1)
      add_error(report, "group_not_binary",
                "group of unit '" + unit_ids[i] + "' is " + std::to_string(group[i]),
                unit_ids[i]);
  }
  if (!outcomes.allFinite())
    add_error(report, "non_finite_outcome", "outcome matrix has NaN or Inf");
  if (!covariates.allFinite())
    add_error(report, "non_finite_covariate", "covariate matrix has NaN or Inf");

  // Sort times ascending and reject duplicates.
  std::vector<Index> time_order(times.size());
  std::iota(time_order.begin(), time_order.end(), 0);
  std::stable_sort(time_order.begin(), time_order.end(),
                   [&](Index a, Index b) { return times[a] < times[b]; });
  for (std::size_t k = 1; k < time_order.size(); ++k) {
    if (times[time_order[k]] == times[time_order[k - 1]])
      add_error(report, "duplicate_time", "time listed twice", std::nullopt,
                times[time_order[k]]);
  }
  if (times.size() == 0 || !times.allFinite()) {
    add_error(report, "times", "times must be a non-empty set of finite values");
  }

  Index k_pre = 0;
  for (Index k = 0; k < times.size(); ++k)
    if (times[k] < intervention_time) ++k_pre;
  const Index k_post = times.size() - k_pre;
  if (times.size() > 0) {
    const double t_first = times.minCoeff();
    const double t_last = times.maxCoeff();
    if (!(intervention_time > t_first && intervention_time <= t_last))
      add_error(report, "intervention_time",
                "intervention time must lie in (first time, last time]",
                std::nullopt, intervention_time);
  }

  Index n1 = std::count(group.begin(), group.end(), 1);
  Index n0 = std::count(group.begin(), group.end(), 0);
  report.counts = {n0, n1, k_pre, k_post};
  if (n1 == 0) add_error(report, "empty_group", "no treated units (group = 1)");
  if (n0 == 0) add_error(report, "empty_group", "no comparison units (group = 0)");
  if (k_pre < 2 && k_pre >= 1)
    add_warning(report, "few_pre_periods",
                "fewer than 2 pre-periods; trend estimation is unavailable, "
                "the 2x2 difference-in-differences still is");

  if (!report.ok()) throw ValidationError(std::move(report));

  Panel p;
  const auto order = unit_order(unit_ids);
  p.unit_ids_.reserve(n);
  p.group_.reserve(n);
  p.outcomes_.resize(n, times.size());
  p.covariates_.resize(n, covariates.cols());
  p.times_.resize(times.size());
  for (Index k = 0; k < times.size(); ++k) p.times_[k] = times[time_order[k]];
  for (Index r = 0; r < n; ++r) {
    const auto src = static_cast<Index>(order[r]);
    p.unit_ids_.push_back(std::move(unit_ids[src]));
    p.group_.push_back(group[src]);
    for (Index k = 0; k < times.size(); ++k)
      p.outcomes_(r, k) = outcomes(src, time_order[k]);
    p.covariates_.row(r) = covariates.row(src);
    (p.group_.back() == 1 ? p.treated_rows_ : p.comparison_rows_).push_back(r);
  }
  p.intervention_time_ = intervention_time;
  p.covariate_names_ = std::move(covariate_names);
  p.k_pre_ = k_pre;
  return p;
}

std::optional<Index> Panel::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  if (it == covariate_names_.end()) return std::nullopt;
  return static_cast<Index>(it - covariate_names_.begin());
}

Panel Panel::pre_panel() const {
  Panel p = *this;
  p.times_ = times_.head(k_pre_);
  p.outcomes_ = outcomes_.leftCols(k_pre_);
  return p;
}

bool Panel::operator==(const Panel& o) const {
  auto same = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 || a == b);
  };
  return unit_ids_ == o.unit_ids_ && group_ == o.group_ &&
         times_.size() == o.times_.size() && times_ == o.times_ &&
         intervention_time_ == o.intervention_time_ &&
         same(outcomes_, o.outcomes_) && same(covariates_, o.covariates_) &&
         covariate_names_ == o.covariate_names_;
}

PanelLoad load_panel(std::istream& in, double intervention_time) {
  PanelLoad result;
  ValidationReport& report = result.report;

  std::string line;
  if (!std::getline(in, line)) {
    add_error(report, "empty_input", "no header line");
    return result;
  }
  const auto header = detail::split_csv_line(line);
  auto col = [&](const char* name) -> std::optional<std::size_t> {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (detail::trim(header[c]) == name) return c;
    return std::nullopt;
  };
  const auto c_unit = col("unit"), c_time = col("time"), c_group = col("group"),
             c_outcome = col("outcome");
  if (!c_unit || !c_time || !c_group || !c_outcome) {
    add_error(report, "header", "header must contain unit,time,group,outcome");
    return result;
  }
  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == *c_unit || c == *c_time || c == *c_group || c == *c_outcome) continue;
    cov_cols.push_back(c);
    cov_names.emplace_back(detail::trim(header[c]));
  }

  struct UnitRecord {
    std::optional<int> group;
    std::map<double, double> outcomes;
    std::vector<std::optional<double>> covariates;
  };
  std::map<std::string, UnitRecord> units;
  std::vector<std::string> first_seen;
  std::set<double> all_times;
  std::set<std::string> flipped;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (f.size() != header.size()) {
      add_error(report, "field_count", where + ": expected " +
                                           std::to_string(header.size()) +
                                           " fields, got " + std::to_string(f.size()));
      continue;
    }
    std::string unit(detail::trim(f[*c_unit]));
    auto t = detail::parse_double(f[*c_time]);
    if (!t || !std::isfinite(*t)) {
      add_error(report, "non_numeric_time", where + ": time '" + f[*c_time] + "'", unit);
      continue;
    }
    auto [it, inserted] = units.try_emplace(unit);
    UnitRecord& rec = it->second;
    if (inserted) {
      first_seen.push_back(unit);
      rec.covariates.assign(cov_cols.size(), std::nullopt);
    }
    all_times.insert(*t);

    auto g = detail::parse_integer(f[*c_group]);
    if (!g || (*g != 0 && *g != 1)) {
      add_error(report, "group_not_binary",
                where + ": group '" + f[*c_group] + "' is not 0/1", unit, *t);
    } else if (rec.group && *rec.group != *g) {
      if (flipped.insert(unit).second)
        add_error(report, "group_flip",
                  "unit '" + unit + "' changes group within the panel", unit, *t);
    } else {
      rec.group = static_cast<int>(*g);
    }

    auto y = detail::parse_double(f[*c_outcome]);
    if (!y || !std::isfinite(*y)) {
      add_error(report, "non_numeric_outcome",
                "unit '" + unit + "' time " + detail::format_double(*t) +
                    ": outcome '" + f[*c_outcome] + "' is not numeric",
                unit, *t);
    } else if (!rec.outcomes.emplace(*t, *y).second) {
      add_error(report, "duplicate_row",
                "unit '" + unit + "' has two rows at time " + detail::format_double(*t),
                unit, *t);
    }

    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      auto v = detail::parse_double(f[cov_cols[c]]);
      if (!v || !std::isfinite(*v)) {
        add_error(report, "non_numeric_covariate",
                  "unit '" + unit + "': covariate '" + cov_names[c] + "' value '" +
                      f[cov_cols[c]] + "' is not numeric",
                  unit, *t);
      } else if (rec.covariates[c] && *rec.covariates[c] != *v) {
        add_error(report, "covariate_varies",
                  "unit '" + unit + "': covariate '" + cov_names[c] +
                      "' is not constant over time",
                  unit, *t);
      } else {
        rec.covariates[c] = v;
      }
    }
  }

  if (units.empty()) {
    add_error(report, "empty_input", "no data rows");
    return result;
  }

  // Balanced-panel check: every unit at every time.
  for (const auto& id : first_seen) {
    const UnitRecord& rec = units.at(id);
    for (double t : all_times) {
      if (!rec.outcomes.count(t)) {
        bool already = std::any_of(report.errors.begin(), report.errors.end(),
                                   [&](const ValidationIssue& e) {
                                     return e.unit == id && e.time == t;
                                   });
        if (!already)
          add_error(report, "missing_cell",
                    "unit '" + id + "' has no row at time " + detail::format_double(t),
                    id, t);
      }
    }
  }
  if (!report.ok()) return result;

  const auto n = static_cast<Index>(first_seen.size());
  const auto k = static_cast<Index>(all_times.size());
  Eigen::VectorXd times(k);
  {
    Index j = 0;
    for (double t : all_times) times[j++] = t;
  }
  Eigen::MatrixXd y(n, k);
  Eigen::MatrixXd z(n, static_cast<Index>(cov_cols.size()));
  std::vector<int> group(n);
  for (Index i = 0; i < n; ++i) {
    const UnitRecord& rec = units.at(first_seen[i]);
    group[i] = rec.group.value_or(-1);
    Index j = 0;
    for (const auto& [t, v] : rec.outcomes) y(i, j++) = v;
    for (std::size_t c = 0; c < cov_cols.size(); ++c)
      z(i, static_cast<Index>(c)) = rec.covariates[c].value_or(0.0);
  }
  try {
    result.panel = Panel::Create(first_seen, std::move(group), std::move(times),
                                 intervention_time, std::move(y), std::move(z),
                                 cov_names);
    // Re-derive warnings and counts from the constructed panel.
    const Panel& p = *result.panel;
    report.counts = p.counts();
    if (p.k_pre() < 2)
      add_warning(report, "few_pre_periods",
                  "fewer than 2 pre-periods; trend estimation is unavailable, "
                  "the 2x2 difference-in-differences still is");
  } catch (const ValidationError& e) {
    for (const auto& issue : e.report().errors) report.errors.push_back(issue);
    report.counts = e.report().counts;
  }
  return result;
}

PanelLoad load_panel_file(const std::string& path, double intervention_time) {
  std::ifstream in(path);
  if (!in) {
    PanelLoad result;
    add_error(result.report, "io", "cannot open '" + path + "'");
    return result;
  }
  return load_panel(in, intervention_time);
}

void write_panel_csv(const Panel& panel, std::ostream& out) {
  out << "unit,time,group,outcome";
  for (const auto& name : panel.covariate_names())
    out << ',' << detail::quote_if_needed(name);
  out << '\n';
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (Index k = 0; k < panel.n_times(); ++k) {
      out << detail::quote_if_needed(panel.unit_ids()[i]) << ','
          << detail::format_double(panel.times()[k]) << ',' << panel.group()[i]
          << ',' << detail::format_double(panel.outcomes()(i, k));
      for (Index c = 0; c < panel.covariates().cols(); ++c)
        out << ',' << detail::format_double(panel.covariates()(i, c));
      out << '\n';
    }
  }
}

Eigen::MatrixXd group_outcomes(const Panel& panel, int group) {
  const auto& rows = group == 1 ? panel.treated_rows() : panel.comparison_rows();
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), panel.n_times());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Index>(r)) = panel.outcomes().row(rows[r]);
  return out;
}

BalanceTable balance_table(const Panel& panel, std::span<const std::string> columns,
                           const Eigen::VectorXd& comparison_weights) {
  const Index n0 = panel.n_comparison();
  const Index n1 = panel.n_treated();
  Eigen::VectorXd w;
  if (comparison_weights.size() == 0) {
    w = Eigen::VectorXd::Constant(n0, 1.0 / static_cast<double>(n0));
  } else {
    if (comparison_weights.size() != n0)
      throw InputError("balance_table: " + std::to_string(comparison_weights.size()) +
                       " weights for " + std::to_string(n0) + " comparison units");
    if ((comparison_weights.array() < 0.0).any() || comparison_weights.sum() <= 0.0)
      throw InputError("balance_table: weights must be non-negative with positive sum");
    w = comparison_weights / comparison_weights.sum();
  }

  BalanceTable table;
  for (const auto& selector : columns) {
    std::function<double(Index)> value;
    if (selector.rfind("outcome@", 0) == 0) {
      auto t = detail::parse_double(std::string_view(selector).substr(8));
      if (!t) throw InputError("balance_table: bad selector '" + selector + "'");
      Index k = -1;
      for (Index j = 0; j < panel.n_times(); ++j)
        if (panel.times()[j] == *t) k = j;
      if (k < 0) throw InputError("balance_table: no time " + selector.substr(8));
      value = [&panel, k](Index row) { return panel.outcomes()(row, k); };
    } else {
      auto c = panel.covariate_index(selector);
      if (!c) throw InputError("balance_table: unknown column '" + selector + "'");
      value = [&panel, c = *c](Index row) { return panel.covariates()(row, c); };
    }
    BalanceRow row{selector, 0.0, 0.0, 0.0};
    for (Index r : panel.treated_rows()) row.treated_mean += value(r);
    row.treated_mean /= static_cast<double>(n1);
    for (Index j = 0; j < n0; ++j) {
      const double v = value(panel.comparison_rows()[j]);
      row.comparison_mean += v;
      row.comparison_weighted_mean += w[j] * v;
    }
    row.comparison_mean /= static_cast<double>(n0);
    table.rows.push_back(std::move(row));
  }
  table.ess_treated = static_cast<double>(n1);
  table.ess_comparison = static_cast<double>(n0);
  table.ess_comparison_weighted = effective_sample_size(w);
  return table;
}

}  // namespace ebdid
