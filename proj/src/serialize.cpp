#include "ebdid/serialize.hpp"

#include <cmath>

namespace ebdid {

namespace {

Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number_or_null(v[i]));
  return a;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json a = Json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

double get_number(const Json& j, const std::string& key) {
  if (!j.is_number()) throw InputError("'" + key + "' must be a number");
  return j.get<double>();
}

Index get_count(const Json& j, const std::string& key) {
  if (!j.is_number_integer()) throw InputError("'" + key + "' must be an integer");
  return j.get<Index>();
}

Eigen::Vector3d get_vector3(const Json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw InputError("'" + key + "' must be 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) v[i] = get_number(j[i], key);
  return v;
}

Eigen::Matrix3d get_matrix3(const Json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw InputError("'" + key + "' must be a 3x3 array");
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) m.row(i) = get_vector3(j[i], key).transpose();
  return m;
}

}  // namespace

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json to_json(const DgpSpec& s) {
  return Json{{"n0", s.n0},
              {"n1", s.n1},
              {"k_pre", s.k_pre},
              {"k_post", s.k_post},
              {"tau", s.tau},
              {"nu0", vector_json(s.nu0)},
              {"nu1", vector_json(s.nu1)},
              {"gamma0", matrix_json(s.gamma0)},
              {"gamma1", matrix_json(s.gamma1)},
              {"rho", s.rho},
              {"sigma2", s.sigma2}};
}

DgpOverrides dgp_overrides_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("DGP overrides must be a JSON object");
  DgpOverrides o;
  for (const auto& [key, value] : j.items()) {
    if (key == "n0") o.n0 = get_count(value, key);
    else if (key == "n1") o.n1 = get_count(value, key);
    else if (key == "k_pre") o.k_pre = get_count(value, key);
    else if (key == "k_post") o.k_post = get_count(value, key);
    else if (key == "tau") o.tau = get_number(value, key);
    else if (key == "rho") o.rho = get_number(value, key);
    else if (key == "sigma2") o.sigma2 = get_number(value, key);
    else if (key == "nu0") o.nu0 = get_vector3(value, key);
    else if (key == "nu1") o.nu1 = get_vector3(value, key);
    else if (key == "gamma0") o.gamma0 = get_matrix3(value, key);
    else if (key == "gamma1") o.gamma1 = get_matrix3(value, key);
    else throw InputError("unknown DGP field '" + key + "'");
  }
  return o;
}

DgpSpec dgp_spec_from_json(const Json& j, DgpSpec base) {
  const DgpOverrides o = dgp_overrides_from_json(j);
  if (o.n0) base.n0 = *o.n0;
  if (o.n1) base.n1 = *o.n1;
  if (o.k_pre) base.k_pre = *o.k_pre;
  if (o.k_post) base.k_post = *o.k_post;
  if (o.tau) base.tau = *o.tau;
  if (o.rho) base.rho = *o.rho;
  if (o.sigma2) base.sigma2 = *o.sigma2;
  if (o.nu0) base.nu0 = *o.nu0;
  if (o.nu1) base.nu1 = *o.nu1;
  if (o.gamma0) base.gamma0 = *o.gamma0;
  if (o.gamma1) base.gamma1 = *o.gamma1;
  base.validate();
  return base;
}

Json to_json(const DidFit& fit) {
  Json coef = Json::object();
  for (std::size_t i = 0; i < fit.coefficient_names.size(); ++i)
    coef[fit.coefficient_names[i]] = number_or_null(fit.coefficients[static_cast<Index>(i)]);
  return Json{{"time_spec", fit.spec.label()},
              {"weights", fit.weights_label},
              {"tau", number_or_null(fit.tau)},
              {"se", number_or_null(fit.se)},
              {"ci_low", number_or_null(fit.ci_low)},
              {"ci_high", number_or_null(fit.ci_high)},
              {"n_treated", fit.n_treated},
              {"n_comparison", fit.n_comparison},
              {"ess_treated", number_or_null(fit.ess_treated)},
              {"ess_comparison", number_or_null(fit.ess_comparison)},
              {"local_att", fit.local_att},
              {"clusters", fit.n_clusters},
              {"coefficients", coef}};
}

Json to_json(const PretrendTest& t) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < t.interaction_times.size(); ++i) {
    const auto k = static_cast<Index>(i);
    rows.push_back(Json{{"time", t.interaction_times[i]},
                        {"estimate", number_or_null(t.interactions[k])},
                        {"se", number_or_null(t.interaction_se[k])}});
  }
  return Json{{"wald", number_or_null(t.wald)},
              {"df", t.df},
              {"p_value", number_or_null(t.p_value)},
              {"interactions", rows}};
}

Json to_json(const BalanceTable& table) {
  Json rows = Json::array();
  for (const auto& r : table.rows)
    rows.push_back(Json{{"column", r.label},
                        {"treated", number_or_null(r.treated_mean)},
                        {"comparison", number_or_null(r.comparison_mean)},
                        {"comparison_weighted", number_or_null(r.comparison_weighted_mean)}});
  return Json{{"rows", rows},
              {"ess_treated", number_or_null(table.ess_treated)},
              {"ess_comparison", number_or_null(table.ess_comparison)},
              {"ess_comparison_weighted", number_or_null(table.ess_comparison_weighted)}};
}

Json to_json(const ValidationReport& report) {
  auto issues = [](const std::vector<ValidationIssue>& list) {
    Json a = Json::array();
    for (const auto& i : list) {
      Json o{{"code", i.code}, {"message", i.message}};
      if (i.unit) o["unit"] = *i.unit;
      if (i.time) o["time"] = *i.time;
      a.push_back(o);
    }
    return a;
  };
  return Json{{"errors", issues(report.errors)},
              {"warnings", issues(report.warnings)},
              {"counts",
               {{"n_comparison", report.counts.n_comparison},
                {"n_treated", report.counts.n_treated},
                {"k_pre", report.counts.k_pre},
                {"k_post", report.counts.k_post}}}};
}

Json diagnostics_json(const BalanceWeights& w, const BalanceProblem& problem) {
  const Eigen::VectorXd resid = check_balance(w, problem);
  Json constraints = Json::array();
  for (Index j = 0; j < problem.n_constraints(); ++j)
    constraints.push_back(Json{{"column", problem.column_labels[static_cast<std::size_t>(j)]},
                               {"target", number_or_null(problem.targets[j])},
                               {"residual", number_or_null(resid[j])},
                               {"dual", number_or_null(w.dual[j])}});
  return Json{{"iterations", w.diagnostics.iterations},
              {"max_violation", number_or_null(w.diagnostics.max_violation)},
              {"max_raw_violation", number_or_null(w.diagnostics.max_raw_violation)},
              {"dual_gradient_norm", number_or_null(w.diagnostics.dual_gradient_norm)},
              {"gradient_fallbacks", w.diagnostics.gradient_fallbacks},
              {"kl_divergence", number_or_null(kl_divergence(w.comparison_weights,
                                                             problem.base_weights))},
              {"ess", number_or_null(effective_sample_size(w.comparison_weights))},
              {"constraints", constraints},
              {"warnings", problem.warnings}};
}

Json to_json(const MatchSet& m) {
  return Json{{"pairs", m.n_pairs()},
              {"unmatched_treated", m.unmatched_treated_ids},
              {"caliper_sd", m.caliper_sd},
              {"metric", m.metric},
              {"feature_sd", vector_json(m.feature_sd)}};
}

}  // namespace ebdid
