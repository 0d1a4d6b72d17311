#include "ebdid/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ebdid/matching.hpp"
#include "text_util.hpp"

namespace ebdid {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string na_or(double v) { return std::isfinite(v) ? detail::format_double(v) : "NA"; }

BalanceMethod parse_balance_method(const std::string& s) {
  if (s == "none") return BalanceMethod::kNone;
  if (s == "entropy") return BalanceMethod::kEntropy;
  if (s == "match") return BalanceMethod::kMatch;
  throw InputError("unknown balance method '" + s + "' (expected none, entropy or match)");
}

std::string balance_method_name(BalanceMethod m) {
  switch (m) {
    case BalanceMethod::kNone: return "none";
    case BalanceMethod::kEntropy: return "entropy";
    case BalanceMethod::kMatch: return "match";
  }
  return "unknown";
}

RowWeighting parse_weighting(const std::string& s) {
  if (s == "group_normalized") return RowWeighting::kGroupNormalized;
  if (s == "treated_unit") return RowWeighting::kTreatedUnit;
  throw InputError("unknown weighting '" + s + "' (expected group_normalized or treated_unit)");
}

std::string weighting_name(RowWeighting w) {
  return w == RowWeighting::kGroupNormalized ? "group_normalized" : "treated_unit";
}

std::set<int> parse_moments(const Json& j) {
  if (!j.is_array() || j.empty()) throw InputError("'moment_orders' must be a non-empty array");
  std::set<int> out;
  for (const auto& m : j) {
    if (!m.is_number_integer() || (m.get<int>() != 1 && m.get<int>() != 2))
      throw InputError("moment orders must be 1 or 2");
    out.insert(m.get<int>());
  }
  return out;
}

std::vector<double> parse_number_list(const Json& j, const std::string& key) {
  if (!j.is_array()) throw InputError("'" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw InputError("'" + key + "' must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

SolverSettings parse_solver(const Json& j) {
  if (!j.is_object()) throw InputError("'solver' must be an object");
  SolverSettings s;
  for (const auto& [key, v] : j.items()) {
    if (key == "tolerance" && v.is_number()) s.tolerance = v.get<double>();
    else if (key == "max_iterations" && v.is_number_integer()) s.max_iterations = v.get<int>();
    else if (key == "max_dual_norm" && v.is_number()) s.max_dual_norm = v.get<double>();
    else throw InputError("bad solver setting '" + key + "'");
  }
  if (!(s.tolerance > 0.0) || s.max_iterations < 1 || !(s.max_dual_norm > 0.0))
    throw InputError("solver settings must be positive");
  return s;
}

Json solver_json(const SolverSettings& s) {
  return Json{{"tolerance", s.tolerance},
              {"max_iterations", s.max_iterations},
              {"max_dual_norm", s.max_dual_norm}};
}

std::string get_string(const Json& j, const std::string& key) {
  if (!j.is_string()) throw InputError("'" + key + "' must be a string");
  return j.get<std::string>();
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

void check_written(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

// Per-replication outcome of one arm.
struct ArmResult {
  double bias = kNaN;
  double unmatched = kNaN;
  double ess = kNaN;
};

}  // namespace

TrendFeature parse_trend_feature(const std::string& name) {
  if (name == "linear") return TrendFeature::kLinear;
  if (name == "first_differences") return TrendFeature::kFirstDifferences;
  if (name == "quadratic") return TrendFeature::kQuadratic;
  throw InputError("unknown trend feature '" + name +
                   "' (expected linear, first_differences or quadratic)");
}

std::string trend_feature_name(TrendFeature f) {
  switch (f) {
    case TrendFeature::kLinear: return "linear";
    case TrendFeature::kFirstDifferences: return "first_differences";
    case TrendFeature::kQuadratic: return "quadratic";
  }
  return "unknown";
}

TrendMatrix compute_trends(const Panel& panel, TrendFeature feature) {
  switch (feature) {
    case TrendFeature::kLinear: return polynomial_trends(panel, 1);
    case TrendFeature::kQuadratic: return polynomial_trends(panel, 2);
    case TrendFeature::kFirstDifferences: return first_difference_trends(panel);
  }
  throw InputError("unknown trend feature");
}

std::string Arm::label() const {
  if (balance == BalanceMethod::kNone) return "none";
  return balance_method_name(balance) + "_" + trend_feature_name(trend);
}

void ExperimentConfig::validate() const {
  if (rho_grid.empty()) throw InputError("rho_grid is empty");
  if (replications < 1) throw InputError("replications must be >= 1");
  if (arms.empty()) throw InputError("no arms configured");
  if (std::none_of(arms.begin(), arms.end(),
                   [](const Arm& a) { return a.balance == BalanceMethod::kNone; }))
    throw InputError("at least one arm must use balance 'none'");
  if (moment_orders.empty()) throw InputError("moment_orders is empty");
  if (!(caliper_sd > 0.0)) throw InputError("caliper_sd must be positive");
  if (overrides.rho) throw InputError("rho comes from rho_grid, not overrides");
  if (overrides.sigma2 && !sigma2_grid.empty())
    throw InputError("sigma2 is set both in overrides and sigma2_grid");
  DgpOverrides o = overrides;
  for (double rho : rho_grid) {
    o.rho = rho;
    if (sigma2_grid.empty()) {
      scenario_spec(scenario, o);
    } else {
      for (double s2 : sigma2_grid) {
        o.sigma2 = s2;
        scenario_spec(scenario, o);
      }
    }
  }
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("experiment config must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, v] : j.items()) {
    if (key == "scenario") {
      cfg.scenario = parse_scenario(get_string(v, key));
    } else if (key == "overrides") {
      cfg.overrides = dgp_overrides_from_json(v);
    } else if (key == "rho_grid") {
      cfg.rho_grid = parse_number_list(v, key);
    } else if (key == "sigma2_grid") {
      cfg.sigma2_grid = parse_number_list(v, key);
    } else if (key == "replications") {
      if (!v.is_number_integer()) throw InputError("'replications' must be an integer");
      cfg.replications = v.get<int>();
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw InputError("'seed' must be a non-negative integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "arms") {
      if (!v.is_array()) throw InputError("'arms' must be an array");
      for (const auto& a : v) {
        if (!a.is_object()) throw InputError("each arm must be an object");
        Arm arm;
        for (const auto& [ak, av] : a.items()) {
          if (ak == "balance") arm.balance = parse_balance_method(get_string(av, ak));
          else if (ak == "trend") arm.trend = parse_trend_feature(get_string(av, ak));
          else if (ak == "time") arm.time = TimeSpec::Parse(get_string(av, ak));
          else throw InputError("unknown arm field '" + ak + "'");
        }
        cfg.arms.push_back(arm);
      }
    } else if (key == "moment_orders") {
      cfg.moment_orders = parse_moments(v);
    } else if (key == "caliper_sd") {
      if (!v.is_number()) throw InputError("'caliper_sd' must be a number");
      cfg.caliper_sd = v.get<double>();
    } else if (key == "weighting") {
      cfg.did.weighting = parse_weighting(get_string(v, key));
    } else if (key == "solver") {
      cfg.solver = parse_solver(v);
    } else if (key == "output_dir") {
      cfg.output_dir = get_string(v, key);
    } else if (key == "description") {
      // free text, ignored
    } else {
      throw InputError("unknown experiment config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(read_json_file(path));
}

Json to_json(const ExperimentConfig& cfg) {
  Json arms = Json::array();
  for (const auto& a : cfg.arms)
    arms.push_back(Json{{"balance", balance_method_name(a.balance)},
                        {"trend", trend_feature_name(a.trend)},
                        {"time", a.time.label()}});
  Json j{{"scenario", scenario_name(cfg.scenario)},
         {"rho_grid", cfg.rho_grid},
         {"replications", cfg.replications},
         {"seed", cfg.seed},
         {"arms", arms},
         {"moment_orders", cfg.moment_orders},
         {"caliper_sd", cfg.caliper_sd},
         {"weighting", weighting_name(cfg.did.weighting)},
         {"solver", solver_json(cfg.solver)}};
  if (!cfg.sigma2_grid.empty()) j["sigma2_grid"] = cfg.sigma2_grid;
  return j;
}

const BiasRow* BiasReport::find(const std::string& arm, const std::string& time_spec,
                                std::size_t grid_index) const {
  const std::size_t n_arms = config.arms.size();
  for (std::size_t a = 0; a < n_arms; ++a) {
    const BiasRow& r = rows[grid_index * n_arms + a];
    if (r.arm == arm && r.time_spec == time_spec) return &r;
  }
  return nullptr;
}

BiasReport run_experiment(const ExperimentConfig& cfg, unsigned threads) {
  cfg.validate();
  BiasReport report;
  report.config = cfg;

  std::vector<DgpSpec> specs;
  for (double rho : cfg.rho_grid) {
    const std::vector<double> s2 =
        cfg.sigma2_grid.empty() ? std::vector<double>{kNaN} : cfg.sigma2_grid;
    for (double sigma2 : s2) {
      DgpOverrides o = cfg.overrides;
      o.rho = rho;
      if (std::isfinite(sigma2)) o.sigma2 = sigma2;
      specs.push_back(scenario_spec(cfg.scenario, o));
      report.grid.push_back({rho, specs.back().sigma2});
    }
  }

  const std::size_t n_grid = specs.size();
  const std::size_t n_rep = static_cast<std::size_t>(cfg.replications);
  const std::size_t n_arms = cfg.arms.size();
  std::vector<ArmResult> results(n_grid * n_rep * n_arms);

  auto run_one = [&](std::size_t g, std::size_t r) {
    const DgpSpec& spec = specs[g];
    const Panel panel = generate_panel(spec, substream_seed(cfg.seed, g, r));
    std::map<TrendFeature, TrendMatrix> trends;
    auto trends_for = [&](TrendFeature f) -> const TrendMatrix& {
      auto it = trends.find(f);
      if (it == trends.end()) it = trends.emplace(f, compute_trends(panel, f)).first;
      return it->second;
    };
    // Weights per (method, trend), shared by arms that differ only in time spec.
    struct Cached {
      std::optional<UnitWeights> weights;
      double unmatched = kNaN;
      bool failed = false;
    };
    std::map<std::pair<BalanceMethod, TrendFeature>, Cached> cache;

    for (std::size_t a = 0; a < n_arms; ++a) {
      const Arm& arm = cfg.arms[a];
      ArmResult& out = results[(g * n_rep + r) * n_arms + a];
      try {
        if (arm.balance == BalanceMethod::kNone) {
          const DidFit fit = fit_did(panel, arm.time, cfg.did);
          out.bias = fit.tau - spec.tau;
          out.ess = fit.ess_comparison;
          continue;
        }
        auto key = std::make_pair(arm.balance, arm.trend);
        auto it = cache.find(key);
        if (it == cache.end()) {
          Cached c;
          try {
            const TrendMatrix& tm = trends_for(arm.trend);
            if (arm.balance == BalanceMethod::kEntropy) {
              const BalanceProblem prob = build_constraints(panel, tm, {}, cfg.moment_orders);
              c.weights = solve_entropy_balance(prob, cfg.solver).unit_weights(panel.n_treated());
            } else {
              const MatchSet ms =
                  match_nearest(treated_trends(tm, panel), comparison_trends(tm, panel),
                                cfg.caliper_sd);
              c.unmatched = static_cast<double>(ms.unmatched_treated.size()) /
                            static_cast<double>(panel.n_treated());
              c.weights = match_weights(ms, panel);
            }
          } catch (const NumericalError&) {
            c.failed = true;
          }
          it = cache.emplace(key, std::move(c)).first;
        }
        out.unmatched = it->second.unmatched;
        if (it->second.failed) continue;
        const DidFit fit = fit_did(panel, *it->second.weights, arm.time, cfg.did);
        out.bias = fit.tau - spec.tau;
        out.ess = fit.ess_comparison;
      } catch (const NumericalError&) {
        out.bias = kNaN;
      }
    }
  };

  const std::size_t n_tasks = n_grid * n_rep;
  unsigned n_threads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n_tasks));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      try {
        run_one(task / n_rep, task % n_rep);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_tasks);
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);

  for (std::size_t g = 0; g < n_grid; ++g) {
    const double reliability = trend_reliability(specs[g]).value;
    const std::size_t first_row = report.rows.size();
    for (std::size_t a = 0; a < n_arms; ++a) {
      BiasRow row;
      row.arm = cfg.arms[a].label();
      row.time_spec = cfg.arms[a].time.label();
      row.point = report.grid[g];
      row.reliability = reliability;
      double sum = 0.0, sum_unmatched = 0.0, sum_ess = 0.0;
      int n_unmatched = 0;
      for (std::size_t r = 0; r < n_rep; ++r) {
        const ArmResult& res = results[(g * n_rep + r) * n_arms + a];
        if (std::isfinite(res.unmatched)) {
          sum_unmatched += res.unmatched;
          ++n_unmatched;
        }
        if (!std::isfinite(res.bias)) continue;
        ++row.successes;
        sum += res.bias;
        sum_ess += res.ess;
      }
      row.fail_rate = 1.0 - static_cast<double>(row.successes) / static_cast<double>(n_rep);
      row.unmatched_fraction = n_unmatched > 0 ? sum_unmatched / n_unmatched : kNaN;
      if (row.successes > 0) {
        row.mean_bias = sum / row.successes;
        row.mean_ess_comparison = sum_ess / row.successes;
        double ss = 0.0;
        for (std::size_t r = 0; r < n_rep; ++r) {
          const double b = results[(g * n_rep + r) * n_arms + a].bias;
          if (std::isfinite(b)) ss += (b - row.mean_bias) * (b - row.mean_bias);
        }
        row.mc_se = row.successes > 1
                        ? std::sqrt(ss / (row.successes - 1) / row.successes)
                        : kNaN;
      } else {
        row.mean_bias = kNaN;
        row.mc_se = kNaN;
        row.mean_ess_comparison = kNaN;
        report.warnings.push_back("arm " + row.arm + " (" + row.time_spec +
                                  ") failed in every replication at rho=" +
                                  detail::format_double(row.point.rho));
      }
      report.rows.push_back(row);
    }
    for (std::size_t a = 0; a < n_arms; ++a) {
      BiasRow& row = report.rows[first_row + a];
      if (cfg.arms[a].balance == BalanceMethod::kNone) {
        row.pbr = std::isfinite(row.mean_bias) ? std::optional<double>(0.0) : std::nullopt;
        continue;
      }
      for (std::size_t b = 0; b < n_arms; ++b) {
        const BiasRow& base = report.rows[first_row + b];
        if (cfg.arms[b].balance == BalanceMethod::kNone && base.time_spec == row.time_spec) {
          if (std::isfinite(row.mean_bias))
            row.pbr = percent_bias_reduction(row.mean_bias, base.mean_bias);
          break;
        }
      }
    }
  }
  if (n_rep == 1) report.warnings.push_back("one replication: Monte Carlo SE undefined");
  return report;
}

void write_bias_csv(const BiasReport& report, std::ostream& out) {
  out << "arm,time_spec,rho,mean_bias,mc_se,pbr,reliability,fail_rate\n";
  for (const auto& r : report.rows)
    out << r.arm << ',' << r.time_spec << ',' << detail::format_double(r.point.rho) << ','
        << na_or(r.mean_bias) << ',' << na_or(r.mc_se) << ',' << na_or(r.pbr.value_or(kNaN))
        << ',' << na_or(r.reliability) << ',' << na_or(r.fail_rate) << '\n';
}

Json to_json(const BiasReport& report) {
  Json rows = Json::array();
  for (const auto& r : report.rows) {
    Json row{{"arm", r.arm},
             {"time_spec", r.time_spec},
             {"rho", r.point.rho},
             {"sigma2", r.point.sigma2},
             {"replications_ok", r.successes},
             {"mean_bias", number_or_null(r.mean_bias)},
             {"mc_se", number_or_null(r.mc_se)},
             {"pbr", number_or_null(r.pbr.value_or(kNaN))},
             {"reliability", number_or_null(r.reliability)},
             {"fail_rate", number_or_null(r.fail_rate)},
             {"mean_ess_comparison", number_or_null(r.mean_ess_comparison)}};
    if (std::isfinite(r.unmatched_fraction))
      row["unmatched_fraction"] = r.unmatched_fraction;
    rows.push_back(row);
  }
  return Json{{"config", to_json(report.config)}, {"rows", rows}, {"warnings", report.warnings}};
}

void write_pbr_plotdata(const BiasReport& report, std::ostream& out) {
  out << "arm,time_spec,rho,pbr\n";
  for (const auto& r : report.rows)
    out << r.arm << ',' << r.time_spec << ',' << detail::format_double(r.point.rho) << ','
        << na_or(r.pbr.value_or(kNaN)) << '\n';
}

std::vector<HistogramBin> trend_histogram(const TrendMatrix& trends, const Panel& panel,
                                          Index feature, int bins) {
  if (bins < 1) throw InputError("histogram needs at least one bin");
  if (feature < 0 || feature >= trends.n_features())
    throw InputError("histogram feature out of range");
  if (trends.n_units() != panel.n_units())
    throw InputError("trend matrix does not cover the panel units");
  const Eigen::VectorXd v = trends.features.col(feature);
  double lo = v.minCoeff();
  double hi = v.maxCoeff();
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<HistogramBin> out;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < bins; ++b) out.push_back({a, lo + b * width, lo + (b + 1) * width, 0});
  for (Index i = 0; i < v.size(); ++i) {
    int b = static_cast<int>(std::floor((v[i] - lo) / width));
    b = std::clamp(b, 0, bins - 1);
    ++out[static_cast<std::size_t>(panel.group()[i] * bins + b)].count;
  }
  return out;
}

void write_histogram_csv(const std::vector<HistogramBin>& hist, std::ostream& out) {
  out << "group,bin,count\n";
  for (const auto& b : hist)
    out << b.group << ',' << detail::format_double(0.5 * (b.low + b.high)) << ',' << b.count
        << '\n';
}

OverlapSummary overlap_summary(const TrendMatrix& trends, const Panel& panel) {
  if (trends.n_units() != panel.n_units())
    throw InputError("trend matrix does not cover the panel units");
  OverlapSummary out;
  const auto names = trends.feature_names();
  std::vector<bool> outside(panel.treated_rows().size(), false);
  for (Index m = 0; m < trends.n_features(); ++m) {
    FeatureOverlap f;
    f.feature = names[static_cast<std::size_t>(m)];
    f.treated_min = f.comparison_min = std::numeric_limits<double>::infinity();
    f.treated_max = f.comparison_max = -std::numeric_limits<double>::infinity();
    for (Index r : panel.treated_rows()) {
      f.treated_min = std::min(f.treated_min, trends.features(r, m));
      f.treated_max = std::max(f.treated_max, trends.features(r, m));
    }
    for (Index r : panel.comparison_rows()) {
      f.comparison_min = std::min(f.comparison_min, trends.features(r, m));
      f.comparison_max = std::max(f.comparison_max, trends.features(r, m));
    }
    for (std::size_t k = 0; k < panel.treated_rows().size(); ++k) {
      const Index r = panel.treated_rows()[k];
      const double v = trends.features(r, m);
      if (v < f.comparison_min || v > f.comparison_max) {
        f.treated_outside.push_back(panel.unit_ids()[r]);
        outside[k] = true;
      }
    }
    out.features.push_back(std::move(f));
  }
  out.n_treated_outside = std::count(outside.begin(), outside.end(), true);
  return out;
}

Json to_json(const OverlapSummary& overlap) {
  Json features = Json::array();
  for (const auto& f : overlap.features)
    features.push_back(Json{{"feature", f.feature},
                            {"treated_range", {f.treated_min, f.treated_max}},
                            {"comparison_range", {f.comparison_min, f.comparison_max}},
                            {"treated_outside_count", f.treated_outside.size()},
                            {"treated_outside", f.treated_outside}});
  return Json{{"features", features}, {"treated_outside_any", overlap.n_treated_outside}};
}

AnalysisConfig analysis_config_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("analysis config must be a JSON object");
  AnalysisConfig cfg;
  bool have_te = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "panel") {
      cfg.panel_path = get_string(v, key);
    } else if (key == "intervention_time") {
      if (!v.is_number()) throw InputError("'intervention_time' must be a number");
      cfg.intervention_time = v.get<double>();
      have_te = true;
    } else if (key == "covariates" || key == "balance_columns") {
      if (!v.is_array()) throw InputError("'" + key + "' must be an array of strings");
      std::vector<std::string> list;
      for (const auto& s : v) list.push_back(get_string(s, key));
      (key == "covariates" ? cfg.covariates : cfg.balance_columns) = std::move(list);
    } else if (key == "trend") {
      cfg.trend = parse_trend_feature(get_string(v, key));
    } else if (key == "moment_orders") {
      cfg.moment_orders = parse_moments(v);
    } else if (key == "time_specs") {
      if (!v.is_array() || v.empty()) throw InputError("'time_specs' must be a non-empty array");
      cfg.time_specs.clear();
      for (const auto& s : v) cfg.time_specs.push_back(TimeSpec::Parse(get_string(s, key)));
    } else if (key == "histogram_bins") {
      if (!v.is_number_integer() || v.get<int>() < 1)
        throw InputError("'histogram_bins' must be a positive integer");
      cfg.histogram_bins = v.get<int>();
    } else if (key == "weighting") {
      cfg.did.weighting = parse_weighting(get_string(v, key));
    } else if (key == "solver") {
      cfg.solver = parse_solver(v);
    } else if (key == "description") {
    } else {
      throw InputError("unknown analysis config key '" + key + "'");
    }
  }
  if (!have_te) throw InputError("analysis config needs 'intervention_time'");
  return cfg;
}

AnalysisConfig load_analysis_config(const std::string& path) {
  AnalysisConfig cfg = analysis_config_from_json(read_json_file(path));
  if (!cfg.panel_path.empty() && std::filesystem::path(cfg.panel_path).is_relative())
    cfg.panel_path = (std::filesystem::path(path).parent_path() / cfg.panel_path).string();
  return cfg;
}

AnalysisReport analyze_panel(const Panel& panel, const AnalysisConfig& cfg) {
  AnalysisReport rep;
  rep.validation.counts = panel.counts();
  const TrendMatrix trends = compute_trends(panel, cfg.trend);
  rep.overlap = overlap_summary(trends, panel);
  rep.histogram = trend_histogram(trends, panel, 0, cfg.histogram_bins);

  try {
    rep.problem = build_constraints(panel, trends, cfg.covariates, cfg.moment_orders);
    rep.weights = solve_entropy_balance(rep.problem, cfg.solver);
  } catch (const NumericalError& e) {
    std::ostringstream msg;
    msg << "entropy balancing failed: " << e.what() << "\noverlap diagnostic: "
        << rep.overlap.n_treated_outside
        << " treated unit(s) have trend features outside the comparison-group range. "
           "The overlap assumption requires every treated trend pattern to occur in "
           "the comparison group with positive probability; weights cannot reproduce "
           "treated moments that lie outside the comparison support.";
    for (const auto& f : rep.overlap.features) {
      if (f.treated_outside.empty()) continue;
      msg << "\n  " << f.feature << ": outside units";
      for (std::size_t i = 0; i < f.treated_outside.size() && i < 20; ++i)
        msg << ' ' << f.treated_outside[i];
      if (f.treated_outside.size() > 20) msg << " ...";
    }
    throw OverlapFailure(msg.str(), rep.overlap);
  }

  std::vector<std::string> columns = cfg.balance_columns;
  if (columns.empty()) {
    columns = cfg.covariates;
    for (Index j = 0; j < panel.k_pre(); ++j)
      columns.push_back("outcome@" + detail::format_double(panel.times()[j]));
  }
  rep.balance = balance_table(panel, columns, rep.weights.comparison_weights);

  const UnitWeights uw = rep.weights.unit_weights(panel.n_treated());
  if (panel.k_pre() >= 2) {
    rep.pretrend_unweighted = pretrend_test(panel, std::nullopt, cfg.did);
    rep.pretrend_weighted = pretrend_test(panel, uw, cfg.did);
  }
  for (const auto& spec : cfg.time_specs) {
    rep.unweighted.push_back(fit_did(panel, spec, cfg.did));
    rep.weighted.push_back(fit_did(panel, uw, spec, cfg.did));
  }
  return rep;
}

AnalysisReport analyze_panel(const AnalysisConfig& cfg) {
  if (cfg.panel_path.empty()) throw InputError("analysis config names no panel file");
  PanelLoad load = load_panel_file(cfg.panel_path, cfg.intervention_time);
  if (!load.panel) throw ValidationError(load.report);
  AnalysisReport rep = analyze_panel(*load.panel, cfg);
  rep.validation = load.report;
  return rep;
}

Json to_json(const AnalysisReport& rep) {
  Json estimates = Json::array();
  for (std::size_t i = 0; i < rep.unweighted.size(); ++i)
    estimates.push_back(Json{{"time_spec", rep.unweighted[i].spec.label()},
                             {"unweighted", to_json(rep.unweighted[i])},
                             {"weighted", to_json(rep.weighted[i])},
                             {"table",
                              {{"unweighted", format_estimate(rep.unweighted[i])},
                               {"weighted", format_estimate(rep.weighted[i])}}}});
  Json hist = Json::array();
  for (const auto& b : rep.histogram)
    hist.push_back(Json{{"group", b.group}, {"low", b.low}, {"high", b.high}, {"count", b.count}});
  Json overlap = to_json(rep.overlap);
  overlap["histogram"] = hist;
  Json balance = to_json(rep.balance);
  balance["solver"] = diagnostics_json(rep.weights, rep.problem);
  return Json{{"validation", to_json(rep.validation)},
              {"balance", balance},
              {"overlap", overlap},
              {"pretrend",
               {{"unweighted", to_json(rep.pretrend_unweighted)},
                {"weighted", to_json(rep.pretrend_weighted)}}},
              {"estimates", estimates}};
}

std::set<ReportFormat> parse_formats(const std::string& list) {
  std::set<ReportFormat> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string f(detail::trim(item));
    if (f == "csv") out.insert(ReportFormat::kCsv);
    else if (f == "json") out.insert(ReportFormat::kJson);
    else if (f == "plotdata") out.insert(ReportFormat::kPlotData);
    else throw InputError("unknown format '" + f + "' (expected csv, json, plotdata)");
  }
  if (out.empty()) throw InputError("no output format given");
  return out;
}

void emit_report(const BiasReport& report, const std::set<ReportFormat>& formats,
                 const std::filesystem::path& dir, const std::vector<HistogramBin>* histogram) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
  if (formats.count(ReportFormat::kCsv)) {
    const auto path = dir / "bias.csv";
    auto out = open_output(path);
    write_bias_csv(report, out);
    check_written(out, path);
  }
  if (formats.count(ReportFormat::kJson)) {
    const auto path = dir / "report.json";
    auto out = open_output(path);
    out << to_json(report).dump(2) << '\n';
    check_written(out, path);
  }
  if (formats.count(ReportFormat::kPlotData)) {
    const auto path = dir / "plot_pbr.csv";
    auto out = open_output(path);
    write_pbr_plotdata(report, out);
    check_written(out, path);
    if (histogram) {
      const auto hpath = dir / "plot_histogram.csv";
      auto hout = open_output(hpath);
      write_histogram_csv(*histogram, hout);
      check_written(hout, hpath);
    }
  }
}

void emit_report(const AnalysisReport& report, const std::set<ReportFormat>& formats,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
  if (formats.count(ReportFormat::kJson)) {
    const auto path = dir / "analysis.json";
    auto out = open_output(path);
    out << to_json(report).dump(2) << '\n';
    check_written(out, path);
  }
  if (formats.count(ReportFormat::kCsv)) {
    const auto path = dir / "weights.csv";
    auto out = open_output(path);
    write_weights_csv(report.weights, report.problem, out);
    check_written(out, path);
  }
  if (formats.count(ReportFormat::kPlotData)) {
    const auto path = dir / "plot_histogram.csv";
    auto out = open_output(path);
    write_histogram_csv(report.histogram, out);
    check_written(out, path);
  }
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return kNaN;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ebdid
