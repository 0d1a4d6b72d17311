#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ebdid/harness.hpp"

using namespace ebdid;

namespace {

ExperimentConfig small_config() {
  return experiment_config_from_json(Json::parse(R"({
    "scenario": "scenario1",
    "overrides": {"n0": 60, "n1": 30},
    "rho_grid": [0.0, 0.9],
    "replications": 8,
    "seed": 11,
    "arms": [
      {"balance": "none", "time": "poly1"},
      {"balance": "entropy", "trend": "linear", "time": "poly1"},
      {"balance": "match", "trend": "linear", "time": "poly1"},
      {"balance": "none", "time": "nonparametric"},
      {"balance": "entropy", "trend": "first_differences", "time": "nonparametric"}
    ]
  })"));
}

std::string bias_csv(const BiasReport& r) {
  std::ostringstream out;
  write_bias_csv(r, out);
  return out.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ebdid_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("experiment config parsing") {
  const ExperimentConfig cfg = small_config();
  CHECK(cfg.scenario == ScenarioId::kScenario1);
  CHECK(cfg.overrides.n0 == 60);
  CHECK(cfg.arms.size() == 5);
  CHECK(cfg.arms[1].label() == "entropy_linear");
  CHECK(cfg.arms[4].label() == "entropy_first_differences");
  CHECK(cfg.arms[3].time == TimeSpec::Nonparametric());

  const ExperimentConfig defaults = experiment_config_from_json(
      Json::parse(R"({"arms": [{"balance": "none", "time": "poly1"}]})"));
  CHECK(defaults.rho_grid == std::vector<double>{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99});
  CHECK(defaults.replications == 500);

  const Json round = to_json(cfg);
  CHECK(experiment_config_from_json(round).arms.size() == cfg.arms.size());

  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"arms": [], "bogus": 1})")), InputError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(
                      R"({"replications": 0, "arms": [{"balance": "none", "time": "poly1"}]})")),
                  InputError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(
                      R"({"arms": [{"balance": "entropy", "trend": "linear", "time": "poly1"}]})")),
                  InputError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(
                      R"({"overrides": {"rho": 2}, "arms": [{"balance": "none", "time": "poly1"}]})")),
                  InputError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), InputError);
}

TEST_CASE("experiment output does not depend on the thread count") {
  const ExperimentConfig cfg = small_config();
  const BiasReport one = run_experiment(cfg, 1);
  const BiasReport four = run_experiment(cfg, 4);
  CHECK(bias_csv(one) == bias_csv(four));
  CHECK(one.rows.size() == 10);
  CHECK(bias_csv(one).rfind("arm,time_spec,rho,mean_bias,mc_se,pbr,reliability,fail_rate\n", 0) == 0);
  for (std::size_t g = 0; g < one.grid.size(); ++g) {
    CHECK(one.find("none", "poly1", g)->pbr == 0.0);
    CHECK(one.find("none", "nonparametric", g)->pbr == 0.0);
    CHECK(std::isfinite(one.find("entropy_linear", "poly1", g)->mc_se));
  }
}

TEST_CASE("a single replication leaves the Monte Carlo SE undefined") {
  ExperimentConfig cfg = small_config();
  cfg.replications = 1;
  const BiasReport r = run_experiment(cfg, 2);
  CHECK(std::isnan(r.rows[0].mc_se));
  CHECK_FALSE(r.warnings.empty());
  CHECK(bias_csv(r).find(",NA,") != std::string::npos);
}

TEST_CASE("spearman rank correlation") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {1, 1, 2}) == doctest::Approx(std::sqrt(3.0) / 2.0));
  CHECK(std::isnan(spearman({1, 2, 3}, {5, 5, 5})));
}

TEST_CASE("analysis recovers a known effect that the unweighted fit misses") {
  // Comparison trends tilted upward relative to the treated group.
  const Panel p = generate_panel(
      scenario_spec(ScenarioId::kScenario1, {.tau = 0.5, .rho = 0.5, .sigma2 = 0.01}), 3);
  AnalysisConfig cfg;
  cfg.intervention_time = p.intervention_time();
  const AnalysisReport rep = analyze_panel(p, cfg);
  REQUIRE(rep.weighted.size() == 2);
  const DidFit& w = rep.weighted[0];
  const DidFit& u = rep.unweighted[0];
  CHECK(w.ci_low <= 0.5);
  CHECK(0.5 <= w.ci_high);
  CHECK_FALSE((u.ci_low <= 0.5 && 0.5 <= u.ci_high));
  CHECK(rep.pretrend_unweighted.p_value < 0.001);
  CHECK(rep.pretrend_weighted.interactions.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(rep.overlap.features.size() == 3);

  Index total = 0;
  for (const auto& b : rep.histogram) total += b.count;
  CHECK(total == p.n_units());

  const Json j = to_json(rep);
  for (const char* key : {"balance", "overlap", "pretrend", "estimates"}) CHECK(j.contains(key));

  const auto dir = scratch_dir("analysis");
  emit_report(rep, parse_formats("csv,json,plotdata"), dir);
  CHECK(std::filesystem::exists(dir / "analysis.json"));
  CHECK(read_file(dir / "weights.csv").rfind("unit,weight\n", 0) == 0);
  CHECK(read_file(dir / "plot_histogram.csv").rfind("group,bin,count\n", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("exchangeable groups: weighting barely moves the estimate") {
  const Panel p = generate_panel(
      scenario_spec(ScenarioId::kNullParallel, {.tau = 0.5, .rho = 0.5}), 17);
  AnalysisConfig cfg;
  cfg.intervention_time = p.intervention_time();
  const AnalysisReport rep = analyze_panel(p, cfg);
  for (std::size_t i = 0; i < rep.weighted.size(); ++i)
    CHECK(std::abs(rep.weighted[i].tau - rep.unweighted[i].tau) <= 3.0 * rep.unweighted[i].se);
}

TEST_CASE("a treated unit far outside comparison support is named in the failure") {
  const Panel sim = generate_panel(scenario_spec(ScenarioId::kScenario1, {.n0 = 100, .n1 = 10}), 5);
  Eigen::MatrixXd y = sim.outcomes();
  const Index outlier = sim.treated_rows()[3];
  for (Index j = 0; j < sim.n_times(); ++j) y(outlier, j) += 500.0 * sim.times()[j];
  const Panel p = Panel::Create(sim.unit_ids(), sim.group(), sim.times(), sim.intervention_time(), y);
  AnalysisConfig cfg;
  cfg.intervention_time = p.intervention_time();
  const std::string id = p.unit_ids()[outlier];
  try {
    analyze_panel(p, cfg);
    FAIL("expected an overlap failure");
  } catch (const OverlapFailure& e) {
    CHECK(e.overlap().n_treated_outside >= 1);
    bool listed = false;
    for (const auto& f : e.overlap().features)
      for (const auto& u : f.treated_outside) listed |= u == id;
    CHECK(listed);
    CHECK(std::string(e.what()).find("overlap assumption") != std::string::npos);
    CHECK(std::string(e.what()).find(id) != std::string::npos);
  }
}

TEST_CASE("analysis config and bias report emission") {
  const auto dir = scratch_dir("emit");
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir / "analysis.json");
    cfg << R"({"panel": "panel.csv", "intervention_time": 5, "time_specs": ["poly2"]})";
  }
  const AnalysisConfig a = load_analysis_config((dir / "analysis.json").string());
  CHECK(a.panel_path == (dir / "panel.csv").string());
  CHECK(a.time_specs == std::vector<TimeSpec>{TimeSpec::Polynomial(2)});
  CHECK_THROWS_AS(analysis_config_from_json(Json::parse(R"({"panel": "x.csv"})")), InputError);
  CHECK_THROWS_AS(parse_formats("csv,xml"), InputError);

  const BiasReport r = run_experiment(small_config(), 2);
  emit_report(r, parse_formats("csv,json,plotdata"), dir / "out");
  CHECK(read_file(dir / "out" / "bias.csv") == bias_csv(r));
  CHECK(read_file(dir / "out" / "plot_pbr.csv").rfind("arm,time_spec,rho,pbr\n", 0) == 0);
  const Json j = Json::parse(read_file(dir / "out" / "report.json"));
  CHECK(j.contains("rows"));
  std::filesystem::remove_all(dir);
}
