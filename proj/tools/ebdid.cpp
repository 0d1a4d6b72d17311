// Command-line front end: simulate, analyze, balance, match, generate.
// Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ebdid/balance.hpp"
#include "ebdid/harness.hpp"
#include "ebdid/matching.hpp"
#include "ebdid/panel.hpp"
#include "ebdid/serialize.hpp"
#include "ebdid/simulate.hpp"
#include "ebdid/trends.hpp"

namespace fs = std::filesystem;
using namespace ebdid;

namespace {

Panel load_or_throw(const std::string& path, double te) {
  PanelLoad load = load_panel_file(path, te);
  if (!load.panel) throw ValidationError(load.report);
  for (const auto& w : load.report.warnings) std::cerr << "warning: " << w.message << '\n';
  return std::move(*load.panel);
}

std::set<int> parse_moment_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "1") out.insert(1);
    else if (item == "2") out.insert(2);
    else throw InputError("moment orders must be 1 or 2, got '" + item + "'");
  }
  return out;
}

// Writes to `path`, or stdout when path is empty or "-".
void write_to(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out.flush()) throw Error("failed writing '" + path + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-balanced difference-in-differences"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  bool seed_given = false;
  unsigned threads = 0;
  std::string out_path;

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo experiment from a JSON config");
  std::string sim_config, sim_format = "csv,json,plotdata";
  sim->add_option("config", sim_config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", seed, "Override the config seed")->each([&](const std::string&) { seed_given = true; });
  sim->add_option("--threads", threads, "Worker threads (0 = all cores)");
  sim->add_option("--out", out_path, "Output directory (default: config output_dir or '.')");
  sim->add_option("--format", sim_format, "Comma list of csv,json,plotdata")->capture_default_str();

  // analyze
  auto* ana = app.add_subcommand("analyze", "Real-data workflow on a panel CSV");
  std::string ana_config, ana_panel, ana_out = ".", ana_format = "csv,json,plotdata";
  ana->add_option("config", ana_config, "Analysis config (JSON)")->required()->check(CLI::ExistingFile);
  ana->add_option("panel", ana_panel, "Panel CSV (overrides the config's panel)");
  ana->add_option("--out", ana_out, "Output directory")->capture_default_str();
  ana->add_option("--format", ana_format, "Comma list of csv,json,plotdata")->capture_default_str();
  ana->add_option("--seed", seed, "Unused; accepted for interface uniformity");
  ana->add_option("--threads", threads, "Unused; accepted for interface uniformity");

  // balance
  auto* bal = app.add_subcommand("balance", "Entropy-balancing weights for a panel");
  std::string bal_panel, bal_trend = "first_differences", bal_moments = "1", bal_format = "csv";
  std::vector<std::string> bal_covariates;
  double te = 0.0;
  bal->add_option("panel", bal_panel, "Panel CSV")->required()->check(CLI::ExistingFile);
  bal->add_option("--intervention-time", te, "First post-intervention time")->required();
  bal->add_option("--trend", bal_trend, "linear, quadratic or first_differences")->capture_default_str();
  bal->add_option("--moments", bal_moments, "Moment orders, e.g. 1 or 1,2")->capture_default_str();
  bal->add_option("--covariates", bal_covariates, "Covariate columns to balance")->delimiter(',');
  bal->add_option("--out", out_path, "Weights output (default stdout)");
  bal->add_option("--format", bal_format, "csv (weights) or json (diagnostics)")->capture_default_str();

  // match
  auto* mat = app.add_subcommand("match", "1:1 caliper matching on trend features");
  std::string mat_panel, mat_trend = "linear", mat_format = "csv";
  double caliper = 0.2;
  mat->add_option("panel", mat_panel, "Panel CSV")->required()->check(CLI::ExistingFile);
  mat->add_option("--intervention-time", te, "First post-intervention time")->required();
  mat->add_option("--trend", mat_trend, "linear, quadratic or first_differences")->capture_default_str();
  mat->add_option("--caliper", caliper, "Caliper in pooled-SD units")->capture_default_str();
  mat->add_option("--out", out_path, "Pair list output (default stdout)");
  mat->add_option("--format", mat_format, "csv (pairs) or json (summary)")->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "Draw one simulated panel as CSV");
  std::string gen_scenario = "scenario1";
  std::string gen_overrides;
  gen->add_option("--scenario", gen_scenario, "scenario1, scenario2, scenario3, null_parallel, variance_sweep")->capture_default_str();
  gen->add_option("--overrides", gen_overrides, "JSON object of DGP overrides");
  gen->add_option("--seed", seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", out_path, "Panel CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) {
      ExperimentConfig cfg = load_experiment_config(sim_config);
      if (seed_given) cfg.seed = seed;
      const auto formats = parse_formats(sim_format);
      const fs::path dir = !out_path.empty() ? fs::path(out_path)
                           : !cfg.output_dir.empty() ? fs::path(cfg.output_dir)
                                                     : fs::path(".");
      const BiasReport report = run_experiment(cfg, threads);
      DgpOverrides o = cfg.overrides;
      o.rho = cfg.rho_grid.front();
      if (!cfg.sigma2_grid.empty()) o.sigma2 = cfg.sigma2_grid.front();
      const Panel first = generate_panel(scenario_spec(cfg.scenario, o),
                                         substream_seed(cfg.seed, 0, 0));
      const auto hist = trend_histogram(compute_trends(first, TrendFeature::kLinear), first);
      emit_report(report, formats, dir, &hist);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      std::cerr << "wrote " << report.rows.size() << " rows to " << dir.string() << '\n';
    } else if (*ana) {
      AnalysisConfig cfg = load_analysis_config(ana_config);
      if (!ana_panel.empty()) cfg.panel_path = ana_panel;
      const auto formats = parse_formats(ana_format);
      const AnalysisReport report = analyze_panel(cfg);
      emit_report(report, formats, ana_out);
      for (std::size_t i = 0; i < report.weighted.size(); ++i)
        std::cout << report.weighted[i].spec.label()
                  << "  unweighted " << format_estimate(report.unweighted[i])
                  << "  weighted " << format_estimate(report.weighted[i]) << '\n';
    } else if (*bal) {
      const Panel panel = load_or_throw(bal_panel, te);
      const TrendMatrix trends = compute_trends(panel, parse_trend_feature(bal_trend));
      const BalanceProblem prob =
          build_constraints(panel, trends, bal_covariates, parse_moment_list(bal_moments));
      for (const auto& w : prob.warnings) std::cerr << "warning: " << w << '\n';
      const BalanceWeights w = solve_entropy_balance(prob);
      std::ostringstream text;
      if (bal_format == "json") text << diagnostics_json(w, prob).dump(2) << '\n';
      else if (bal_format == "csv") write_weights_csv(w, prob, text);
      else throw InputError("balance --format must be csv or json");
      write_to(out_path, text.str());
    } else if (*mat) {
      const Panel panel = load_or_throw(mat_panel, te);
      const TrendMatrix trends = compute_trends(panel, parse_trend_feature(mat_trend));
      const MatchSet ms = match_nearest(treated_trends(trends, panel),
                                        comparison_trends(trends, panel), caliper);
      std::ostringstream text;
      if (mat_format == "json") text << to_json(ms).dump(2) << '\n';
      else if (mat_format == "csv") write_pairs_csv(ms, text);
      else throw InputError("match --format must be csv or json");
      write_to(out_path, text.str());
      std::cerr << ms.n_pairs() << " pairs, " << ms.unmatched_treated.size()
                << " treated unmatched\n";
    } else if (*gen) {
      DgpOverrides o;
      if (!gen_overrides.empty()) {
        try {
          o = dgp_overrides_from_json(Json::parse(gen_overrides));
        } catch (const nlohmann::json::exception& e) {
          throw InputError(std::string("--overrides is not valid JSON: ") + e.what());
        }
      }
      const Panel panel = generate_panel(scenario_spec(parse_scenario(gen_scenario), o), seed);
      std::ostringstream text;
      write_panel_csv(panel, text);
      write_to(out_path, text.str());
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
