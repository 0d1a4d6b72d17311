#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ebdid/balance.hpp"
#include "ebdid/did.hpp"
#include "ebdid/panel.hpp"
#include "ebdid/serialize.hpp"
#include "ebdid/simulate.hpp"
#include "ebdid/trends.hpp"

namespace ebdid {

enum class BalanceMethod { kNone, kEntropy, kMatch };
enum class TrendFeature { kLinear, kFirstDifferences, kQuadratic };

TrendFeature parse_trend_feature(const std::string& name);
std::string trend_feature_name(TrendFeature f);
TrendMatrix compute_trends(const Panel& panel, TrendFeature feature);

/// One estimator: balancing method, trend features it balances or matches
/// on (ignored for kNone), and the DD time specification.
struct Arm {
  BalanceMethod balance = BalanceMethod::kNone;
  TrendFeature trend = TrendFeature::kLinear;
  TimeSpec time = TimeSpec::Polynomial(1);

  /// "none", "entropy_linear", "entropy_first_differences", "match_linear", ...
  std::string label() const;
};

struct ExperimentConfig {
  ScenarioId scenario = ScenarioId::kScenario1;
  DgpOverrides overrides;
  std::vector<double> rho_grid{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99};
  // When non-empty, the grid is rho_grid x sigma2_grid.
  std::vector<double> sigma2_grid;
  int replications = 500;
  std::uint64_t seed = 1;
  std::vector<Arm> arms;
  std::set<int> moment_orders{1};
  double caliper_sd = 0.2;
  DidOptions did;
  SolverSettings solver;
  std::string output_dir;

  /// Throws InputError on an empty grid, replications < 1, no "none" arm or
  /// an override that breaks the DGP invariants.
  void validate() const;
};

/// Keys: scenario, overrides, rho_grid, sigma2_grid, replications, seed,
/// arms [{balance, trend, time}], moment_orders, caliper_sd, weighting
/// ("group_normalized" | "treated_unit"), solver {tolerance,
/// max_iterations, max_dual_norm}, output_dir.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);
Json to_json(const ExperimentConfig& cfg);

struct GridPoint {
  double rho = 0.0;
  double sigma2 = 1.0;
};

struct BiasRow {
  std::string arm;
  std::string time_spec;
  GridPoint point;
  int successes = 0;
  double mean_bias = 0.0;  // NaN when every replication failed
  double mc_se = 0.0;      // NaN with fewer than two successes
  std::optional<double> pbr;
  double reliability = 0.0;
  double fail_rate = 0.0;
  double unmatched_fraction = 0.0;  // matching arms: mean share of treated left unmatched
  double mean_ess_comparison = 0.0;
};

struct BiasReport {
  ExperimentConfig config;
  std::vector<GridPoint> grid;
  std::vector<BiasRow> rows;  // grid-major, arms in config order
  std::vector<std::string> warnings;

  const BiasRow* find(const std::string& arm, const std::string& time_spec,
                      std::size_t grid_index) const;
};

/// Replications fan out over `threads` workers (0 = hardware concurrency).
/// Replication r at grid point g uses generator seed
/// substream_seed(seed, g, r), and results are aggregated in a fixed order,
/// so the report does not depend on the thread count. Numerical failures
/// of an arm are counted in fail_rate rather than raised.
BiasReport run_experiment(const ExperimentConfig& cfg, unsigned threads = 0);

/// `arm,time_spec,rho,mean_bias,mc_se,pbr,reliability,fail_rate`, NA for
/// undefined values.
void write_bias_csv(const BiasReport& report, std::ostream& out);
Json to_json(const BiasReport& report);
/// `arm,time_spec,rho,pbr`.
void write_pbr_plotdata(const BiasReport& report, std::ostream& out);

struct HistogramBin {
  int group = 0;
  double low = 0.0;
  double high = 0.0;
  Index count = 0;
};

/// Equal-width bins over the pooled range of one trend feature.
std::vector<HistogramBin> trend_histogram(const TrendMatrix& trends, const Panel& panel,
                                          Index feature = 0, int bins = 20);
/// `group,bin,count` with bin = bin midpoint.
void write_histogram_csv(const std::vector<HistogramBin>& hist, std::ostream& out);

struct FeatureOverlap {
  std::string feature;
  double treated_min = 0.0, treated_max = 0.0;
  double comparison_min = 0.0, comparison_max = 0.0;
  std::vector<std::string> treated_outside;  // ids outside the comparison range
};

struct OverlapSummary {
  std::vector<FeatureOverlap> features;
  Index n_treated_outside = 0;  // outside the range on at least one feature
};

OverlapSummary overlap_summary(const TrendMatrix& trends, const Panel& panel);
Json to_json(const OverlapSummary& overlap);

/// Entropy balancing failed on a real panel; carries the overlap diagnostic.
class OverlapFailure : public NumericalError {
 public:
  OverlapFailure(const std::string& what, OverlapSummary overlap)
      : NumericalError(what), overlap_(std::move(overlap)) {}
  const OverlapSummary& overlap() const { return overlap_; }

 private:
  OverlapSummary overlap_;
};

struct AnalysisConfig {
  std::string panel_path;
  double intervention_time = 0.0;
  std::vector<std::string> covariates;
  TrendFeature trend = TrendFeature::kFirstDifferences;
  std::set<int> moment_orders{1};
  std::vector<TimeSpec> time_specs{TimeSpec::Polynomial(1), TimeSpec::Nonparametric()};
  // Empty: the covariates followed by the outcome at every pre-period time.
  std::vector<std::string> balance_columns;
  int histogram_bins = 20;
  SolverSettings solver;
  DidOptions did;
};

/// Keys: panel, intervention_time, covariates, trend, moment_orders,
/// time_specs, balance_columns, histogram_bins, weighting, solver.
AnalysisConfig analysis_config_from_json(const Json& j);
AnalysisConfig load_analysis_config(const std::string& path);

struct AnalysisReport {
  ValidationReport validation;
  BalanceProblem problem;
  BalanceWeights weights;
  BalanceTable balance;
  OverlapSummary overlap;
  std::vector<HistogramBin> histogram;
  PretrendTest pretrend_unweighted;
  PretrendTest pretrend_weighted;
  std::vector<DidFit> unweighted;
  std::vector<DidFit> weighted;
};

/// Trends, entropy weights, balance table, overlap diagnostic, pre-trend
/// tests and DD fits before and after weighting. Throws ValidationError when
/// the panel does not load and OverlapFailure when balancing fails.
AnalysisReport analyze_panel(const Panel& panel, const AnalysisConfig& cfg);
AnalysisReport analyze_panel(const AnalysisConfig& cfg);

/// Sections balance, overlap, pretrend, estimates (plus solver).
Json to_json(const AnalysisReport& report);

enum class ReportFormat { kCsv, kJson, kPlotData };
std::set<ReportFormat> parse_formats(const std::string& list);

/// Writes bias.csv, report.json, plot_pbr.csv, and, when `histogram` is
/// given, plot_histogram.csv into `dir`. Throws Error on I/O failure.
void emit_report(const BiasReport& report, const std::set<ReportFormat>& formats,
                 const std::filesystem::path& dir,
                 const std::vector<HistogramBin>* histogram = nullptr);
/// Writes analysis.json, plot_histogram.csv and weights.csv into `dir`.
void emit_report(const AnalysisReport& report, const std::set<ReportFormat>& formats,
                 const std::filesystem::path& dir);

/// Spearman rank correlation with average ranks for ties; NaN when either
/// input is constant or shorter than 2.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace ebdid
