#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ebdid/did.hpp"
#include "ebdid/panel.hpp"

namespace ebdid {

/// Random-slope polynomial panel with AR(1) errors:
///   y_it = b0_i + b1_i t + b2_i t^2 + tau A_i [t >= t_e] + e_it,
///   (b0, b1, b2)_i ~ N(nu_a, Gamma_a),  e_i ~ N(0, Sigma),
///   Sigma_st = sigma2 rho^|s-t|,
/// observed at t = 1..K with K = k_pre + k_post and t_e = k_pre + 1.
struct DgpSpec {
  Index n0 = 1000;
  Index n1 = 500;
  Index k_pre = 4;
  Index k_post = 1;
  double tau = 0.0;
  Eigen::Vector3d nu0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d nu1 = Eigen::Vector3d::Zero();
  Eigen::Matrix3d gamma0 = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d gamma1 = Eigen::Matrix3d::Zero();
  double rho = 0.0;
  double sigma2 = 1.0;

  Index n_times() const { return k_pre + k_post; }
  double intervention_time() const { return static_cast<double>(k_pre + 1); }
  Eigen::VectorXd times() const;
  /// Throws InputError when an invariant fails.
  void validate() const;
};

/// Scenario1: trends differ between groups with overlap.
/// Scenario2: trends differ with no overlap (no slope heterogeneity).
/// Scenario3: individual quadratic heterogeneity, so counterfactual trends
///   are not linear.
/// NullParallel: both groups share the slope distribution of Scenario 1's
///   comparison group; only the intercept mean differs.
/// VarianceSweep: Scenario 1 with rho = 0.5, intended for sigma2 sweeps.
enum class ScenarioId { kScenario1, kScenario2, kScenario3, kNullParallel, kVarianceSweep };

ScenarioId parse_scenario(const std::string& name);
std::string scenario_name(ScenarioId id);

struct DgpOverrides {
  std::optional<Index> n0, n1, k_pre, k_post;
  std::optional<double> tau, rho, sigma2;
  std::optional<Eigen::Vector3d> nu0, nu1;
  std::optional<Eigen::Matrix3d> gamma0, gamma1;
};

DgpSpec scenario_spec(ScenarioId id, const DgpOverrides& overrides = {});

/// Sigma_st = sigma2 rho^|s-t|.
Eigen::MatrixXd ar1_covariance(Index k, double rho, double sigma2);

/// Seed for the (a, b) substream of `seed`, mixed with SplitMix64 so
/// neighbouring indices give unrelated generator states.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Unit ids "1".."N", comparison units first. Each unit draws its three
/// random effects, then its K errors, from one std::mt19937_64 seeded with
/// `seed`.
Panel generate_panel(const DgpSpec& spec, std::uint64_t seed);

enum class OracleWeights {
  kNone,
  // Comparison slope and curvature means replaced by the treated ones,
  // comparison intercept mean kept: what exact trend balancing achieves in
  // expectation.
  kBalanced,
};

/// Expectation of the DD estimator under the DGP, obtained by solving the
/// weighted normal equations on the exact group mean series with each
/// group-time cell weighted by its group's total row weight.
double expected_did(const DgpSpec& spec, const TimeSpec& time_spec,
                    OracleWeights weights = OracleWeights::kNone,
                    const DidOptions& options = {});

struct Reliability {
  double value = 0.0;
  double between = 0.0;  // comparison-group slope variance
  double within = 0.0;   // sampling variance of the OLS slope under Sigma
  std::vector<std::string> warnings;
};

/// between / (between + within) for the per-unit OLS slope over the
/// pre-period times. Only the linear trend (order 1) is supported; zero
/// between variance gives 0 with a warning.
Reliability trend_reliability(const DgpSpec& spec, int trend_order = 1);

}  // namespace ebdid
