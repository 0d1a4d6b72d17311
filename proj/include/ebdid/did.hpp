#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "ebdid/balance.hpp"
#include "ebdid/panel.hpp"
#include "ebdid/weights.hpp"

namespace ebdid {

/// Time effects of the DD regression: a polynomial of order P in t with an
/// intercept, or one fixed effect per observed time with no intercept.
struct TimeSpec {
  enum class Kind { kPolynomial, kNonparametric };
  Kind kind = Kind::kNonparametric;
  int order = 0;

  static TimeSpec Polynomial(int order);
  static TimeSpec Nonparametric() { return {}; }
  /// Accepts "poly<P>" and "nonparametric".
  static TimeSpec Parse(const std::string& text);
  std::string label() const;
  bool operator==(const TimeSpec&) const = default;
};

/// How unit weights become regression row weights.
enum class RowWeighting {
  // Each group's weights are rescaled to sum to 1, so treated rows carry
  // 1/N1 and comparison rows carry w_i. Unweighted fits use 1/N0 for
  // comparison rows.
  kGroupNormalized,
  // Every included treated row carries weight 1 and comparison rows carry
  // the supplied weights unchanged; unweighted fits are ordinary least
  // squares.
  kTreatedUnit,
};

struct DidOptions {
  RowWeighting weighting = RowWeighting::kGroupNormalized;
};

struct DidFit {
  double tau = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Eigen::VectorXd coefficients;  // raw time basis
  std::vector<std::string> coefficient_names;
  std::string weights_label;
  Index n_treated = 0;  // units with positive weight
  Index n_comparison = 0;
  double ess_treated = 0.0;
  double ess_comparison = 0.0;
  bool local_att = false;  // some treated units carried zero weight
  Index n_clusters = 0;
  TimeSpec spec;
};

/// Weighted least squares on the stacked unit-time rows of
///   y_it = time effects + beta_A A_i + tau A_i E_t,
/// with E_t = 1 for t >= t_e, each unit's weight replicated over its rows.
/// The variance is the unit-clustered sandwich with factor G / (G - 1), and
/// the interval is tau +/- 1.96 SE.
///
/// Throws InputError on negative or mis-sized weights or a group with no
/// positive weight, RankDeficient when the design is singular.
DidFit fit_did(const Panel& panel, const TimeSpec& spec, const DidOptions& options = {});
DidFit fit_did(const Panel& panel, const UnitWeights& weights, const TimeSpec& spec,
               const DidOptions& options = {});
DidFit fit_did(const Panel& panel, const BalanceWeights& weights, const TimeSpec& spec,
               const DidOptions& options = {});

struct PretrendTest {
  double wald = 0.0;
  int df = 0;
  double p_value = 1.0;
  Eigen::VectorXd interactions;  // A x time effects for pre-periods 2..K_pre
  Eigen::VectorXd interaction_se;
  std::vector<double> interaction_times;
};

/// Joint Wald test that the group-by-time interactions are zero in a
/// weighted regression on pre-period rows with time dummies, a group main
/// effect and interactions for every pre-period after the first. Uses the
/// clustered covariance and a chi-square reference with K_pre - 1 df.
/// Throws InputError when K_pre < 2.
PretrendTest pretrend_test(const Panel& panel, const std::optional<UnitWeights>& weights,
                           const DidOptions& options = {});

/// 100 (1 - bias_weighted / bias_unweighted); empty when bias_unweighted is 0
/// or either input is not finite.
std::optional<double> percent_bias_reduction(double bias_weighted, double bias_unweighted);

/// `estimate (low--high)` with the given number of decimals.
std::string format_estimate(const DidFit& fit, int decimals = 2);

}  // namespace ebdid
