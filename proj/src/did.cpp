#include "ebdid/did.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstdio>

#include "poly_basis.hpp"
#include "text_util.hpp"

namespace ebdid {

namespace {

constexpr double kZ975 = 1.959963984540054;

struct WlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
  Index clusters = 0;
};

// Weighted least squares where the design row depends only on the unit's
// group and the time: x_design[a] is K x p. The clustered sandwich is built
// from per-unit scores.
WlsResult cell_wls(const Eigen::MatrixXd& y, const std::vector<int>& group,
                   const Eigen::VectorXd& unit_w, const Eigen::MatrixXd (&x_design)[2]) {
  const Index n = y.rows();
  const Index p = x_design[0].cols();
  double mass[2] = {0.0, 0.0};
  Eigen::VectorXd wy[2] = {Eigen::VectorXd::Zero(y.cols()), Eigen::VectorXd::Zero(y.cols())};
  for (Index i = 0; i < n; ++i) {
    const double w = unit_w[i];
    if (w == 0.0) continue;
    mass[group[i]] += w;
    wy[group[i]] += w * y.row(i).transpose();
  }
  Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xtwy = Eigen::VectorXd::Zero(p);
  for (int a = 0; a < 2; ++a) {
    xtwx += mass[a] * x_design[a].transpose() * x_design[a];
    xtwy += x_design[a].transpose() * wy[a];
  }

  const Eigen::VectorXd diag = xtwx.diagonal();
  if ((diag.array() <= 0.0).any())
    throw RankDeficient("DD design has a column with no weighted support");
  const Eigen::VectorXd scale = diag.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd scaled = scale.asDiagonal() * xtwx * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 1e-12 * es.eigenvalues().maxCoeff())
    throw RankDeficient("DD design matrix is rank deficient");

  Eigen::LDLT<Eigen::MatrixXd> ldlt(scaled);
  const Eigen::MatrixXd bread =
      scale.asDiagonal() * ldlt.solve(Eigen::MatrixXd::Identity(p, p)) * scale.asDiagonal();
  WlsResult out;
  out.beta = scale.asDiagonal() * ldlt.solve(scale.asDiagonal() * xtwy);

  const Eigen::VectorXd fitted[2] = {x_design[0] * out.beta, x_design[1] * out.beta};
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (Index i = 0; i < n; ++i) {
    const double w = unit_w[i];
    if (w == 0.0) continue;
    const int a = group[i];
    const Eigen::VectorXd resid = y.row(i).transpose() - fitted[a];
    const Eigen::VectorXd score = w * (x_design[a].transpose() * resid);
    meat.noalias() += score * score.transpose();
    ++out.clusters;
  }
  const double g = static_cast<double>(out.clusters);
  const double factor = out.clusters > 1 ? g / (g - 1.0) : 1.0;
  out.vcov = factor * bread * meat * bread;
  return out;
}

struct RowWeights {
  Eigen::VectorXd unit;  // length N, panel order
  Index n_treated = 0;
  Index n_comparison = 0;
  double ess_treated = 0.0;
  double ess_comparison = 0.0;
  bool local_att = false;
  std::string label;
};

RowWeights row_weights(const Panel& panel, const UnitWeights* weights,
                       const DidOptions& options) {
  const Index n1 = panel.n_treated();
  const Index n0 = panel.n_comparison();
  Eigen::VectorXd wt = Eigen::VectorXd::Ones(n1);
  Eigen::VectorXd wc = Eigen::VectorXd::Ones(n0);
  RowWeights out;
  out.label = "none";
  if (weights) {
    if (weights->treated.size() != n1 || weights->comparison.size() != n0)
      throw InputError("weights do not match the panel's group sizes");
    if (!weights->treated.allFinite() || !weights->comparison.allFinite())
      throw InputError("weights must be finite");
    if ((weights->treated.array() < 0.0).any() || (weights->comparison.array() < 0.0).any())
      throw InputError("weights must be non-negative");
    wt = weights->treated;
    wc = weights->comparison;
    out.label = weights->label.empty() ? "weighted" : weights->label;
  }
  const double st = wt.sum();
  const double sc = wc.sum();
  if (!(st > 0.0) || !(sc > 0.0))
    throw InputError("each group needs at least one unit with positive weight");
  out.n_treated = (wt.array() > 0.0).count();
  out.n_comparison = (wc.array() > 0.0).count();
  out.local_att = out.n_treated < n1;
  out.ess_treated = effective_sample_size(wt);
  out.ess_comparison = effective_sample_size(wc);

  if (options.weighting == RowWeighting::kGroupNormalized) {
    wt /= st;
    wc /= sc;
  } else {
    wt = (wt.array() > 0.0).cast<double>();
    if (!weights) wc.setOnes();
  }
  out.unit = Eigen::VectorXd::Zero(panel.n_units());
  for (Index r = 0; r < n1; ++r) out.unit[panel.treated_rows()[r]] = wt[r];
  for (Index r = 0; r < n0; ++r) out.unit[panel.comparison_rows()[r]] = wc[r];
  return out;
}

DidFit fit_impl(const Panel& panel, const UnitWeights* weights, const TimeSpec& spec,
                const DidOptions& options) {
  if (panel.k_post() < 1) throw InputError("DD needs at least one post-intervention time");
  if (panel.k_pre() < 1) throw InputError("DD needs at least one pre-intervention time");
  const RowWeights rw = row_weights(panel, weights, options);
  const Index k = panel.n_times();
  const Eigen::VectorXd& t = panel.times();

  Eigen::MatrixXd time_block;
  std::vector<std::string> names;
  detail::ScaledTime scaled;
  if (spec.kind == TimeSpec::Kind::kPolynomial) {
    if (spec.order < 1) throw InputError("polynomial time order must be >= 1");
    scaled = detail::ScaledTime::For(t);
    time_block = detail::scaled_powers(t, spec.order, scaled);
    names.push_back("alpha");
    for (int m = 1; m <= spec.order; ++m) names.push_back("beta_" + std::to_string(m));
  } else {
    if (k < 2) throw InputError("nonparametric time needs at least 2 times");
    time_block = Eigen::MatrixXd::Identity(k, k);
    for (Index j = 0; j < k; ++j) names.push_back("mu_" + detail::format_double(t[j]));
  }
  names.push_back("beta_A");
  names.push_back("tau");

  const Index q = time_block.cols();
  Eigen::MatrixXd x[2];
  for (int a = 0; a < 2; ++a) {
    x[a] = Eigen::MatrixXd::Zero(k, q + 2);
    x[a].leftCols(q) = time_block;
    for (Index j = 0; j < k; ++j) {
      x[a](j, q) = a;
      x[a](j, q + 1) = a == 1 && panel.is_post(j) ? 1.0 : 0.0;
    }
  }

  const WlsResult res = cell_wls(panel.outcomes(), panel.group(), rw.unit, x);

  DidFit fit;
  fit.spec = spec;
  fit.coefficients = res.beta;
  if (spec.kind == TimeSpec::Kind::kPolynomial)
    fit.coefficients.head(q) = detail::raw_from_scaled(spec.order, scaled) * res.beta.head(q);
  fit.coefficient_names = std::move(names);
  fit.tau = res.beta[q + 1];
  fit.se = std::sqrt(std::max(0.0, res.vcov(q + 1, q + 1)));
  fit.ci_low = fit.tau - kZ975 * fit.se;
  fit.ci_high = fit.tau + kZ975 * fit.se;
  fit.weights_label = rw.label;
  fit.n_treated = rw.n_treated;
  fit.n_comparison = rw.n_comparison;
  fit.ess_treated = rw.ess_treated;
  fit.ess_comparison = rw.ess_comparison;
  fit.local_att = rw.local_att;
  fit.n_clusters = res.clusters;
  return fit;
}

}  // namespace

TimeSpec TimeSpec::Polynomial(int order) {
  if (order < 1) throw InputError("polynomial time order must be >= 1");
  return {Kind::kPolynomial, order};
}

TimeSpec TimeSpec::Parse(const std::string& text) {
  if (text == "nonparametric") return Nonparametric();
  if (text.rfind("poly", 0) == 0) {
    if (auto p = detail::parse_integer(text.substr(4)); p && *p >= 1)
      return Polynomial(static_cast<int>(*p));
  }
  throw InputError("unknown time spec '" + text + "' (expected poly<P> or nonparametric)");
}

std::string TimeSpec::label() const {
  return kind == Kind::kNonparametric ? "nonparametric" : "poly" + std::to_string(order);
}

DidFit fit_did(const Panel& panel, const TimeSpec& spec, const DidOptions& options) {
  return fit_impl(panel, nullptr, spec, options);
}

DidFit fit_did(const Panel& panel, const UnitWeights& weights, const TimeSpec& spec,
               const DidOptions& options) {
  return fit_impl(panel, &weights, spec, options);
}

DidFit fit_did(const Panel& panel, const BalanceWeights& weights, const TimeSpec& spec,
               const DidOptions& options) {
  const UnitWeights uw = weights.unit_weights(panel.n_treated());
  return fit_impl(panel, &uw, spec, options);
}

PretrendTest pretrend_test(const Panel& panel, const std::optional<UnitWeights>& weights,
                           const DidOptions& options) {
  const Index kp = panel.k_pre();
  if (kp < 2)
    throw InputError("pre-trend test needs at least 2 pre-periods, got " + std::to_string(kp));
  const RowWeights rw = row_weights(panel, weights ? &*weights : nullptr, options);

  // Columns: kp time dummies, A, A x dummy for pre-periods 2..kp.
  const Index p = 2 * kp;
  Eigen::MatrixXd x[2];
  for (int a = 0; a < 2; ++a) {
    x[a] = Eigen::MatrixXd::Zero(kp, p);
    x[a].leftCols(kp).setIdentity();
    for (Index j = 0; j < kp; ++j) {
      x[a](j, kp) = a;
      if (j > 0) x[a](j, kp + j) = a;
    }
  }
  const Eigen::MatrixXd y = panel.outcomes().leftCols(kp);
  const WlsResult res = cell_wls(y, panel.group(), rw.unit, x);

  PretrendTest out;
  out.df = static_cast<int>(kp - 1);
  out.interactions = res.beta.tail(kp - 1);
  const Eigen::MatrixXd v = res.vcov.bottomRightCorner(kp - 1, kp - 1);
  out.interaction_se = v.diagonal().cwiseMax(0.0).cwiseSqrt();
  for (Index j = 1; j < kp; ++j) out.interaction_times.push_back(panel.times()[j]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(v);
  if (qr.rank() < kp - 1)
    throw RankDeficient("pre-trend covariance matrix is singular");
  out.wald = std::max(0.0, out.interactions.dot(qr.solve(out.interactions)));
  boost::math::chi_squared dist(out.df);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.wald));
  return out;
}

std::optional<double> percent_bias_reduction(double bias_weighted, double bias_unweighted) {
  if (bias_unweighted == 0.0 || !std::isfinite(bias_unweighted) ||
      !std::isfinite(bias_weighted))
    return std::nullopt;
  return 100.0 * (1.0 - bias_weighted / bias_unweighted);
}

std::string format_estimate(const DidFit& fit, int decimals) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.*f (%.*f--%.*f)", decimals, fit.tau, decimals,
                fit.ci_low, decimals, fit.ci_high);
  return buf;
}

}  // namespace ebdid
