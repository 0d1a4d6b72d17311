#include "ebdid/simulate.hpp"

#include <cmath>
#include <random>

namespace ebdid {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Symmetric square root of a PSD matrix.
Eigen::Matrix3d psd_sqrt(const Eigen::Matrix3d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_psd(const Eigen::Matrix3d& m, const char* name) {
  if (!m.allFinite()) throw InputError(std::string(name) + " is not finite");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InputError(std::string(name) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw InputError(std::string(name) + " is not positive semidefinite");
}

Eigen::VectorXd mean_series(const Eigen::Vector3d& nu, const Eigen::VectorXd& t) {
  return (nu[0] + nu[1] * t.array() + nu[2] * t.array().square()).matrix();
}

}  // namespace

Eigen::VectorXd DgpSpec::times() const {
  return Eigen::VectorXd::LinSpaced(n_times(), 1.0, static_cast<double>(n_times()));
}

void DgpSpec::validate() const {
  if (n0 < 1 || n1 < 1) throw InputError("n0 and n1 must be >= 1");
  if (k_pre < 2) throw InputError("k_pre must be >= 2");
  if (k_post < 1) throw InputError("k_post must be >= 1");
  if (!std::isfinite(tau)) throw InputError("tau must be finite");
  if (!(rho >= 0.0 && rho < 1.0)) throw InputError("rho must lie in [0, 1)");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw InputError("sigma2 must be > 0");
  if (!nu0.allFinite() || !nu1.allFinite()) throw InputError("nu must be finite");
  check_psd(gamma0, "gamma0");
  check_psd(gamma1, "gamma1");
}

ScenarioId parse_scenario(const std::string& name) {
  if (name == "scenario1") return ScenarioId::kScenario1;
  if (name == "scenario2") return ScenarioId::kScenario2;
  if (name == "scenario3") return ScenarioId::kScenario3;
  if (name == "null_parallel") return ScenarioId::kNullParallel;
  if (name == "variance_sweep") return ScenarioId::kVarianceSweep;
  throw InputError("unknown scenario '" + name + "'");
}

std::string scenario_name(ScenarioId id) {
  switch (id) {
    case ScenarioId::kScenario1: return "scenario1";
    case ScenarioId::kScenario2: return "scenario2";
    case ScenarioId::kScenario3: return "scenario3";
    case ScenarioId::kNullParallel: return "null_parallel";
    case ScenarioId::kVarianceSweep: return "variance_sweep";
  }
  return "unknown";
}

DgpSpec scenario_spec(ScenarioId id, const DgpOverrides& o) {
  DgpSpec s;
  switch (id) {
    case ScenarioId::kScenario1:
    case ScenarioId::kVarianceSweep:
      s.nu0 << 0, 0, 0;
      s.nu1 << 1, -0.2, 0;
      s.gamma0.diagonal() << 0, 0.2 * 0.2, 0;
      s.gamma1.diagonal() << 0, 0.1 * 0.1, 0;
      if (id == ScenarioId::kVarianceSweep) s.rho = 0.5;
      break;
    case ScenarioId::kScenario2:
      s.nu0 << 0, -0.2, 0;
      s.nu1 << 1, 0, 0;
      break;
    case ScenarioId::kScenario3:
      s.nu0 << 0, 0, 0;
      s.nu1 << 1, -0.2, 0.05;
      s.gamma0 << 1.0, 0.1, -0.04,
                  0.1, 0.2 * 0.2, -0.0075,
                  -0.04, -0.0075, 0.05 * 0.05;
      s.gamma1 << 1.0, 0.05, -0.02,
                  0.05, 0.1 * 0.1, -0.001875,
                  -0.02, -0.001875, 0.025 * 0.025;
      break;
    case ScenarioId::kNullParallel:
      s.nu0 << 0, 0, 0;
      s.nu1 << 1, 0, 0;
      s.gamma0.diagonal() << 0, 0.2 * 0.2, 0;
      s.gamma1.diagonal() << 0, 0.2 * 0.2, 0;
      break;
  }
  if (o.n0) s.n0 = *o.n0;
  if (o.n1) s.n1 = *o.n1;
  if (o.k_pre) s.k_pre = *o.k_pre;
  if (o.k_post) s.k_post = *o.k_post;
  if (o.tau) s.tau = *o.tau;
  if (o.rho) s.rho = *o.rho;
  if (o.sigma2) s.sigma2 = *o.sigma2;
  if (o.nu0) s.nu0 = *o.nu0;
  if (o.nu1) s.nu1 = *o.nu1;
  if (o.gamma0) s.gamma0 = *o.gamma0;
  if (o.gamma1) s.gamma1 = *o.gamma1;
  s.validate();
  return s;
}

Eigen::MatrixXd ar1_covariance(Index k, double rho, double sigma2) {
  Eigen::MatrixXd s(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      s(i, j) = sigma2 * std::pow(rho, static_cast<double>(std::abs(i - j)));
  return s;
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

Panel generate_panel(const DgpSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Index k = spec.n_times();
  const Index n = spec.n0 + spec.n1;
  const Eigen::VectorXd t = spec.times();
  Eigen::LLT<Eigen::MatrixXd> llt(ar1_covariance(k, spec.rho, spec.sigma2));
  if (llt.info() != Eigen::Success)
    throw NumericalError("AR(1) covariance is not positive definite");
  const Eigen::MatrixXd l_sigma = llt.matrixL();
  const Eigen::Matrix3d root[2] = {psd_sqrt(spec.gamma0), psd_sqrt(spec.gamma1)};
  const Eigen::Vector3d* nu[2] = {&spec.nu0, &spec.nu1};

  Eigen::MatrixXd basis(k, 3);
  basis.col(0).setOnes();
  basis.col(1) = t;
  basis.col(2) = t.array().square();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd y(n, k);
  std::vector<std::string> ids(static_cast<std::size_t>(n));
  std::vector<int> group(static_cast<std::size_t>(n));
  Eigen::Vector3d z3;
  Eigen::VectorXd zk(k);
  for (Index i = 0; i < n; ++i) {
    const int a = i < spec.n0 ? 0 : 1;
    ids[static_cast<std::size_t>(i)] = std::to_string(i + 1);
    group[static_cast<std::size_t>(i)] = a;
    for (int j = 0; j < 3; ++j) z3[j] = normal(rng);
    for (Index j = 0; j < k; ++j) zk[j] = normal(rng);
    const Eigen::Vector3d beta = *nu[a] + root[a] * z3;
    Eigen::VectorXd row = basis * beta + l_sigma * zk;
    if (a == 1) row.tail(spec.k_post).array() += spec.tau;
    y.row(i) = row.transpose();
  }
  return Panel::Create(std::move(ids), std::move(group), t, spec.intervention_time(),
                       std::move(y));
}

double expected_did(const DgpSpec& spec, const TimeSpec& time_spec, OracleWeights weights,
                    const DidOptions& options) {
  spec.validate();
  const Index k = spec.n_times();
  const Eigen::VectorXd t = spec.times();
  const double te = spec.intervention_time();

  Eigen::Vector3d nu0 = spec.nu0;
  if (weights == OracleWeights::kBalanced) nu0.tail(2) = spec.nu1.tail(2);
  Eigen::VectorXd mu[2] = {mean_series(nu0, t), mean_series(spec.nu1, t)};
  for (Index j = 0; j < k; ++j)
    if (t[j] >= te) mu[1][j] += spec.tau;

  // Total row weight per group and time.
  double mass[2] = {1.0, 1.0};
  if (options.weighting == RowWeighting::kTreatedUnit) {
    mass[1] = static_cast<double>(spec.n1);
    mass[0] = weights == OracleWeights::kNone ? static_cast<double>(spec.n0) : 1.0;
  }

  // Raw (unscaled) design, one row per group-time cell.
  Index q = time_spec.kind == TimeSpec::Kind::kPolynomial ? time_spec.order + 1 : k;
  const Index p = q + 2;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2 * k, p);
  Eigen::VectorXd y(2 * k);
  Eigen::VectorXd w(2 * k);
  for (int a = 0; a < 2; ++a) {
    for (Index j = 0; j < k; ++j) {
      const Index r = a * k + j;
      if (time_spec.kind == TimeSpec::Kind::kPolynomial) {
        for (Index m = 0; m < q; ++m) x(r, m) = std::pow(t[j], static_cast<double>(m));
      } else {
        x(r, j) = 1.0;
      }
      x(r, q) = a;
      x(r, q + 1) = (a == 1 && t[j] >= te) ? 1.0 : 0.0;
      y[r] = mu[a][j];
      w[r] = mass[a];
    }
  }
  const Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
  const Eigen::VectorXd xtwy = x.transpose() * w.asDiagonal() * y;
  const Eigen::VectorXd beta = xtwx.fullPivLu().solve(xtwy);
  return beta[q + 1];
}

Reliability trend_reliability(const DgpSpec& spec, int trend_order) {
  if (trend_order != 1)
    throw InputError("trend reliability is defined for the linear trend only");
  spec.validate();
  const Index kp = spec.k_pre;
  const Eigen::VectorXd t = spec.times().head(kp);
  // Slope functional of simple regression: a_j = (t_j - mean t) / S_tt.
  const Eigen::VectorXd centered = t.array() - t.mean();
  const Eigen::VectorXd a = centered / centered.squaredNorm();
  const Eigen::MatrixXd sigma = ar1_covariance(kp, spec.rho, spec.sigma2);

  Reliability r;
  r.between = spec.gamma0(1, 1);
  r.within = a.dot(sigma * a);
  if (r.between <= 0.0) {
    r.value = 0.0;
    r.warnings.push_back("comparison slope variance is zero; reliability set to 0");
  } else {
    r.value = r.between / (r.between + r.within);
  }
  return r;
}

}  // namespace ebdid
