#include "doctest.h"

#include <cmath>
#include <random>

#include "ebdid/simulate.hpp"
#include "ebdid/trends.hpp"
#include "oracles.hpp"

using namespace ebdid;

namespace {

// Expected DD from the exact group mean series by stacked normal equations,
// one row per group-time cell with equal group mass.
double cell_oracle_poly1(const DgpSpec& s) {
  std::vector<std::vector<long double>> x;
  std::vector<long double> y;
  for (int a = 0; a <= 1; ++a) {
    const Eigen::Vector3d& nu = a ? s.nu1 : s.nu0;
    for (Index k = 1; k <= s.n_times(); ++k) {
      const long double t = static_cast<long double>(k);
      const long double post = k >= s.k_pre + 1 ? 1.0L : 0.0L;
      x.push_back({1.0L, t, static_cast<long double>(a), a * post});
      y.push_back(nu[0] + nu[1] * t + nu[2] * t * t + s.tau * a * post);
    }
  }
  return static_cast<double>(oracle::normal_equations(x, y)[3]);
}

}  // namespace

TEST_CASE("scenario defaults") {
  const DgpSpec s1 = scenario_spec(ScenarioId::kScenario1);
  CHECK(s1.n0 == 1000);
  CHECK(s1.n1 == 500);
  CHECK(s1.tau == 0.0);
  CHECK(s1.sigma2 == 1.0);
  CHECK(s1.gamma0(1, 1) == doctest::Approx(0.04));
  CHECK(s1.gamma1(1, 1) == doctest::Approx(0.01));
  CHECK(s1.nu1[1] == -0.2);

  const DgpSpec s2 = scenario_spec(ScenarioId::kScenario2);
  CHECK(s2.gamma0.isZero(0));
  CHECK(s2.gamma1.isZero(0));
  CHECK(s2.nu0[1] == -0.2);

  const DgpSpec s3 = scenario_spec(ScenarioId::kScenario3);
  Eigen::Matrix3d g0;
  g0 << 1, 0.1, -0.04, 0.1, 0.04, -0.0075, -0.04, -0.0075, 0.0025;
  CHECK((s3.gamma0 - g0).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(s3.gamma1(1, 2) == -0.001875);
  CHECK(s3.nu1 == Eigen::Vector3d(1, -0.2, 0.05));

  CHECK(scenario_spec(ScenarioId::kVarianceSweep).rho == 0.5);
  CHECK(parse_scenario(scenario_name(ScenarioId::kNullParallel)) == ScenarioId::kNullParallel);
  CHECK_THROWS_AS(parse_scenario("scenario9"), InputError);
  CHECK(scenario_spec(ScenarioId::kScenario1).times() == Eigen::VectorXd::LinSpaced(5, 1, 5));
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(scenario_spec(ScenarioId::kScenario1, {.rho = 1.0}), InputError);
  CHECK_THROWS_AS(scenario_spec(ScenarioId::kScenario1, {.sigma2 = 0.0}), InputError);
  CHECK_THROWS_AS(scenario_spec(ScenarioId::kScenario1, {.k_pre = 1}), InputError);
  Eigen::Matrix3d bad = Eigen::Matrix3d::Zero();
  bad(1, 1) = -0.1;
  CHECK_THROWS_AS(scenario_spec(ScenarioId::kScenario1, {.gamma0 = bad}), InputError);
}

TEST_CASE("AR(1) covariance") {
  const Eigen::MatrixXd s = ar1_covariance(5, 0.9, 1.0);
  CHECK(s(0, 2) == doctest::Approx(0.81));
  CHECK(s(2, 0) == doctest::Approx(0.81));
  CHECK(s(4, 4) == 1.0);
  CHECK(ar1_covariance(4, 0.0, 2.0) == 2.0 * Eigen::MatrixXd::Identity(4, 4));
  for (double rho : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    Eigen::LLT<Eigen::MatrixXd> llt(ar1_covariance(5, rho, 1.0));
    CHECK(llt.info() == Eigen::Success);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const DgpSpec s = scenario_spec(ScenarioId::kScenario3, {.n0 = 40, .n1 = 20});
  const Panel a = generate_panel(s, 42);
  const Panel b = generate_panel(s, 42);
  CHECK(a == b);
  CHECK(a.outcomes() == b.outcomes());
  CHECK(a.outcomes() != generate_panel(s, 43).outcomes());
  CHECK(a.unit_ids().front() == "1");
  CHECK(a.group()[0] == 0);
  CHECK(a.group()[59] == 1);
  CHECK(substream_seed(1, 0, 0) != substream_seed(1, 0, 1));
  CHECK(substream_seed(1, 0, 1) != substream_seed(1, 1, 0));
}

TEST_CASE("tau adds exactly to treated post-period outcomes") {
  const DgpSpec s0 = scenario_spec(ScenarioId::kScenario1, {.n0 = 30, .n1 = 20, .k_post = 2});
  const DgpSpec s1 = scenario_spec(ScenarioId::kScenario1, {.n0 = 30, .n1 = 20, .k_post = 2, .tau = 0.7});
  const Panel a = generate_panel(s0, 5);
  const Panel b = generate_panel(s1, 5);
  const Eigen::MatrixXd d = b.outcomes() - a.outcomes();
  for (Index i = 0; i < a.n_units(); ++i)
    for (Index j = 0; j < a.n_times(); ++j) {
      const double expect = (a.is_treated(i) && a.is_post(j)) ? 0.7 : 0.0;
      CHECK(std::abs(d(i, j) - expect) <= 1e-12);
    }
}

TEST_CASE("mean comparison slope is consistent with the DGP") {
  const DgpSpec s = scenario_spec(ScenarioId::kScenario1, {.n0 = 20000, .n1 = 10, .rho = 0.5});
  const Panel p = generate_panel(s, 99);
  const TrendMatrix tr = comparison_trends(polynomial_trends(p, 1), p);
  const double mean = tr.features.col(0).mean();
  const double var = (tr.features.col(0).array() - mean).square().sum() / (tr.n_units() - 1);
  CHECK(std::abs(mean - s.nu0[1]) <= 4.0 * std::sqrt(var / tr.n_units()));
}

TEST_CASE("empirical error covariance converges to the AR(1) matrix") {
  const DgpSpec s = scenario_spec(ScenarioId::kScenario2,
                                  {.n0 = 100000, .n1 = 1, .rho = 0.5, .nu0 = Eigen::Vector3d::Zero(),
                                   .nu1 = Eigen::Vector3d::Zero()});
  const Panel p = generate_panel(s, 2024);
  const Eigen::MatrixXd e = p.outcomes().topRows(100000);
  const Eigen::MatrixXd cov = (e.transpose() * e) / static_cast<double>(e.rows());
  CHECK((cov - ar1_covariance(5, 0.5, 1.0)).norm() <= 0.05);
}

TEST_CASE("expected DD: parallel trends give tau, no-overlap bias has the closed form") {
  for (const auto& t : {TimeSpec::Nonparametric(), TimeSpec::Polynomial(1), TimeSpec::Polynomial(2)}) {
    const DgpSpec null = scenario_spec(ScenarioId::kNullParallel, {.tau = 0.4});
    CHECK(std::abs(expected_did(null, t) - 0.4) <= 1e-10);
    for (auto id : {ScenarioId::kScenario1, ScenarioId::kScenario2})
      CHECK(std::abs(expected_did(scenario_spec(id, {.tau = 0.3}), t, OracleWeights::kBalanced) - 0.3) <=
            1e-10);
  }
  // Balanced Scenario 3 shares a quadratic mean, which a linear time term
  // cannot absorb.
  const DgpSpec s3b = scenario_spec(ScenarioId::kScenario3, {.tau = 0.3});
  for (const auto& t : {TimeSpec::Nonparametric(), TimeSpec::Polynomial(2)})
    CHECK(std::abs(expected_did(s3b, t, OracleWeights::kBalanced) - 0.3) <= 1e-10);
  CHECK(std::abs(expected_did(s3b, TimeSpec::Polynomial(1), OracleWeights::kBalanced) - 0.3) > 0.01);
  const DgpSpec s2 = scenario_spec(ScenarioId::kScenario2);
  CHECK(std::abs(expected_did(s2, TimeSpec::Nonparametric()) - 0.5) <= 1e-10);
  CHECK(std::abs(expected_did(s2, TimeSpec::Polynomial(1)) - cell_oracle_poly1(s2)) <= 1e-10);
  const DgpSpec s3 = scenario_spec(ScenarioId::kScenario3, {.k_post = 2, .tau = 1.0});
  CHECK(std::abs(expected_did(s3, TimeSpec::Polynomial(1)) - cell_oracle_poly1(s3)) <= 1e-10);
}

TEST_CASE("trend reliability: limits and Monte Carlo oracle") {
  const Reliability hi = trend_reliability(scenario_spec(ScenarioId::kScenario1, {.sigma2 = 1e-10}));
  CHECK(hi.value == doctest::Approx(1.0).epsilon(1e-6));
  const Reliability none = trend_reliability(scenario_spec(ScenarioId::kScenario2));
  CHECK(none.value == 0.0);
  CHECK(none.warnings.size() == 1);
  CHECK_THROWS_AS(trend_reliability(scenario_spec(ScenarioId::kScenario1), 2), InputError);

  // OLS slope of b t + AR(1) noise over t = 1..4, drawn directly.
  for (double rho : {0.0, 0.5, 0.9}) {
    const DgpSpec s = scenario_spec(ScenarioId::kScenario1, {.rho = rho});
    std::mt19937_64 rng(static_cast<std::uint64_t>(1000 * rho) + 7);
    std::normal_distribution<double> z;
    const int n = 100000;
    const double sd_b = std::sqrt(s.gamma0(1, 1));
    const double innov = std::sqrt(s.sigma2 * (1 - rho * rho));
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
      const double b = sd_b * z(rng);
      double e = std::sqrt(s.sigma2) * z(rng);
      double slope = 0;
      for (int t = 1; t <= 4; ++t) {
        if (t > 1) e = rho * e + innov * z(rng);
        slope += (t - 2.5) / 5.0 * (b * t + e);
      }
      sum += slope;
      sum2 += slope * slope;
    }
    const double var = (sum2 - sum * sum / n) / (n - 1);
    const double mc = s.gamma0(1, 1) / var;
    const double closed = trend_reliability(s).value;
    CHECK(std::abs(closed - mc) / mc <= 0.02);
  }
}
