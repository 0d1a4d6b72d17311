#include "doctest.h"

#include <random>
#include <sstream>

#include "ebdid/simulate.hpp"
#include "ebdid/trends.hpp"
#include "oracles.hpp"

using namespace ebdid;

namespace {

// Two-unit panel (one per group) with the given series for the treated unit.
Panel series_panel(const Eigen::VectorXd& t, const Eigen::VectorXd& y_treated,
                   const Eigen::VectorXd& y_comparison) {
  Eigen::MatrixXd y(2, t.size());
  y.row(0) = y_comparison.transpose();
  y.row(1) = y_treated.transpose();
  // Everything before the last time is pre-period.
  return Panel::Create({"1", "2"}, {0, 1}, t, t[t.size() - 1], y);
}

}  // namespace

TEST_CASE("first differences: constant, linear and unequal spacing") {
  Eigen::VectorXd t(5);
  t << 1, 2, 3, 4, 5;
  Eigen::VectorXd c = Eigen::VectorXd::Constant(5, 3.0);
  Eigen::VectorXd lin = 2.0 * t;
  const TrendMatrix fd = first_difference_trends(series_panel(t, lin, c));
  CHECK(fd.n_features() == 3);
  CHECK(fd.features.row(0).isZero(0));
  CHECK(fd.features.row(1).isApprox(Eigen::RowVector3d(2, 2, 2)));

  Eigen::VectorXd t2(3);
  t2 << 1, 3, 4;
  Eigen::VectorXd y2(3);
  y2 << 1, 5, 0;
  const TrendMatrix fd2 = first_difference_trends(series_panel(t2, y2, y2));
  REQUIRE(fd2.n_features() == 1);
  CHECK(fd2.features(1, 0) == 2.0);
  CHECK(fd2.feature_names() == std::vector<std::string>{"fd_1"});
}

TEST_CASE("polynomial trends recover noiseless lines and quadratics") {
  Eigen::VectorXd t(5);
  t << 1, 2, 3, 4, 5;
  Eigen::VectorXd lin = (3.0 + 0.5 * t.array()).matrix();
  Eigen::VectorXd quad = (1.0 - 0.2 * t.array() + 0.05 * t.array().square()).matrix();
  const Panel p = series_panel(t, quad, lin);
  const TrendMatrix p1 = polynomial_trends(p, 1);
  CHECK(std::abs(p1.features(0, 0) - 0.5) <= 1e-12);
  const TrendMatrix p2 = polynomial_trends(p, 2);
  CHECK(std::abs(p2.features(1, 0) - (-0.2)) <= 1e-9);
  CHECK(std::abs(p2.features(1, 1) - 0.05) <= 1e-9);
  CHECK(std::abs(p2.features(0, 1)) <= 1e-9);
}

TEST_CASE("polynomial slope of (0,1,0,1) matches the normal-equations oracle") {
  Eigen::VectorXd t(5);
  t << 1, 2, 3, 4, 5;
  Eigen::VectorXd y(5);
  y << 0, 1, 0, 1, 9;
  const TrendMatrix p1 = polynomial_trends(series_panel(t, y, y), 1);
  const auto beta = oracle::poly_fit({1, 2, 3, 4}, {0, 1, 0, 1}, 1);
  CHECK(std::abs(p1.features(0, 0) - static_cast<double>(beta[1])) <= 1e-12);
  CHECK(std::abs(p1.features(0, 0) - 0.2) <= 1e-12);
}

TEST_CASE("polynomial trends on calendar-year times agree with the oracle") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Eigen::VectorXd t(6);
  t << 2012, 2013, 2014.5, 2015, 2016, 2017;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd y(6);
    for (int i = 0; i < 6; ++i) y[i] = n(rng);
    const TrendMatrix p2 = polynomial_trends(series_panel(t, y, y), 2);
    const auto beta = oracle::poly_fit({2012, 2013, 2014.5, 2015, 2016}, {y[0], y[1], y[2], y[3], y[4]}, 2);
    CHECK(p2.features(0, 0) == doctest::Approx(static_cast<double>(beta[1])).epsilon(1e-7));
    CHECK(p2.features(0, 1) == doctest::Approx(static_cast<double>(beta[2])).epsilon(1e-7));
  }
}

TEST_CASE("linear slope as a weighted mean of first differences on equispaced times") {
  const Panel p = generate_panel(scenario_spec(ScenarioId::kScenario1, {.n0 = 50, .n1 = 30}), 2);
  const TrendMatrix fd = first_difference_trends(p);
  const TrendMatrix p1 = polynomial_trends(p, 1);
  // Not equal in general: OLS weights the differences (3,4,3)/10 on 4 points.
  const Eigen::VectorXd ols_from_fd = (0.3 * fd.features.col(0) + 0.4 * fd.features.col(1) +
                                       0.3 * fd.features.col(2));
  CHECK((p1.features.col(0) - ols_from_fd).cwiseAbs().maxCoeff() <= 1e-10);

  // With three pre-periods the weights are equal, so the identity holds.
  const Panel p3 = generate_panel(
      scenario_spec(ScenarioId::kScenario1, {.n0 = 50, .n1 = 30, .k_pre = 3}), 2);
  const TrendMatrix fd3 = first_difference_trends(p3);
  const TrendMatrix s3 = polynomial_trends(p3, 1);
  CHECK((s3.features.col(0) - fd3.features.rowwise().mean()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("adding a constant to a unit leaves trends unchanged") {
  const Panel p = generate_panel(scenario_spec(ScenarioId::kScenario3, {.n0 = 20, .n1 = 10}), 6);
  Eigen::MatrixXd y = p.outcomes();
  for (Index i = 0; i < y.rows(); ++i) y.row(i).array() += 10.0 * i - 40.0;
  const Panel shifted = Panel::Create(p.unit_ids(), p.group(), p.times(), p.intervention_time(), y);
  for (auto f : {0, 1, 2}) {
    const TrendMatrix a = f == 0 ? first_difference_trends(p) : polynomial_trends(p, f);
    const TrendMatrix b = f == 0 ? first_difference_trends(shifted) : polynomial_trends(shifted, f);
    CHECK((a.features - b.features).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("trend errors and warnings") {
  const Panel p = generate_panel(scenario_spec(ScenarioId::kScenario1, {.n0 = 5, .n1 = 5}), 1);
  CHECK_THROWS_AS(polynomial_trends(p, 4), InputError);
  CHECK_THROWS_AS(polynomial_trends(p, 0), InputError);
  const TrendMatrix exact = polynomial_trends(p, 3);
  CHECK(exact.warnings.size() == 1);
  CHECK(polynomial_trends(p, 2).warnings.empty());
}

TEST_CASE("trend CSV and group split") {
  const Panel p = generate_panel(scenario_spec(ScenarioId::kScenario1, {.n0 = 3, .n1 = 2}), 1);
  const TrendMatrix fd = first_difference_trends(p);
  std::ostringstream out;
  write_trends_csv(fd, out);
  CHECK(out.str().rfind("unit,feature_1,feature_2,feature_3\n1,", 0) == 0);
  const TrendMatrix t = treated_trends(fd, p);
  CHECK(t.unit_ids == std::vector<std::string>{"4", "5"});
  CHECK(t.features.row(1) == fd.features.row(4));
  CHECK(comparison_trends(fd, p).n_units() == 3);
}
