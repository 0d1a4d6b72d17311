#include "doctest.h"

#include <random>
#include <sstream>

#include "ebdid/balance.hpp"
#include "ebdid/simulate.hpp"
#include "oracles.hpp"

using namespace ebdid;

namespace {

BalanceProblem make_problem(const Eigen::MatrixXd& c, const Eigen::VectorXd& targets) {
  BalanceProblem p;
  p.constraint_matrix = c;
  p.targets = targets;
  p.base_weights = Eigen::VectorXd::Constant(c.rows(), 1.0 / c.rows());
  for (Index j = 0; j < c.cols(); ++j) p.column_labels.push_back("c" + std::to_string(j));
  for (Index i = 0; i < c.rows(); ++i) p.comparison_ids.push_back(std::to_string(i + 1));
  p.n_treated = 1;
  return p;
}

TrendMatrix trend_matrix(const Eigen::MatrixXd& f, TrendKind kind = TrendKind::kFirstDifference) {
  TrendMatrix t;
  t.features = f;
  t.kind = kind;
  t.order = static_cast<int>(f.cols());
  for (Index i = 0; i < f.rows(); ++i) t.unit_ids.push_back(std::to_string(i + 1));
  return t;
}

}  // namespace

TEST_CASE("constraint layout: moment-major columns and treated-mean targets") {
  Eigen::MatrixXd c(3, 2), t(2, 2);
  c << 1, 2, 3, 4, 5, 7;
  t << 2, 3, 4, 5;
  const BalanceProblem one = build_constraints(trend_matrix(c.leftCols(1)),
                                               trend_matrix(t.leftCols(1)), std::nullopt, {1});
  CHECK(one.n_constraints() == 1);

  const BalanceProblem p = build_constraints(trend_matrix(c), trend_matrix(t), std::nullopt, {1, 2});
  REQUIRE(p.n_constraints() == 4);
  CHECK(p.column_labels == std::vector<std::string>{"fd_1", "fd_2", "fd_1^2", "fd_2^2"});
  CHECK(p.constraint_matrix.col(2) == c.col(0).array().square().matrix());
  CHECK(p.targets[0] == 3.0);
  CHECK(p.targets[3] == (9.0 + 25.0) / 2.0);
  CHECK(p.base_weights.sum() == doctest::Approx(1.0));

  CovariateBlock cov{Eigen::MatrixXd::Random(3, 7), Eigen::MatrixXd::Random(2, 7), {}};
  for (int k = 0; k < 7; ++k) cov.names.push_back("z" + std::to_string(k));
  Eigen::MatrixXd c3 = Eigen::MatrixXd::Random(3, 3), t3 = Eigen::MatrixXd::Random(2, 3);
  CHECK(build_constraints(trend_matrix(c3), trend_matrix(t3), cov, {1}).n_constraints() == 10);
}

TEST_CASE("constraint errors and degenerate columns") {
  Eigen::MatrixXd c(3, 1), t(2, 1);
  c << 1, 2, 3;
  t << 2, 2;
  CHECK_THROWS_AS(build_constraints(trend_matrix(c), trend_matrix(t, TrendKind::kPolynomial),
                                    std::nullopt, {1}),
                  InputError);
  CHECK_THROWS_AS(build_constraints(trend_matrix(c), trend_matrix(t), std::nullopt, {}), InputError);
  CHECK_THROWS_AS(build_constraints(trend_matrix(c), trend_matrix(t), std::nullopt, {3}), InputError);

  Eigen::MatrixXd c2(3, 2), t2(2, 2);
  c2 << 1, 5, 2, 5, 3, 5;
  t2 << 2, 5, 2, 5;
  const BalanceProblem dropped = build_constraints(trend_matrix(c2), trend_matrix(t2), std::nullopt, {1});
  CHECK(dropped.n_constraints() == 1);
  CHECK(dropped.warnings.size() == 1);
  t2(0, 1) = 6;
  CHECK_THROWS_AS(build_constraints(trend_matrix(c2), trend_matrix(t2), std::nullopt, {1}),
                  InfeasibleTargets);
}

TEST_CASE("targets at the base moments give base weights and zero dual") {
  Eigen::MatrixXd c(4, 2);
  c << 0, 1, 1, 3, 2, 2, 5, 0;
  const BalanceProblem p = make_problem(c, c.colwise().mean().transpose());
  const BalanceWeights w = solve_entropy_balance(p);
  CHECK((w.comparison_weights.array() - 0.25).abs().maxCoeff() <= 1e-12);
  CHECK(w.dual.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(w.diagnostics.iterations == 0);
}

TEST_CASE("three-unit problem matches the simplex grid-search oracle") {
  Eigen::MatrixXd c(3, 1);
  c << 0, 1, 2;
  const BalanceProblem p = make_problem(c, Eigen::VectorXd::Constant(1, 1.5));
  const BalanceWeights w = solve_entropy_balance(p);
  const auto o = oracle::kl_grid_search(c.col(0), 1.5);
  CHECK((w.comparison_weights - o.weights).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(kl_divergence(w.comparison_weights, p.base_weights) <= o.objective + 1e-6);
  CHECK(std::abs(w.comparison_weights.dot(c.col(0)) - 1.5) <= 1e-8);
}

TEST_CASE("target outside the hull is infeasible") {
  Eigen::MatrixXd c(4, 1);
  c << -3, -2, -1, -0.5;
  CHECK_THROWS_AS(solve_entropy_balance(make_problem(c, Eigen::VectorXd::Constant(1, 1.0))),
                  InfeasibleTargets);
}

TEST_CASE("collinear columns are degenerate") {
  Eigen::MatrixXd c(5, 2);
  c << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10;
  Eigen::VectorXd t(2);
  t << 3.5, 7.0;
  CHECK_THROWS_AS(solve_entropy_balance(make_problem(c, t)), DegenerateConstraints);
}

TEST_CASE("tiny iteration budget reports non-convergence") {
  Eigen::MatrixXd c(6, 1);
  c << 0, 1, 2, 3, 4, 5;
  SolverSettings s;
  s.max_iterations = 1;
  CHECK_THROWS_AS(solve_entropy_balance(make_problem(c, Eigen::VectorXd::Constant(1, 4.9)), s),
                  NonConvergence);
}

TEST_CASE("KKT: residual within tolerance and exponential-tilting form") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  Eigen::MatrixXd c(40, 3);
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j) c(i, j) = n(rng) + 0.3 * j;
  Eigen::VectorXd target = c.colwise().mean().transpose();
  target[0] += 0.3;
  target[2] -= 0.2;
  const BalanceProblem p = make_problem(c, target);
  const BalanceWeights w = solve_entropy_balance(p);
  CHECK((w.comparison_weights.array() > 0).all());
  CHECK(w.comparison_weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(w.diagnostics.max_violation <= 1e-8);
  CHECK(check_balance(w, p).cwiseAbs().maxCoeff() <= 1e-7);
  Eigen::VectorXd tilt = (-(c * w.dual)).array().exp();
  tilt /= tilt.sum();
  CHECK(((tilt - w.comparison_weights).array() / w.comparison_weights.array()).abs().maxCoeff() <= 1e-10);
}

TEST_CASE("rescaling a column rescales the dual inversely and keeps the weights") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Eigen::MatrixXd c(30, 2);
  for (Index i = 0; i < c.size(); ++i) c(i) = n(rng);
  Eigen::Vector2d t(0.3, -0.2);
  const BalanceWeights a = solve_entropy_balance(make_problem(c, t));
  Eigen::MatrixXd c2 = c;
  c2.col(1) *= -250.0;
  Eigen::Vector2d t2(0.3, -0.2 * -250.0);
  const BalanceWeights b = solve_entropy_balance(make_problem(c2, t2));
  CHECK((a.comparison_weights - b.comparison_weights).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(b.dual[1] == doctest::Approx(a.dual[1] / -250.0).epsilon(1e-6));
}

TEST_CASE("dropping a constraint never increases the KL objective") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd c(25, 3);
    for (Index i = 0; i < c.size(); ++i) c(i) = n(rng);
    Eigen::VectorXd t = c.colwise().mean().transpose() + 0.2 * Eigen::VectorXd::Ones(3);
    const BalanceProblem full = make_problem(c, t);
    const BalanceProblem part = make_problem(c.leftCols(2), t.head(2));
    const double kl_full = kl_divergence(solve_entropy_balance(full).comparison_weights, full.base_weights);
    const double kl_part = kl_divergence(solve_entropy_balance(part).comparison_weights, part.base_weights);
    CHECK(kl_part <= kl_full + 1e-12);
  }
}

TEST_CASE("effective sample size") {
  CHECK(effective_sample_size(Eigen::VectorXd::Constant(7, 0.3)) == doctest::Approx(7.0));
  Eigen::Vector3d w(0.7, 0.2, 0.1);
  CHECK(effective_sample_size(w) == doctest::Approx(1.0 / 0.54).epsilon(1e-12));
  CHECK(std::abs(1.0 / 0.54 - 1.8519) < 1e-4);
  Eigen::Vector4d near(0.5, 0.5, 1e-9, 1e-9);
  CHECK(effective_sample_size(near) == doctest::Approx(2.0).epsilon(1e-6));
  Eigen::VectorXd solved = solve_entropy_balance(
      make_problem(Eigen::Vector4d(0, 1, 2, 3), Eigen::VectorXd::Constant(1, 2.0))).comparison_weights;
  CHECK(effective_sample_size(solved) < 4.0);
}

TEST_CASE("check_balance with base and concentrated weights") {
  Eigen::MatrixXd c(3, 2);
  c << 1, 0, 2, 1, 4, 5;
  Eigen::Vector2d t(3, 3);
  const BalanceProblem p = make_problem(c, t);
  const Eigen::VectorXd base = check_balance(p.base_weights, p);
  CHECK(base.isApprox(c.colwise().mean().transpose() - t));
  const Eigen::VectorXd one = check_balance(Eigen::Vector3d(0, 0, 1), p);
  CHECK(one.isApprox(c.row(2).transpose() - t));
}

TEST_CASE("weights CSV") {
  Eigen::MatrixXd c(3, 1);
  c << 0, 1, 2;
  const BalanceProblem p = make_problem(c, Eigen::VectorXd::Constant(1, 1.0));
  std::ostringstream out;
  write_weights_csv(solve_entropy_balance(p), p, out);
  CHECK(out.str().rfind("unit,weight\n1,0.333333333333333", 0) == 0);
}

TEST_CASE("panel convenience wrapper splits groups") {
  const Panel panel = generate_panel(scenario_spec(ScenarioId::kScenario1, {.n0 = 100, .n1 = 40}), 9);
  const TrendMatrix fd = first_difference_trends(panel);
  const BalanceProblem p = build_constraints(panel, fd, {}, {1, 2});
  CHECK(p.n_comparison() == 100);
  CHECK(p.n_treated == 40);
  CHECK(p.n_constraints() == 6);
  CHECK(p.comparison_ids.front() == "1");
  const BalanceWeights w = solve_entropy_balance(p);
  CHECK(w.treated_weight == doctest::Approx(1.0 / 40));
}
