#include "ebdid/trends.hpp"

#include <ostream>

#include "poly_basis.hpp"
#include "text_util.hpp"

namespace ebdid {

std::vector<std::string> TrendMatrix::feature_names() const {
  std::vector<std::string> names;
  const char* prefix = kind == TrendKind::kFirstDifference ? "fd_" : "poly_";
  for (Index m = 1; m <= n_features(); ++m)
    names.push_back(prefix + std::to_string(m));
  return names;
}

TrendMatrix first_difference_trends(const Panel& panel) {
  const Index k_pre = panel.k_pre();
  if (k_pre < 2)
    throw InputError("first-difference trends need at least 2 pre-periods, got " +
                     std::to_string(k_pre));
  const auto& t = panel.times();
  const auto& y = panel.outcomes();

  TrendMatrix out;
  out.unit_ids = panel.unit_ids();
  out.kind = TrendKind::kFirstDifference;
  out.order = static_cast<int>(k_pre - 1);
  out.time_basis = t.head(k_pre);
  out.features.resize(panel.n_units(), k_pre - 1);
  for (Index m = 1; m < k_pre; ++m) {
    const double dt = t[m] - t[m - 1];
    out.features.col(m - 1) = (y.col(m) - y.col(m - 1)) / dt;
  }
  if (!out.features.allFinite())
    throw InputError("first-difference trends are not finite");
  return out;
}

TrendMatrix polynomial_trends(const Panel& panel, int order) {
  if (order < 1) throw InputError("polynomial trend order must be >= 1");
  const Index k_pre = panel.k_pre();
  if (k_pre < order + 1)
    throw InputError("polynomial trend of order " + std::to_string(order) +
                     " needs at least " + std::to_string(order + 1) +
                     " pre-periods, got " + std::to_string(k_pre));

  const Eigen::VectorXd t = panel.times().head(k_pre);
  const auto scaled = detail::ScaledTime::For(t);
  const Eigen::MatrixXd basis = detail::scaled_powers(t, order, scaled);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
  if (qr.rank() < order + 1)
    throw RankDeficient("pre-period time basis is rank deficient for order " +
                        std::to_string(order));

  // One solve for all units: columns of the right-hand side are units.
  const Eigen::MatrixXd y_pre_t = panel.outcomes().leftCols(k_pre).transpose();
  const Eigen::MatrixXd gamma = qr.solve(y_pre_t);
  const Eigen::MatrixXd beta = detail::raw_from_scaled(order, scaled) * gamma;

  TrendMatrix out;
  out.unit_ids = panel.unit_ids();
  out.kind = TrendKind::kPolynomial;
  out.order = order;
  out.time_basis = t;
  out.features = beta.bottomRows(order).transpose();
  if (k_pre == order + 1)
    out.warnings.push_back("pre-period count equals order + 1: trends interpolate "
                           "exactly and carry all of the outcome noise");
  if (!out.features.allFinite())
    throw InputError("polynomial trends are not finite");
  return out;
}

TrendMatrix select_rows(const TrendMatrix& trends, std::span<const Index> rows) {
  TrendMatrix out;
  out.kind = trends.kind;
  out.order = trends.order;
  out.time_basis = trends.time_basis;
  out.warnings = trends.warnings;
  out.features.resize(static_cast<Index>(rows.size()), trends.n_features());
  out.unit_ids.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Index>(r)) = trends.features.row(rows[r]);
    out.unit_ids.push_back(trends.unit_ids[rows[r]]);
  }
  return out;
}

TrendMatrix treated_trends(const TrendMatrix& trends, const Panel& panel) {
  return select_rows(trends, panel.treated_rows());
}

TrendMatrix comparison_trends(const TrendMatrix& trends, const Panel& panel) {
  return select_rows(trends, panel.comparison_rows());
}

void write_trends_csv(const TrendMatrix& trends, std::ostream& out) {
  out << "unit";
  for (Index m = 1; m <= trends.n_features(); ++m) out << ",feature_" << m;
  out << '\n';
  for (Index i = 0; i < trends.n_units(); ++i) {
    out << detail::quote_if_needed(trends.unit_ids[i]);
    for (Index m = 0; m < trends.n_features(); ++m)
      out << ',' << detail::format_double(trends.features(i, m));
    out << '\n';
  }
}

}  // namespace ebdid
