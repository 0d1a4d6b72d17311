#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ebdid/panel.hpp"

namespace ebdid {

enum class TrendKind { kFirstDifference, kPolynomial };

/// Per-unit pre-intervention trend features, one row per unit.
///
/// FirstDifference: column m is (y(t_m) - y(t_{m-1})) / (t_m - t_{m-1}) over
/// consecutive pre-period times, so there are K_pre - 1 columns.
/// Polynomial: column m is the coefficient on t^m (m = 1..order) of a
/// per-unit least-squares fit on {1, t, ..., t^order}. Intercepts are not
/// kept.
struct TrendMatrix {
  std::vector<std::string> unit_ids;
  Eigen::MatrixXd features;
  TrendKind kind = TrendKind::kFirstDifference;
  int order = 0;  // polynomial order, or K_pre - 1 for first differences
  Eigen::VectorXd time_basis;
  std::vector<std::string> warnings;

  Index n_units() const { return features.rows(); }
  Index n_features() const { return features.cols(); }
  std::vector<std::string> feature_names() const;
  bool same_shape_as(const TrendMatrix& other) const {
    return kind == other.kind && order == other.order &&
           n_features() == other.n_features();
  }
};

/// Uses the panel's pre-intervention times (t < t_e); post-period columns,
/// if present, are ignored. Throws InputError when K_pre < 2.
TrendMatrix first_difference_trends(const Panel& panel);

/// Per-unit OLS on a centered and scaled time basis, mapped back to raw
/// powers of t. Throws InputError when K_pre < order + 1 and RankDeficient
/// when the pre-period basis is singular. K_pre == order + 1 is accepted
/// with a warning (exact interpolation).
TrendMatrix polynomial_trends(const Panel& panel, int order);

/// Rows of `trends` selected by index, in the given order.
TrendMatrix select_rows(const TrendMatrix& trends, std::span<const Index> rows);

/// Treated and comparison parts, each in panel order.
TrendMatrix treated_trends(const TrendMatrix& trends, const Panel& panel);
TrendMatrix comparison_trends(const TrendMatrix& trends, const Panel& panel);

/// CSV `unit,feature_1..feature_M`.
void write_trends_csv(const TrendMatrix& trends, std::ostream& out);

}  // namespace ebdid
