#include "ebdid/matching.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "text_util.hpp"

namespace ebdid {

MatchSet match_nearest(const TrendMatrix& treated, const TrendMatrix& comparison,
                       double caliper_sd) {
  if (!treated.same_shape_as(comparison))
    throw InputError("treated and comparison trend matrices differ in kind or order");
  if (!(caliper_sd > 0.0)) throw InputError("caliper must be positive");

  const Index n1 = treated.n_units();
  const Index n0 = comparison.n_units();
  const Index m = treated.n_features();

  MatchSet out;
  out.caliper_sd = caliper_sd;
  out.metric = m == 1 ? "absolute difference / pooled SD"
                      : "euclidean on pooled-SD standardized features";
  out.feature_sd.resize(m);
  for (Index j = 0; j < m; ++j) {
    const Index n = n1 + n0;
    const double mean =
        (treated.features.col(j).sum() + comparison.features.col(j).sum()) / n;
    const double ss = (treated.features.col(j).array() - mean).square().sum() +
                      (comparison.features.col(j).array() - mean).square().sum();
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    out.feature_sd[j] = sd > 0.0 ? sd : 1.0;
  }
  const Eigen::RowVectorXd inv_sd = out.feature_sd.cwiseInverse().transpose();
  const Eigen::MatrixXd zt = treated.features.array().rowwise() * inv_sd.array();
  const Eigen::MatrixXd zc = comparison.features.array().rowwise() * inv_sd.array();

  std::vector<bool> used(static_cast<std::size_t>(n0), false);
  for (Index i = 0; i < n1; ++i) {
    Index best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < n0; ++k) {
      if (used[static_cast<std::size_t>(k)]) continue;
      const double d2 = (zt.row(i) - zc.row(k)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = k;
      }
    }
    const double d = std::sqrt(best_d2);
    if (best >= 0 && d <= caliper_sd) {
      used[static_cast<std::size_t>(best)] = true;
      out.pairs.push_back({i, best, treated.unit_ids[i], comparison.unit_ids[best], d});
    } else {
      out.unmatched_treated.push_back(i);
      out.unmatched_treated_ids.push_back(treated.unit_ids[i]);
    }
  }
  return out;
}

UnitWeights match_weights(const MatchSet& matches, const Panel& panel) {
  if (matches.pairs.empty())
    throw EmptyMatchSet("matching produced no pairs within the caliper of " +
                        detail::format_double(matches.caliper_sd) + " SD");
  std::unordered_map<std::string, Index> treated_pos;
  std::unordered_map<std::string, Index> comparison_pos;
  for (std::size_t r = 0; r < panel.treated_rows().size(); ++r)
    treated_pos.emplace(panel.unit_ids()[panel.treated_rows()[r]], static_cast<Index>(r));
  for (std::size_t r = 0; r < panel.comparison_rows().size(); ++r)
    comparison_pos.emplace(panel.unit_ids()[panel.comparison_rows()[r]],
                           static_cast<Index>(r));

  UnitWeights w;
  w.treated = Eigen::VectorXd::Zero(panel.n_treated());
  w.comparison = Eigen::VectorXd::Zero(panel.n_comparison());
  w.label = "match";
  const double share = 1.0 / static_cast<double>(matches.pairs.size());
  for (const auto& p : matches.pairs) {
    auto t = treated_pos.find(p.treated_id);
    auto c = comparison_pos.find(p.comparison_id);
    if (t == treated_pos.end() || c == comparison_pos.end())
      throw InputError("match set refers to units not in the panel's groups");
    w.treated[t->second] = share;
    w.comparison[c->second] = share;
  }
  return w;
}

void write_pairs_csv(const MatchSet& matches, std::ostream& out) {
  out << "treated,comparison,distance\n";
  for (const auto& p : matches.pairs)
    out << detail::quote_if_needed(p.treated_id) << ','
        << detail::quote_if_needed(p.comparison_id) << ','
        << detail::format_double(p.distance) << '\n';
}

}  // namespace ebdid
