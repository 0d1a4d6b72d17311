#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "ebdid/panel.hpp"
#include "ebdid/trends.hpp"
#include "ebdid/weights.hpp"

namespace ebdid {

struct MatchPair {
  Index treated = 0;     // row in the treated trend matrix
  Index comparison = 0;  // row in the comparison trend matrix
  std::string treated_id;
  std::string comparison_id;
  double distance = 0.0;  // in pooled-SD units
};

struct MatchSet {
  std::vector<MatchPair> pairs;
  std::vector<Index> unmatched_treated;
  std::vector<std::string> unmatched_treated_ids;
  double caliper_sd = 0.0;
  Eigen::VectorXd feature_sd;  // pooled SD used to standardize each feature
  std::string metric;

  Index n_pairs() const { return static_cast<Index>(pairs.size()); }
};

/// Greedy 1:1 nearest-neighbour matching without replacement.
///
/// Each feature is divided by its SD over the pooled treated and comparison
/// values; the distance is Euclidean on the standardized features (the
/// absolute difference for a single feature). Treated units are processed in
/// row order, which is ascending unit id for trend matrices taken from a
/// Panel. Each takes the nearest unused comparison unit, the lower row
/// winning ties, provided the distance is at most `caliper_sd`.
MatchSet match_nearest(const TrendMatrix& treated, const TrendMatrix& comparison,
                       double caliper_sd = 0.2);

/// Uniform weights 1 / n_pairs on matched units of both groups and 0
/// elsewhere, indexed like panel.treated_rows() and panel.comparison_rows().
/// Throws EmptyMatchSet when there are no pairs.
UnitWeights match_weights(const MatchSet& matches, const Panel& panel);

/// CSV `treated,comparison,distance`.
void write_pairs_csv(const MatchSet& matches, std::ostream& out);

}  // namespace ebdid
