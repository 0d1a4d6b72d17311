#pragma once

#include "json.hpp"

#include "ebdid/balance.hpp"
#include "ebdid/did.hpp"
#include "ebdid/matching.hpp"
#include "ebdid/panel.hpp"
#include "ebdid/simulate.hpp"

namespace ebdid {

using Json = nlohmann::ordered_json;

/// Non-finite values become null.
Json number_or_null(double v);

Json to_json(const DgpSpec& spec);
/// Every field is optional and overrides the defaults of `base`. Unknown
/// keys and malformed values throw InputError.
DgpSpec dgp_spec_from_json(const Json& j, DgpSpec base = {});
DgpOverrides dgp_overrides_from_json(const Json& j);

Json to_json(const DidFit& fit);
Json to_json(const PretrendTest& test);
Json to_json(const BalanceTable& table);
Json to_json(const ValidationReport& report);

/// Solver diagnostics: iterations, residuals per constraint, dual vector.
Json diagnostics_json(const BalanceWeights& weights, const BalanceProblem& problem);

/// Pair count, unmatched treated ids and caliper.
Json to_json(const MatchSet& matches);

}  // namespace ebdid
