#pragma once

#include <json.hpp>
#include <string>

namespace sgfa::cli {

/// Grouped bar chart of per-subgroup contributions, one group per robust
/// factor. Input is the analysis JSON written by `analyze`.
std::string contributions_svg(const nlohmann::json& analysis);

/// Box plots of absolute latent scores per subgroup, one panel per factor.
std::string abs_scores_svg(const nlohmann::json& analysis);

}  // namespace sgfa::cli
