#pragma once

#include <json.hpp>

#include "nvfg/data_io.hpp"
#include "nvfg/dual_trainer.hpp"
#include "nvfg/filter_analysis.hpp"
#include "nvfg/nn.hpp"
#include "nvfg/novelty_eval.hpp"

namespace nvfg {

using Json = nlohmann::json;

Json to_json(const NetworkSpec& spec);
/// Missing "in" sizes are inferred from the preceding layer's output.
NetworkSpec network_spec_from_json(const Json& j);

Json to_json(const TrainingConfig& cfg);
TrainingConfig training_config_from_json(const Json& j);

Json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const Json& j);

Json to_json(const SplitSpec& spec);
SplitSpec split_spec_from_json(const Json& j);

Json to_json(const NoveltyThreshold& t);
Json to_json(const FilterReport& report);

}  // namespace nvfg
