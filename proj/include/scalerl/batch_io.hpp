#pragma once

// Batch fixture JSON:
// {"prompts": [{"id": "...", "completions": [{"reward": 1, "truncated": false,
//   "interrupted": false, "logp_train": [...], "logp_gen": [...],
//   "loss_mask": [...]}]}]}   (loss_mask optional)

#include <json.hpp>

#include "scalerl/rl_objectives.hpp"

namespace scalerl::rl {

nlohmann::json to_json(const Batch& batch);
Batch batch_from_json(const nlohmann::json& j);

}  // namespace scalerl::rl
