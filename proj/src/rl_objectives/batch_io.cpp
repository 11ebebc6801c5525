#include "scalerl/batch_io.hpp"

#include "scalerl/error.hpp"

namespace scalerl::rl {

nlohmann::json to_json(const Batch& batch) {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& g : batch) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : g.completions) {
      nlohmann::json jc{{"reward", c.reward},
                        {"truncated", c.truncated},
                        {"interrupted", c.interrupted},
                        {"logp_train", c.logp_train},
                        {"logp_gen", c.logp_gen}};
      if (!c.loss_mask.empty()) jc["loss_mask"] = c.loss_mask;
      comps.push_back(std::move(jc));
    }
    prompts.push_back({{"id", g.prompt_id}, {"completions", std::move(comps)}});
  }
  return {{"prompts", std::move(prompts)}};
}

Batch batch_from_json(const nlohmann::json& j) {
  try {
    Batch batch;
    for (const auto& jp : j.at("prompts")) {
      RolloutGroup g;
      g.prompt_id = jp.at("id").get<std::string>();
      for (const auto& jc : jp.at("completions")) {
        CompletionRecord c;
        c.reward = jc.at("reward").get<double>();
        c.truncated = jc.value("truncated", false);
        c.interrupted = jc.value("interrupted", false);
        c.logp_train = jc.at("logp_train").get<std::vector<double>>();
        c.logp_gen = jc.at("logp_gen").get<std::vector<double>>();
        if (jc.contains("loss_mask")) c.loss_mask = jc.at("loss_mask").get<std::vector<std::uint8_t>>();
        c.validate();
        g.completions.push_back(std::move(c));
      }
      batch.push_back(std::move(g));
    }
    return batch;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed batch fixture: ") + e.what());
  }
}

}  // namespace scalerl::rl
