#include "scalerl/data_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "scalerl/error.hpp"

namespace scalerl::pipeline {

void BatchSpec::validate() const {
  if (prompts_per_batch < 1 || generations_per_prompt < 1) {
    throw InputError("batch spec needs at least one prompt and one generation");
  }
}

void CurriculumConfig::validate() const {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InputError("curriculum threshold must lie in (0, 1]");
}

GroupObservation observe(const rl::RolloutGroup& group, std::size_t epoch) {
  GroupObservation obs;
  obs.prompt_id = group.prompt_id;
  obs.epoch = epoch;
  obs.attempts = group.completions.size();
  obs.successes = static_cast<std::size_t>(std::count_if(group.completions.begin(), group.completions.end(),
                                                         [](const auto& c) { return c.reward > 0.0; }));
  return obs;
}

CurriculumState::CurriculumState(const std::vector<std::string>& prompt_ids) {
  for (const auto& id : prompt_ids) add_prompt(id);
}

void CurriculumState::add_prompt(const std::string& id) {
  auto& s = stats_[id];
  s.prompt_id = id;
}

const PromptStats& CurriculumState::at(const std::string& id) const {
  const auto it = stats_.find(id);
  if (it == stats_.end()) throw InputError("unknown prompt id '" + id + "'");
  return it->second;
}

bool CurriculumState::is_excluded(const std::string& id) const {
  const auto it = stats_.find(id);
  return it != stats_.end() && it->second.excluded;
}

std::size_t CurriculumState::excluded_count() const {
  return excluded_;
}

std::vector<std::string> CurriculumState::excluded_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, s] : stats_) {
    if (s.excluded) out.push_back(id);
  }
  return out;
}

nlohmann::json CurriculumState::to_json() const {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& [id, s] : stats_) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : s.history) hist.push_back({e.epoch, e.attempts, e.successes});
    prompts.push_back({{"id", id},
                       {"history", std::move(hist)},
                       {"latest_pass_rate", s.latest_pass_rate},
                       {"cumulative_pass_rate", s.cumulative_pass_rate},
                       {"excluded", s.excluded}});
  }
  return {{"prompts", std::move(prompts)}};
}

CurriculumState CurriculumState::from_json(const nlohmann::json& j) {
  try {
    CurriculumState state;
    for (const auto& jp : j.at("prompts")) {
      PromptStats s;
      s.prompt_id = jp.at("id").get<std::string>();
      for (const auto& e : jp.at("history")) {
        s.history.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<std::size_t>()});
      }
      s.latest_pass_rate = jp.at("latest_pass_rate").get<double>();
      s.cumulative_pass_rate = jp.at("cumulative_pass_rate").get<double>();
      s.excluded = jp.at("excluded").get<bool>();
      state.excluded_ += s.excluded;
      state.stats_[s.prompt_id] = std::move(s);
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed curriculum checkpoint: ") + e.what());
  }
}

void curriculum_update(CurriculumState& state, const GroupObservation& obs, const CurriculumConfig& cfg) {
  cfg.validate();
  const auto it = state.stats_.find(obs.prompt_id);
  if (it == state.stats_.end()) throw InputError("unknown prompt id '" + obs.prompt_id + "'");
  if (obs.attempts == 0 || obs.successes > obs.attempts) {
    throw InputError("observation needs 0 <= successes <= attempts and attempts >= 1");
  }
  auto& s = it->second;
  s.history.push_back({obs.epoch, obs.attempts, obs.successes});
  s.latest_pass_rate = static_cast<double>(obs.successes) / static_cast<double>(obs.attempts);
  std::size_t att = 0, succ = 0;
  for (const auto& e : s.history) {
    att += e.attempts;
    succ += e.successes;
  }
  s.cumulative_pass_rate = static_cast<double>(succ) / static_cast<double>(att);
  const double rate = cfg.mode == PassRateMode::latest ? s.latest_pass_rate : s.cumulative_pass_rate;
  if (cfg.enabled && rate >= cfg.threshold && !s.excluded) {
    s.excluded = true;
    ++state.excluded_;
  }
}

FilterResult zero_variance_filter(const rl::Batch& batch) {
  FilterResult out;
  for (const auto& g : batch) {
    const auto& c = g.completions;
    const bool flat = c.empty() || std::all_of(c.begin(), c.end(), [&](const auto& x) {
                        return x.reward == c.front().reward;
                      });
    if (flat) {
      ++out.dropped;
    } else {
      out.effective.push_back(g);
    }
  }
  return out;
}

BatchSampler::BatchSampler(std::vector<std::string> train_ids, BatchSpec spec, std::uint64_t seed)
    : ids_(std::move(train_ids)), spec_(spec), rng_(seed) {
  spec_.validate();
}

BatchDraw BatchSampler::next(const CurriculumState& state) {
  BatchDraw draw;
  while (draw.prompt_ids.size() < spec_.prompts_per_batch) {
    if (pos_ == order_.size()) {
      if (!draw.prompt_ids.empty()) break;
      order_.clear();
      for (const auto& id : ids_) {
        if (!state.is_excluded(id)) order_.push_back(id);
      }
      if (order_.empty()) throw InputError("every training prompt has been excluded");
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
      ++epoch_;
    }
    const auto& id = order_[pos_++];
    if (state.is_excluded(id)) continue;
    draw.prompt_ids.push_back(id);
  }
  draw.epoch = epoch_;
  draw.partial = draw.prompt_ids.size() < spec_.prompts_per_batch;
  return draw;
}

nlohmann::json BatchSampler::checkpoint() const {
  std::ostringstream rng_state;
  rng_state << rng_;
  return {{"epoch", epoch_}, {"position", pos_}, {"order", order_}, {"rng", rng_state.str()}};
}

void BatchSampler::restore(const nlohmann::json& j) {
  try {
    epoch_ = j.at("epoch").get<std::size_t>();
    pos_ = j.at("position").get<std::size_t>();
    order_ = j.at("order").get<std::vector<std::string>>();
    std::istringstream is(j.at("rng").get<std::string>());
    is >> rng_;
    if (pos_ > order_.size()) throw InputError("sampler checkpoint position past its epoch order");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed sampler checkpoint: ") + e.what());
  }
}

Split holdout_split(const std::vector<std::string>& ids, std::size_t holdout_count, std::mt19937_64& rng) {
  if (!(holdout_count < ids.size())) {
    throw InputError("holdout of " + std::to_string(holdout_count) + " leaves no training prompts out of " +
                     std::to_string(ids.size()));
  }
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> held(ids.size(), false);
  for (std::size_t k = 0; k < holdout_count; ++k) held[idx[k]] = true;
  Split split;
  for (std::size_t i = 0; i < ids.size(); ++i) (held[i] ? split.validation : split.train).push_back(ids[i]);
  return split;
}

std::vector<nlohmann::json> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": record needs a string \"id\"");
    }
    if (!seen.insert(j["id"].get<std::string>()).second) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": duplicate id");
    }
    out.push_back(std::move(j));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace scalerl::pipeline
