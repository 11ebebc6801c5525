#pragma once

// Batch assembly: zero-variance filtering, the no-positive-resampling
// curriculum, epoch-based prompt sampling and the held-out split.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalerl/rl_objectives.hpp"

namespace scalerl::pipeline {

struct EncounterRecord {
  std::size_t epoch = 0;
  std::size_t attempts = 0;
  std::size_t successes = 0;
};

struct PromptStats {
  std::string prompt_id;
  std::vector<EncounterRecord> history;
  double latest_pass_rate = 0.0;
  double cumulative_pass_rate = 0.0;
  bool excluded = false;  // monotone: never cleared once set
};

struct BatchSpec {
  std::size_t prompts_per_batch = 48;
  std::size_t generations_per_prompt = 16;

  void validate() const;
  std::size_t completions() const { return prompts_per_batch * generations_per_prompt; }
};

enum class PassRateMode {
  latest,      // successes / G of the most recent encounter
  cumulative,  // all successes / all attempts so far
};

struct CurriculumConfig {
  bool enabled = true;
  double threshold = 0.9;
  PassRateMode mode = PassRateMode::latest;

  void validate() const;
};

struct GroupObservation {
  std::string prompt_id;
  std::size_t attempts = 0;
  std::size_t successes = 0;
  std::size_t epoch = 0;
};

/// Successes are completions with positive reward.
GroupObservation observe(const rl::RolloutGroup& group, std::size_t epoch);

class CurriculumState {
 public:
  CurriculumState() = default;
  explicit CurriculumState(const std::vector<std::string>& prompt_ids);

  void add_prompt(const std::string& id);
  bool contains(const std::string& id) const { return stats_.count(id) != 0; }
  const PromptStats& at(const std::string& id) const;
  bool is_excluded(const std::string& id) const;
  std::size_t excluded_count() const;
  std::vector<std::string> excluded_ids() const;
  const std::map<std::string, PromptStats>& stats() const { return stats_; }

  nlohmann::json to_json() const;
  static CurriculumState from_json(const nlohmann::json& j);

 private:
  friend void curriculum_update(CurriculumState&, const GroupObservation&, const CurriculumConfig&);
  std::map<std::string, PromptStats> stats_;
  std::size_t excluded_ = 0;
};

/// Records the encounter and, when enabled, permanently excludes the prompt
/// once its pass rate reaches the threshold. Unknown ids raise InputError.
void curriculum_update(CurriculumState& state, const GroupObservation& obs, const CurriculumConfig& cfg);

struct FilterResult {
  rl::Batch effective;
  std::size_t dropped = 0;
  bool empty() const { return effective.empty(); }
};

/// Drops groups whose rewards are all equal. Nothing is resampled.
FilterResult zero_variance_filter(const rl::Batch& batch);

struct BatchDraw {
  std::vector<std::string> prompt_ids;
  std::size_t epoch = 0;
  bool partial = false;  // fewer than prompts_per_batch ids
};

/// Epoch-based sampling without replacement over non-excluded prompts.
/// Each epoch reshuffles; the last batch of an epoch may be partial and is
/// flagged rather than padded.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::string> train_ids, BatchSpec spec, std::uint64_t seed);

  BatchDraw next(const CurriculumState& state);
  std::size_t epoch() const { return epoch_; }

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& j);

 private:
  std::vector<std::string> ids_;
  BatchSpec spec_;
  std::mt19937_64 rng_;
  std::vector<std::string> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

/// Seeded disjoint split; both parts keep the dataset's original order.
Split holdout_split(const std::vector<std::string>& ids, std::size_t holdout_count, std::mt19937_64& rng);

/// One JSON object per line; each record must carry a string "id".
std::vector<nlohmann::json> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace scalerl::pipeline
