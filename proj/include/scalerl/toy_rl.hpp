#pragma once

// Desk-scale RL: verifiable bandit / short-sequence tasks, an additive
// logit-table policy, recipe presets and a training loop that emits
// training curves for the scaling-law fitter.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalerl/async_sim.hpp"
#include "scalerl/data_pipeline.hpp"
#include "scalerl/rl_objectives.hpp"
#include "scalerl/scaling_law.hpp"

namespace scalerl::toy {

enum class Tier { easy = 0, hard = 1 };
inline constexpr std::size_t kTiers = 2;
inline constexpr std::size_t kSequenceSteps = 4;

struct TaskSpace {
  std::size_t actions = 4;         // K
  std::size_t feature_values = 16;  // x0, x1 in [0, feature_values)
  bool sequence = false;           // 4 answer tokens after a thinking phase

  void validate() const;
};

/// easy: answer_s = (x0 + s) mod K; hard: answer_s = (x0 + x1 + s) mod K.
/// Bandit tasks use s = 0 only.
struct SyntheticTask {
  std::string prompt_id;
  std::size_t x0 = 0;
  std::size_t x1 = 0;
  Tier tier = Tier::easy;

  std::size_t answer(std::size_t step, std::size_t actions) const;
};

std::vector<SyntheticTask> make_tasks(std::size_t count, const TaskSpace& space, double hard_fraction,
                                      std::uint64_t seed);

/// Pure verifier: every answer token must match and the answer must be complete.
bool verify(const SyntheticTask& task, const std::vector<std::size_t>& answer, std::size_t actions);

/// Additive logit tables: logit_s(a) = W[s][tier][x0][a] + U[s][tier][x1][a],
/// divided by the temperature. Sequence mode adds one stop logit per tier
/// for the thinking phase.
class ToyPolicy {
 public:
  ToyPolicy() = default;
  ToyPolicy(const TaskSpace& space, double temperature = 1.0, double initial_stop_logit = -1.9459101490553132);

  const TaskSpace& space() const { return space_; }
  double temperature() const { return temperature_; }
  std::size_t steps() const { return space_.sequence ? kSequenceSteps : 1; }

  std::vector<double> probabilities(const SyntheticTask& task, std::size_t step) const;
  std::vector<double> logits(const SyntheticTask& task, std::size_t step) const;
  double stop_probability(Tier tier) const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Adds g * d(log pi(action))/d(params) for one answer token.
  void accumulate_answer_grad(const SyntheticTask& task, std::size_t step, std::size_t action, double g,
                              std::vector<double>& grad) const;
  /// Same for one thinking token: stop = true for the token that ends thinking.
  void accumulate_think_grad(Tier tier, bool stop, double g, std::vector<double>& grad) const;

  std::size_t table_index(std::size_t step, Tier tier, std::size_t feature, std::size_t value) const;
  std::size_t stop_index(Tier tier) const;

 private:
  TaskSpace space_;
  double temperature_ = 1.0;
  std::vector<double> params_;
};

enum class Preset { scalerl, grpo_deepseek, dapo_qwen, magistral, minimax };

const char* to_string(Preset p);
Preset parse_preset(const std::string& s);

enum class LengthControl { none, interruption, length_penalty };

struct RecipePreset {
  Preset id = Preset::scalerl;
  rl::LossSpec loss;
  sim::SchedulerKind off_policy = sim::SchedulerKind::pipeline_rl;
  std::size_t k = 8;
  pipeline::BatchSpec batch;
  pipeline::CurriculumConfig curriculum;
  LengthControl length_control = LengthControl::interruption;
  bool fp32_head = true;  // false injects generator/trainer log-prob mismatch

  static RecipePreset make(Preset p);
};

nlohmann::json to_json(const RecipePreset& p);

struct LengthSpec {
  std::size_t max_tokens = 20;  // truncation cap in sequence mode
  rl::InterruptionSpec interruption{10, 12, 1};
  double penalty_l_max = 20.0;
  double penalty_l_cache = 4.0;
};

struct RunConfig {
  RecipePreset preset = RecipePreset::make(Preset::scalerl);
  TaskSpace space;
  std::size_t n_tasks = 40000;
  std::size_t holdout = 1000;
  double hard_fraction = 0.5;
  LengthSpec length;
  double learning_rate = 1e-2;
  double momentum = 0.0;
  double temperature = 1.0;
  std::size_t max_steps = 60000;  // ~1e5 compute units
  std::size_t eval_every = 100;
  std::size_t eval_generations = 16;  // mean@n
  double token_cost = 1e-3;
  double step_cost = 1.0;
  double mismatch_scale = 0.05;  // used when the preset has no FP32 head
  std::size_t divergence_patience = 5;
  double divergence_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Closed-form probability that one sampled completion is verified correct.
double success_probability(const ToyPolicy& policy, const SyntheticTask& task, const LengthSpec& length,
                           LengthControl control);

/// Mean over tasks of successes / n.
double evaluate_mean_at_n(const ToyPolicy& policy, const std::vector<SyntheticTask>& tasks, std::size_t n,
                          const LengthSpec& length, LengthControl control, std::mt19937_64& rng);

/// Where each sampled token came from, for the gradient pass.
struct TokenSource {
  enum Kind : std::uint8_t { think_continue, think_stop, marker, answer } kind = answer;
  std::size_t step = 0;
  std::size_t action = 0;
};

struct SampledCompletion {
  std::vector<TokenSource> tokens;
  std::vector<std::size_t> answer;
  bool truncated = false;
  bool interrupted = false;
  bool correct = false;
};

using BehaviourFn = std::function<const ToyPolicy&(std::size_t token_index)>;

/// Samples one completion; `behaviour` picks the weights that generate
/// each token position.
SampledCompletion sample_completion(const SyntheticTask& task, const BehaviourFn& behaviour,
                                    const LengthSpec& length, LengthControl control, std::mt19937_64& rng);

/// Log-probability of one recorded token under `policy` (0 for the marker).
double token_logp(const ToyPolicy& policy, const SyntheticTask& task, const TokenSource& tok);

/// Per-group rollouts under a single snapshot; logp_gen and logp_train both
/// come from `snapshot` and `current` respectively.
rl::RolloutGroup rollout_group(const ToyPolicy& snapshot, const ToyPolicy& current, const SyntheticTask& task,
                               std::size_t g, const LengthSpec& length, LengthControl control, std::mt19937_64& rng);

std::vector<rl::RolloutGroup> rollout(const ToyPolicy& snapshot, const ToyPolicy& current,
                                      const std::vector<SyntheticTask>& tasks, std::size_t g,
                                      const LengthSpec& length, LengthControl control, std::mt19937_64& rng);

/// Mean answer-token entropy (nats) over tasks.
double mean_entropy(const ToyPolicy& policy, const std::vector<SyntheticTask>& tasks);

struct MetricRow {
  std::size_t step = 0;
  double compute = 0.0;
  double entropy = 0.0;
  double trunc_rate = 0.0;
  double interrupt_rate = 0.0;
  double eff_batch = 0.0;  // mean completions surviving the filters per step
  double clip_frac = 0.0;
};

struct RunArtifacts {
  TrainingCurve curve;  // validation mean@n against compute
  std::vector<MetricRow> metrics;
  std::size_t steps = 0;
  std::size_t tokens = 0;
  double compute = 0.0;
  bool unstable = false;
  std::string halt_reason;
  std::size_t excluded_prompts = 0;
};

struct StepResult {
  std::size_t step = 0;  // 1-based count after this update
  rl::Batch batch;       // the mini-batch the update was computed on
  rl::LossOutput loss;
  std::vector<std::string> prompt_ids;
  std::size_t tokens_generated = 0;  // during this step's generation phase
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  /// One optimizer update. Returns nullopt once the curriculum has excluded
  /// every training prompt.
  std::optional<StepResult> step();
  double evaluate(std::size_t eval_index);
  RunArtifacts run();

  const ToyPolicy& policy() const { return policy_; }
  ToyPolicy& policy() { return policy_; }
  const RunConfig& config() const { return cfg_; }
  const pipeline::CurriculumState& curriculum() const { return curriculum_; }
  const std::vector<SyntheticTask>& train_tasks() const { return train_; }
  const std::vector<SyntheticTask>& validation_tasks() const { return validation_; }
  std::size_t steps_done() const { return steps_; }
  std::size_t tokens_generated() const { return tokens_; }
  double compute() const;
  /// Every prompt-id list the sampler has emitted, in order.
  const std::vector<std::vector<std::string>>& emitted_batches() const { return emitted_; }

 private:
  struct Pending {
    std::vector<std::string> prompt_ids;
    rl::Batch batch;
    std::vector<std::vector<SampledCompletion>> samples;
    std::vector<std::vector<std::vector<std::size_t>>> token_lags;  // group, completion, token
  };

  bool generate(std::size_t minibatches);
  const ToyPolicy& snapshot(std::size_t lag) const;
  std::size_t sample_lag(std::size_t token, std::size_t n_tokens, std::size_t completion_pick) const;

  RunConfig cfg_;
  std::vector<SyntheticTask> tasks_;
  std::vector<SyntheticTask> train_;
  std::vector<SyntheticTask> validation_;
  std::map<std::string, std::size_t> index_;
  ToyPolicy policy_;
  std::deque<ToyPolicy> history_;  // history_[l] = weights l updates ago
  std::vector<double> velocity_;
  pipeline::CurriculumState curriculum_;
  pipeline::BatchSampler sampler_;
  std::mt19937_64 rng_;
  std::deque<Pending> queue_;
  std::vector<sim::CompletionTrace> lag_pool_;  // streaming lag profiles
  std::size_t steps_ = 0;
  std::size_t tokens_ = 0;
  std::size_t generated_since_step_ = 0;
  std::vector<std::vector<std::string>> emitted_;
  // running counters between evaluations
  std::size_t completions_since_eval_ = 0, truncated_since_eval_ = 0, interrupted_since_eval_ = 0;
  double eff_since_eval_ = 0.0, clip_since_eval_ = 0.0;
  std::size_t steps_since_eval_ = 0;
};

void write_metrics_csv(std::ostream& out, const RunArtifacts& a);
nlohmann::json run_manifest(const RunConfig& cfg, const RunArtifacts& a);

}  // namespace scalerl::toy
