#include "scalerl/toy_rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "scalerl/curve_io.hpp"
#include "scalerl/error.hpp"

namespace scalerl::toy {
namespace {

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::size_t sample_index(const std::vector<double>& probs, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// log sigma(z) and log(1 - sigma(z)) without cancellation
double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

// Independent seed for one (purpose, index) pair of a run.
std::uint64_t substream(std::uint64_t seed, std::uint32_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

rl::CompletionRecord record_from(const SyntheticTask& task, const SampledCompletion& s, const ToyPolicy& current,
                                 const std::vector<double>& logp_gen, LengthControl control,
                                 const LengthSpec& length) {
  rl::CompletionRecord r;
  r.logp_gen = logp_gen;
  r.logp_train.reserve(s.tokens.size());
  bool masked = false;
  for (const auto& tok : s.tokens) {
    r.logp_train.push_back(token_logp(current, task, tok));
    masked = masked || tok.kind == TokenSource::marker;
  }
  if (masked) {
    r.loss_mask.resize(s.tokens.size());
    for (std::size_t t = 0; t < s.tokens.size(); ++t) r.loss_mask[t] = s.tokens[t].kind != TokenSource::marker;
  }
  r.truncated = s.truncated;
  r.interrupted = s.interrupted;
  r.reward = s.correct ? 1.0 : -1.0;
  if (control == LengthControl::length_penalty) {
    r.reward = rl::shaped_reward(r.reward, s.correct, static_cast<double>(s.tokens.size()), length.penalty_l_max,
                                 length.penalty_l_cache);
  }
  return r;
}

}  // namespace

void TaskSpace::validate() const {
  if (actions < 2) throw InputError("tasks need at least two actions");
  if (feature_values < 1) throw InputError("feature_values must be >= 1");
}

std::size_t SyntheticTask::answer(std::size_t step, std::size_t actions) const {
  return (tier == Tier::easy ? x0 + step : x0 + x1 + step) % actions;
}

std::vector<SyntheticTask> make_tasks(std::size_t count, const TaskSpace& space, double hard_fraction,
                                      std::uint64_t seed) {
  space.validate();
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) throw InputError("hard_fraction must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> feature(0, space.feature_values - 1);
  const auto n_hard = static_cast<std::size_t>(std::llround(hard_fraction * static_cast<double>(count)));
  std::vector<SyntheticTask> out(count);
  const int width = static_cast<int>(std::to_string(count).size());
  for (std::size_t i = 0; i < count; ++i) {
    auto& t = out[i];
    std::string id = std::to_string(i);
    t.prompt_id = "task-" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    t.x0 = feature(rng);
    t.x1 = feature(rng);
    t.tier = i < n_hard ? Tier::hard : Tier::easy;
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

bool verify(const SyntheticTask& task, const std::vector<std::size_t>& answer, std::size_t actions) {
  if (answer.empty()) return false;
  for (std::size_t s = 0; s < answer.size(); ++s) {
    if (answer[s] != task.answer(s, actions)) return false;
  }
  return true;
}

ToyPolicy::ToyPolicy(const TaskSpace& space, double temperature, double initial_stop_logit)
    : space_(space), temperature_(temperature) {
  space.validate();
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InputError("temperature must be finite and > 0");
  const std::size_t tables = steps() * kTiers * 2 * space.feature_values * space.actions;
  params_.assign(tables + (space.sequence ? kTiers : 0), 0.0);
  if (space.sequence) {
    for (std::size_t t = 0; t < kTiers; ++t) params_[stop_index(static_cast<Tier>(t))] = initial_stop_logit;
  }
}

std::size_t ToyPolicy::table_index(std::size_t step, Tier tier, std::size_t feature, std::size_t value) const {
  return (((step * kTiers + static_cast<std::size_t>(tier)) * 2 + feature) * space_.feature_values + value) *
         space_.actions;
}

std::size_t ToyPolicy::stop_index(Tier tier) const {
  return steps() * kTiers * 2 * space_.feature_values * space_.actions + static_cast<std::size_t>(tier);
}

std::vector<double> ToyPolicy::logits(const SyntheticTask& task, std::size_t step) const {
  const double* w = params_.data() + table_index(step, task.tier, 0, task.x0);
  const double* u = params_.data() + table_index(step, task.tier, 1, task.x1);
  std::vector<double> z(space_.actions);
  for (std::size_t a = 0; a < z.size(); ++a) z[a] = (w[a] + u[a]) / temperature_;
  return z;
}

std::vector<double> ToyPolicy::probabilities(const SyntheticTask& task, std::size_t step) const {
  auto z = logits(task, step);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) sum += (v = std::exp(v - m));
  for (auto& v : z) v /= sum;
  return z;
}

double ToyPolicy::stop_probability(Tier tier) const {
  if (!space_.sequence) return 1.0;
  return sigmoid(params_[stop_index(tier)] / temperature_);
}

void ToyPolicy::accumulate_answer_grad(const SyntheticTask& task, std::size_t step, std::size_t action, double g,
                                       std::vector<double>& grad) const {
  const auto p = probabilities(task, step);
  double* w = grad.data() + table_index(step, task.tier, 0, task.x0);
  double* u = grad.data() + table_index(step, task.tier, 1, task.x1);
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double d = g * ((a == action ? 1.0 : 0.0) - p[a]) / temperature_;
    w[a] += d;
    u[a] += d;
  }
}

void ToyPolicy::accumulate_think_grad(Tier tier, bool stop, double g, std::vector<double>& grad) const {
  const double p = stop_probability(tier);
  grad[stop_index(tier)] += g * (stop ? 1.0 - p : -p) / temperature_;
}

double token_logp(const ToyPolicy& policy, const SyntheticTask& task, const TokenSource& tok) {
  switch (tok.kind) {
    case TokenSource::marker: return 0.0;
    case TokenSource::think_stop: return log_sigmoid(policy.params()[policy.stop_index(task.tier)] / policy.temperature());
    case TokenSource::think_continue:
      return log_sigmoid(-policy.params()[policy.stop_index(task.tier)] / policy.temperature());
    case TokenSource::answer: {
      const auto z = policy.logits(task, tok.step);
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - m);
      return z[tok.action] - m - std::log(sum);
    }
  }
  return 0.0;
}

SampledCompletion sample_completion(const SyntheticTask& task, const BehaviourFn& behaviour,
                                    const LengthSpec& length, LengthControl control, std::mt19937_64& rng) {
  SampledCompletion s;
  const std::size_t steps = behaviour(0).steps();
  if (behaviour(0).space().sequence) {
    std::size_t budget = std::numeric_limits<std::size_t>::max();
    if (control == LengthControl::interruption) {
      budget = std::uniform_int_distribution<std::size_t>(length.interruption.lo, length.interruption.hi)(rng);
    }
    std::size_t thought = 0;
    while (true) {
      if (thought == budget) {
        if (s.tokens.size() + length.interruption.marker_tokens > length.max_tokens) {
          s.truncated = true;
          return s;
        }
        s.interrupted = true;
        for (std::size_t m = 0; m < length.interruption.marker_tokens; ++m) s.tokens.push_back({TokenSource::marker});
        break;
      }
      if (s.tokens.size() >= length.max_tokens) {
        s.truncated = true;
        return s;
      }
      const bool stop = uniform01(rng) < behaviour(s.tokens.size()).stop_probability(task.tier);
      s.tokens.push_back({stop ? TokenSource::think_stop : TokenSource::think_continue});
      ++thought;
      if (stop) break;
    }
  }
  for (std::size_t step = 0; step < steps; ++step) {
    if (s.tokens.size() >= length.max_tokens && behaviour(0).space().sequence) {
      s.truncated = true;
      return s;
    }
    const auto p = behaviour(s.tokens.size()).probabilities(task, step);
    const std::size_t a = sample_index(p, rng);
    s.tokens.push_back({TokenSource::answer, step, a});
    s.answer.push_back(a);
  }
  s.correct = verify(task, s.answer, behaviour(0).space().actions);
  return s;
}

double success_probability(const ToyPolicy& policy, const SyntheticTask& task, const LengthSpec& length,
                           LengthControl control) {
  double answer = 1.0;
  for (std::size_t s = 0; s < policy.steps(); ++s) answer *= policy.probabilities(task, s)[task.answer(s, policy.space().actions)];
  if (!policy.space().sequence) return answer;
  const double p = policy.stop_probability(task.tier);
  const std::size_t steps = policy.steps();
  // P(natural thinking length <= n) for a geometric length on {1, 2, ...}
  auto cdf = [&](std::size_t n) { return 1.0 - std::pow(1.0 - p, static_cast<double>(n)); };
  const std::size_t room = length.max_tokens >= steps ? length.max_tokens - steps : 0;
  double finish = 0.0;
  if (control == LengthControl::interruption) {
    const auto& spec = length.interruption;
    for (std::size_t b = spec.lo; b <= spec.hi; ++b) {
      double f = cdf(std::min(b, room));
      if (b + spec.marker_tokens + steps <= length.max_tokens) f += 1.0 - cdf(b);
      finish += f / static_cast<double>(spec.hi - spec.lo + 1);
    }
  } else {
    finish = cdf(room);
  }
  return answer * finish;
}

double evaluate_mean_at_n(const ToyPolicy& policy, const std::vector<SyntheticTask>& tasks, std::size_t n,
                          const LengthSpec& length, LengthControl control, std::mt19937_64& rng) {
  if (tasks.empty()) throw InputError("evaluation needs at least one task");
  if (n < 1) throw InputError("mean@n needs n >= 1");
  const BehaviourFn same = [&](std::size_t) -> const ToyPolicy& { return policy; };
  double total = 0.0;
  for (const auto& task : tasks) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) ok += sample_completion(task, same, length, control, rng).correct;
    total += static_cast<double>(ok) / static_cast<double>(n);
  }
  return total / static_cast<double>(tasks.size());
}

rl::RolloutGroup rollout_group(const ToyPolicy& snapshot, const ToyPolicy& current, const SyntheticTask& task,
                               std::size_t g, const LengthSpec& length, LengthControl control, std::mt19937_64& rng) {
  if (g < 1) throw InputError("rollout needs G >= 1");
  const BehaviourFn gen = [&](std::size_t) -> const ToyPolicy& { return snapshot; };
  rl::RolloutGroup group;
  group.prompt_id = task.prompt_id;
  for (std::size_t i = 0; i < g; ++i) {
    const auto s = sample_completion(task, gen, length, control, rng);
    std::vector<double> logp_gen;
    for (const auto& tok : s.tokens) logp_gen.push_back(token_logp(snapshot, task, tok));
    group.completions.push_back(record_from(task, s, current, logp_gen, control, length));
  }
  return group;
}

std::vector<rl::RolloutGroup> rollout(const ToyPolicy& snapshot, const ToyPolicy& current,
                                      const std::vector<SyntheticTask>& tasks, std::size_t g,
                                      const LengthSpec& length, LengthControl control, std::mt19937_64& rng) {
  std::vector<rl::RolloutGroup> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(rollout_group(snapshot, current, t, g, length, control, rng));
  return out;
}

double mean_entropy(const ToyPolicy& policy, const std::vector<SyntheticTask>& tasks) {
  if (tasks.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : tasks) {
    for (std::size_t s = 0; s < policy.steps(); ++s) total += rl::policy_entropy(policy.logits(t, s));
  }
  return total / static_cast<double>(tasks.size() * policy.steps());
}

// ---- presets ---------------------------------------------------------------

const char* to_string(Preset p) {
  switch (p) {
    case Preset::scalerl: return "scalerl";
    case Preset::grpo_deepseek: return "grpo_deepseek";
    case Preset::dapo_qwen: return "dapo_qwen";
    case Preset::magistral: return "magistral";
    case Preset::minimax: return "minimax";
  }
  return "?";
}

Preset parse_preset(const std::string& s) {
  for (auto p : {Preset::scalerl, Preset::grpo_deepseek, Preset::dapo_qwen, Preset::magistral, Preset::minimax}) {
    if (s == to_string(p)) return p;
  }
  if (s == "grpo" || s == "deepseek") return Preset::grpo_deepseek;
  if (s == "dapo" || s == "qwen") return Preset::dapo_qwen;
  throw InputError("unknown preset '" + s + "'");
}

RecipePreset RecipePreset::make(Preset p) {
  RecipePreset r;
  r.id = p;
  r.k = 8;
  switch (p) {
    case Preset::scalerl:
      r.loss = rl::LossSpec::scalerl();
      r.off_policy = sim::SchedulerKind::pipeline_rl;
      r.batch = {48, 16};
      r.curriculum = {true, 0.9, pipeline::PassRateMode::latest};
      r.length_control = LengthControl::interruption;
      r.fp32_head = true;
      break;
    case Preset::grpo_deepseek:
      r.loss.type = rl::LossType::grpo;
      r.loss.aggregation = rl::Aggregation::sample_avg;
      r.loss.advantage.mode = rl::AdvantageMode::prompt_std;
      r.loss.clip.eps_minus = 0.2;
      r.loss.clip.eps_plus = 0.2;
      r.off_policy = sim::SchedulerKind::ppo_offpolicy;
      r.batch = {48, 16};
      r.curriculum.enabled = false;
      r.length_control = LengthControl::none;
      r.fp32_head = false;
      break;
    case Preset::dapo_qwen:
    case Preset::magistral:
      r.loss.type = rl::LossType::dapo;
      r.loss.aggregation = rl::Aggregation::prompt_avg;
      r.loss.clip.eps_minus = 0.2;
      r.loss.clip.eps_plus = 0.26;
      r.loss.zero_variance_filter = true;
      r.off_policy = p == Preset::magistral ? sim::SchedulerKind::pipeline_rl : sim::SchedulerKind::ppo_offpolicy;
      r.batch = {80, 16};
      r.curriculum.enabled = false;
      r.length_control = LengthControl::length_penalty;
      r.fp32_head = false;
      break;
    case Preset::minimax:
      r.loss.type = rl::LossType::cispo;
      r.loss.aggregation = rl::Aggregation::prompt_avg;
      r.loss.zero_variance_filter = true;
      r.off_policy = sim::SchedulerKind::ppo_offpolicy;
      r.batch = {80, 16};
      r.curriculum.enabled = false;
      r.length_control = LengthControl::length_penalty;
      r.fp32_head = true;
      break;
  }
  return r;
}

namespace {

const char* to_string(LengthControl c) {
  switch (c) {
    case LengthControl::none: return "none";
    case LengthControl::interruption: return "interruption";
    case LengthControl::length_penalty: return "length_penalty";
  }
  return "?";
}

}  // namespace

nlohmann::json to_json(const RecipePreset& p) {
  const auto& l = p.loss;
  return {{"preset", to_string(p.id)},
          {"loss",
           {{"type", rl::to_string(l.type)},
            {"aggregation", rl::to_string(l.aggregation)},
            {"advantage", rl::to_string(l.advantage.mode)},
            {"advantage_epsilon", l.advantage.epsilon},
            {"eps_minus", l.clip.eps_minus},
            {"eps_plus", l.clip.eps_plus},
            {"eps_max_cispo", l.clip.eps_max_cispo},
            {"exclude_truncated", l.exclude_truncated},
            {"zero_variance_filter", l.zero_variance_filter}}},
          {"off_policy", sim::to_string(p.off_policy)},
          {"k", p.k},
          {"prompts_per_batch", p.batch.prompts_per_batch},
          {"generations_per_prompt", p.batch.generations_per_prompt},
          {"curriculum", p.curriculum.enabled},
          {"curriculum_threshold", p.curriculum.threshold},
          {"length_control", to_string(p.length_control)},
          {"fp32_head", p.fp32_head}};
}

// ---- run configuration -----------------------------------------------------

void RunConfig::validate() const {
  space.validate();
  preset.loss.validate();
  preset.batch.validate();
  preset.curriculum.validate();
  if (preset.k < 1) throw InputError("off-policy k must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InputError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  if (eval_every < 1) throw InputError("eval_every must be >= 1");
  if (eval_generations < 1) throw InputError("eval_generations must be >= 1");
  if (!(token_cost >= 0.0 && step_cost >= 0.0) || !(token_cost + step_cost > 0.0)) {
    throw InputError("compute costs must be >= 0 and not both zero");
  }
  if (holdout < 1 || holdout >= n_tasks) throw InputError("holdout must leave both splits non-empty");
  if (!(mismatch_scale >= 0.0)) throw InputError("mismatch_scale must be >= 0");
  if (divergence_patience < 1) throw InputError("divergence_patience must be >= 1");
  if (length.interruption.lo > length.interruption.hi) throw InputError("interruption window needs lo <= hi");
  if (space.sequence && length.max_tokens < kSequenceSteps + 1) throw InputError("max_tokens too small");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"preset", to_json(c.preset)},
          {"actions", c.space.actions},
          {"feature_values", c.space.feature_values},
          {"sequence", c.space.sequence},
          {"n_tasks", c.n_tasks},
          {"holdout", c.holdout},
          {"hard_fraction", c.hard_fraction},
          {"max_tokens", c.length.max_tokens},
          {"interruption", {c.length.interruption.lo, c.length.interruption.hi}},
          {"penalty_l_max", c.length.penalty_l_max},
          {"penalty_l_cache", c.length.penalty_l_cache},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"temperature", c.temperature},
          {"max_steps", c.max_steps},
          {"eval_every", c.eval_every},
          {"eval_generations", c.eval_generations},
          {"token_cost", c.token_cost},
          {"step_cost", c.step_cost},
          {"mismatch_scale", c.mismatch_scale},
          {"divergence_patience", c.divergence_patience},
          {"divergence_fraction", c.divergence_fraction},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw InputError("run config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "preset") {
        c.preset = RecipePreset::make(parse_preset(v.is_object() ? v.at("preset").get<std::string>() : v.get<std::string>()));
        // a manifest's preset object carries the tunable fields too
        if (v.is_object()) {
          if (v.contains("k")) c.preset.k = v["k"].get<std::size_t>();
          if (v.contains("prompts_per_batch")) c.preset.batch.prompts_per_batch = v["prompts_per_batch"].get<std::size_t>();
          if (v.contains("generations_per_prompt")) {
            c.preset.batch.generations_per_prompt = v["generations_per_prompt"].get<std::size_t>();
          }
        }
      }
    }
    for (const auto& [key, v] : j.items()) {
      if (key == "preset") continue;
      else if (key == "k") c.preset.k = v.get<std::size_t>();
      else if (key == "prompts_per_batch") c.preset.batch.prompts_per_batch = v.get<std::size_t>();
      else if (key == "generations_per_prompt") c.preset.batch.generations_per_prompt = v.get<std::size_t>();
      else if (key == "actions") c.space.actions = v.get<std::size_t>();
      else if (key == "feature_values") c.space.feature_values = v.get<std::size_t>();
      else if (key == "sequence") c.space.sequence = v.get<bool>();
      else if (key == "n_tasks") c.n_tasks = v.get<std::size_t>();
      else if (key == "holdout") c.holdout = v.get<std::size_t>();
      else if (key == "hard_fraction") c.hard_fraction = v.get<double>();
      else if (key == "max_tokens") c.length.max_tokens = v.get<std::size_t>();
      else if (key == "interruption") c.length.interruption = {v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>(), 1};
      else if (key == "penalty_l_max") c.length.penalty_l_max = v.get<double>();
      else if (key == "penalty_l_cache") c.length.penalty_l_cache = v.get<double>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "max_steps") c.max_steps = v.get<std::size_t>();
      else if (key == "eval_every") c.eval_every = v.get<std::size_t>();
      else if (key == "eval_generations") c.eval_generations = v.get<std::size_t>();
      else if (key == "token_cost") c.token_cost = v.get<double>();
      else if (key == "step_cost") c.step_cost = v.get<double>();
      else if (key == "mismatch_scale") c.mismatch_scale = v.get<double>();
      else if (key == "divergence_patience") c.divergence_patience = v.get<std::size_t>();
      else if (key == "divergence_fraction") c.divergence_fraction = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw InputError("unknown run config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed run config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- trainer ---------------------------------------------------------------

namespace {

std::vector<SyntheticTask> subset(const std::vector<SyntheticTask>& all, const std::map<std::string, std::size_t>& index,
                                  const std::vector<std::string>& ids) {
  std::vector<SyntheticTask> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(all[index.at(id)]);
  return out;
}

std::vector<std::string> ids_of(const std::vector<SyntheticTask>& tasks) {
  std::vector<std::string> ids;
  ids.reserve(tasks.size());
  for (const auto& t : tasks) ids.push_back(t.prompt_id);
  return ids;
}

// Streaming lag profiles from a balanced generator/trainer simulation.
std::vector<sim::CompletionTrace> streaming_profiles(std::size_t k, std::uint64_t seed) {
  sim::WorkerConfig w;
  w.n_generators = 32;
  w.tokens_per_second = 100.0;
  w.completion_tokens = {100, 300};
  w.update_duration = 1.0;
  w.batch_completions = 16;
  const auto r = sim::simulate(w, {sim::SchedulerKind::pipeline_rl, k}, 400.0, seed);
  std::vector<sim::CompletionTrace> pool;
  for (const auto& c : r.trace.completions) {
    if (c.consumed_version) pool.push_back(c);
  }
  return pool;
}

}  // namespace

Trainer::Trainer(RunConfig cfg)
    : cfg_(std::move(cfg)),
      sampler_({}, cfg_.preset.batch, 0),
      rng_(substream(cfg_.seed, 1, 0)) {
  cfg_.validate();
  tasks_ = make_tasks(cfg_.n_tasks, cfg_.space, cfg_.hard_fraction, substream(cfg_.seed, 2, 0));
  for (std::size_t i = 0; i < tasks_.size(); ++i) index_[tasks_[i].prompt_id] = i;
  std::mt19937_64 split_rng(substream(cfg_.seed, 3, 0));
  const auto split = pipeline::holdout_split(ids_of(tasks_), cfg_.holdout, split_rng);
  train_ = subset(tasks_, index_, split.train);
  validation_ = subset(tasks_, index_, split.validation);
  policy_ = ToyPolicy(cfg_.space, cfg_.temperature);
  velocity_.assign(policy_.params().size(), 0.0);
  curriculum_ = pipeline::CurriculumState(split.train);
  sampler_ = pipeline::BatchSampler(split.train, cfg_.preset.batch, substream(cfg_.seed, 4, 0));
  if (cfg_.preset.off_policy == sim::SchedulerKind::pipeline_rl) {
    lag_pool_ = streaming_profiles(cfg_.preset.k, substream(cfg_.seed, 5, 0));
  }
}

double Trainer::compute() const {
  return static_cast<double>(tokens_) * cfg_.token_cost + static_cast<double>(steps_) * cfg_.step_cost;
}

const ToyPolicy& Trainer::snapshot(std::size_t lag) const {
  lag = std::min(lag, history_.size());
  return lag == 0 ? policy_ : history_[lag - 1];
}

std::size_t Trainer::sample_lag(std::size_t token, std::size_t n_tokens, std::size_t pick) const {
  // Token positions map onto the profile's segments by fraction of length.
  const auto& c = lag_pool_[pick];
  const double frac = (static_cast<double>(token) + 0.5) / static_cast<double>(std::max<std::size_t>(n_tokens, 1));
  const double target = frac * static_cast<double>(c.tokens);
  double acc = 0.0;
  for (const auto& seg : c.segments) {
    acc += static_cast<double>(seg.tokens);
    if (target < acc) return *c.consumed_version - seg.version;
  }
  return *c.consumed_version - c.segments.back().version;
}

bool Trainer::generate(std::size_t minibatches) {
  const bool streaming = cfg_.preset.off_policy == sim::SchedulerKind::pipeline_rl;
  const std::size_t g = cfg_.preset.batch.generations_per_prompt;
  for (std::size_t j = 0; j < minibatches; ++j) {
    if (curriculum_.excluded_count() >= train_.size()) return j > 0;
    const auto draw = sampler_.next(curriculum_);
    emitted_.push_back(draw.prompt_ids);
    Pending p;
    p.prompt_ids = draw.prompt_ids;
    for (const auto& id : draw.prompt_ids) {
      const auto& task = tasks_[index_.at(id)];
      rl::RolloutGroup group;
      group.prompt_id = id;
      std::vector<SampledCompletion> samples;
      std::vector<std::vector<std::size_t>> lags;
      for (std::size_t i = 0; i < g; ++i) {
        // Streaming: a profile fixes the lag of each token position. The
        // expected length is not known before sampling, so positions are
        // mapped against the cap.
        const std::size_t pick =
            streaming ? std::uniform_int_distribution<std::size_t>(0, lag_pool_.size() - 1)(rng_) : 0;
        const std::size_t span = cfg_.space.sequence ? cfg_.length.max_tokens : 1;
        const BehaviourFn behaviour = [&](std::size_t t) -> const ToyPolicy& {
          return streaming ? snapshot(sample_lag(t, span, pick)) : policy_;
        };
        auto s = sample_completion(task, behaviour, cfg_.length, cfg_.preset.length_control, rng_);
        std::vector<std::size_t> token_lags(s.tokens.size(), 0);
        std::vector<double> logp_gen(s.tokens.size());
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
          token_lags[t] = streaming ? std::min(sample_lag(t, span, pick), history_.size()) : 0;
          logp_gen[t] = token_logp(snapshot(token_lags[t]), task, s.tokens[t]);
        }
        auto rec = record_from(task, s, policy_, logp_gen, cfg_.preset.length_control, cfg_.length);
        if (!cfg_.preset.fp32_head && cfg_.mismatch_scale > 0.0) {
          rec = rl::inject_precision_mismatch(rec, cfg_.mismatch_scale, rng_);
        }
        tokens_ += s.tokens.size();
        generated_since_step_ += s.tokens.size();
        ++completions_since_eval_;
        truncated_since_eval_ += s.truncated;
        interrupted_since_eval_ += s.interrupted;
        group.completions.push_back(std::move(rec));
        samples.push_back(std::move(s));
        lags.push_back(std::move(token_lags));
      }
      pipeline::curriculum_update(curriculum_, pipeline::observe(group, draw.epoch), cfg_.preset.curriculum);
      p.batch.push_back(std::move(group));
      p.samples.push_back(std::move(samples));
      p.token_lags.push_back(std::move(lags));
    }
    queue_.push_back(std::move(p));
  }
  return true;
}

std::optional<StepResult> Trainer::step() {
  if (queue_.empty()) {
    const std::size_t m = cfg_.preset.off_policy == sim::SchedulerKind::ppo_offpolicy ? cfg_.preset.k : 1;
    if (!generate(m)) return std::nullopt;
  }
  Pending p = std::move(queue_.front());
  queue_.pop_front();

  // Trainer log-probs are taken under the weights as they are now.
  for (std::size_t gi = 0; gi < p.batch.size(); ++gi) {
    const auto& task = tasks_[index_.at(p.prompt_ids[gi])];
    for (std::size_t i = 0; i < p.batch[gi].completions.size(); ++i) {
      auto& rec = p.batch[gi].completions[i];
      const auto& toks = p.samples[gi][i].tokens;
      for (std::size_t t = 0; t < toks.size(); ++t) rec.logp_train[t] = token_logp(policy_, task, toks[t]);
    }
  }

  StepResult r;
  r.loss = rl::compute_loss(p.batch, cfg_.preset.loss);
  std::vector<double> grad(policy_.params().size(), 0.0);
  if (!r.loss.no_gradient) {
    for (std::size_t gi = 0; gi < p.batch.size(); ++gi) {
      const auto& task = tasks_[index_.at(p.prompt_ids[gi])];
      for (std::size_t i = 0; i < p.batch[gi].completions.size(); ++i) {
        const auto& toks = p.samples[gi][i].tokens;
        for (std::size_t t = 0; t < toks.size(); ++t) {
          const double gt = r.loss.grad[gi][i][t];
          if (gt == 0.0) continue;
          switch (toks[t].kind) {
            case TokenSource::answer: policy_.accumulate_answer_grad(task, toks[t].step, toks[t].action, gt, grad); break;
            case TokenSource::think_stop: policy_.accumulate_think_grad(task.tier, true, gt, grad); break;
            case TokenSource::think_continue: policy_.accumulate_think_grad(task.tier, false, gt, grad); break;
            case TokenSource::marker: break;
          }
        }
      }
    }
  }
  history_.push_front(policy_);
  while (history_.size() > cfg_.preset.k) history_.pop_back();
  auto& w = policy_.params();
  for (std::size_t i = 0; i < w.size(); ++i) {
    velocity_[i] = cfg_.momentum * velocity_[i] + grad[i];
    w[i] += cfg_.learning_rate * velocity_[i];
  }
  ++steps_;
  ++steps_since_eval_;
  eff_since_eval_ += static_cast<double>(r.loss.diag.effective_completions);
  clip_since_eval_ += r.loss.diag.clipped_fraction;

  r.step = steps_;
  r.batch = std::move(p.batch);
  r.prompt_ids = std::move(p.prompt_ids);
  r.tokens_generated = generated_since_step_;
  generated_since_step_ = 0;
  return r;
}

double Trainer::evaluate(std::size_t eval_index) {
  std::mt19937_64 rng(substream(cfg_.seed, 6, eval_index));
  return evaluate_mean_at_n(policy_, validation_, cfg_.eval_generations, cfg_.length, cfg_.preset.length_control, rng);
}

RunArtifacts Trainer::run() {
  RunArtifacts a;
  a.curve.label = to_string(cfg_.preset.id);
  double running_max = 0.0;
  std::size_t strikes = 0;
  std::size_t evals = 0;
  while (steps_ < cfg_.max_steps) {
    if (!step()) {
      a.halt_reason = "curriculum excluded every training prompt";
      break;
    }
    if (steps_ % cfg_.eval_every != 0) continue;
    const double reward = evaluate(evals++);
    a.curve.points.push_back({compute(), reward, static_cast<long>(steps_)});
    MetricRow m;
    m.step = steps_;
    m.compute = compute();
    m.entropy = mean_entropy(policy_, validation_);
    const double n = static_cast<double>(std::max<std::size_t>(completions_since_eval_, 1));
    m.trunc_rate = static_cast<double>(truncated_since_eval_) / n;
    m.interrupt_rate = static_cast<double>(interrupted_since_eval_) / n;
    m.eff_batch = eff_since_eval_ / static_cast<double>(steps_since_eval_);
    m.clip_frac = clip_since_eval_ / static_cast<double>(steps_since_eval_);
    a.metrics.push_back(m);
    completions_since_eval_ = truncated_since_eval_ = interrupted_since_eval_ = steps_since_eval_ = 0;
    eff_since_eval_ = clip_since_eval_ = 0.0;

    running_max = std::max(running_max, reward);
    strikes = reward < cfg_.divergence_fraction * running_max ? strikes + 1 : 0;
    if (strikes >= cfg_.divergence_patience) {
      a.unstable = true;
      a.halt_reason = "validation reward below " + format_double(cfg_.divergence_fraction) + " of its running max for " +
                      std::to_string(strikes) + " consecutive evaluations";
      break;
    }
  }
  a.steps = steps_;
  a.tokens = tokens_;
  a.compute = compute();
  a.excluded_prompts = curriculum_.excluded_count();
  return a;
}

void write_metrics_csv(std::ostream& out, const RunArtifacts& a) {
  out << "step,compute,entropy,trunc_rate,eff_batch,clip_frac\n";
  for (const auto& m : a.metrics) {
    out << m.step << ',' << format_double(m.compute) << ',' << format_double(m.entropy) << ','
        << format_double(m.trunc_rate) << ',' << format_double(m.eff_batch) << ',' << format_double(m.clip_frac)
        << '\n';
  }
}

nlohmann::json run_manifest(const RunConfig& cfg, const RunArtifacts& a) {
  nlohmann::json interrupts = nlohmann::json::array();
  for (const auto& m : a.metrics) interrupts.push_back(m.interrupt_rate);
  return {{"config", to_json(cfg)},
          {"steps", a.steps},
          {"tokens", a.tokens},
          {"compute", a.compute},
          {"evaluations", a.curve.points.size()},
          {"final_reward", a.curve.points.empty() ? 0.0 : a.curve.points.back().reward},
          {"excluded_prompts", a.excluded_prompts},
          {"interrupt_rate", std::move(interrupts)},
          {"unstable", a.unstable},
          {"halt_reason", a.halt_reason}};
}

}  // namespace scalerl::toy
