#include <algorithm>
#include <cmath>
#include <numeric>

#include "scalerl/error.hpp"
#include "scalerl/rl_objectives.hpp"

namespace scalerl::rl {
namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

bool all_equal(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

std::size_t CompletionRecord::active_tokens() const {
  if (loss_mask.empty()) return token_count();
  return static_cast<std::size_t>(std::count_if(loss_mask.begin(), loss_mask.end(), [](auto m) { return m != 0; }));
}

void CompletionRecord::validate() const {
  if (logp_train.size() != logp_gen.size()) throw InputError("logp_train and logp_gen lengths differ");
  if (logp_train.empty()) throw InputError("completion must have at least one token");
  if (!loss_mask.empty() && loss_mask.size() != logp_train.size()) {
    throw InputError("loss mask length differs from token count");
  }
  for (std::size_t t = 0; t < logp_train.size(); ++t) {
    if (!(logp_train[t] <= 0.0) || !(logp_gen[t] <= 0.0) || !std::isfinite(logp_train[t]) ||
        !std::isfinite(logp_gen[t])) {
      throw InputError("log-probabilities must be finite and <= 0 (token " + std::to_string(t) + ")");
    }
  }
}

Advantages advantages_from_rewards(const std::vector<std::vector<double>>& rewards, const AdvantageSpec& spec) {
  if (!(spec.epsilon >= 0.0)) throw InputError("advantage epsilon must be >= 0");
  Advantages adv(rewards.size());
  for (std::size_t g = 0; g < rewards.size(); ++g) {
    const auto& r = rewards[g];
    if (r.empty()) throw InputError("rollout group without completions");
    if (spec.mode == AdvantageMode::prompt_std && r.size() < 2) {
      throw InputError("prompt_std advantages need G >= 2 (group " + std::to_string(g) + ")");
    }
    const double m = mean_of(r);
    adv[g].resize(r.size());
    // Zero-variance groups are exactly zero whatever the floating-point mean.
    const bool flat = all_equal(r);
    for (std::size_t i = 0; i < r.size(); ++i) adv[g][i] = flat ? 0.0 : r[i] - m;
    if (spec.mode == AdvantageMode::prompt_std && !flat) {
      const double den = population_std(r, m) + spec.epsilon;
      for (auto& a : adv[g]) a = safe_div(a, den);
    }
  }
  if (spec.mode == AdvantageMode::batch_std) {
    std::vector<double> all;
    for (const auto& g : adv) all.insert(all.end(), g.begin(), g.end());
    if (!all.empty()) {
      const double den = population_std(all, mean_of(all)) + spec.epsilon;
      for (auto& g : adv) {
        for (auto& a : g) a = safe_div(a, den);
      }
    }
  }
  return adv;
}

Advantages compute_advantages(const Batch& batch, const AdvantageSpec& spec) {
  std::vector<std::vector<double>> rewards;
  rewards.reserve(batch.size());
  for (const auto& g : batch) {
    std::vector<double> r;
    for (const auto& c : g.completions) r.push_back(c.reward);
    rewards.push_back(std::move(r));
  }
  return advantages_from_rewards(rewards, spec);
}

double is_ratio_token(const CompletionRecord& record, std::size_t t) {
  return std::exp(record.logp_train.at(t) - record.logp_gen.at(t));
}

SequenceRatio is_ratio_sequence(const CompletionRecord& record, GspoRatio mode) {
  if (record.token_count() == 0) throw InputError("sequence ratio of an empty completion");
  double log_ratio = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < record.token_count(); ++t) {
    if (!record.active(t)) continue;
    log_ratio += record.logp_train[t] - record.logp_gen[t];
    ++n;
  }
  if (mode == GspoRatio::geometric_mean && n > 0) log_ratio /= static_cast<double>(n);
  SequenceRatio out;
  out.clamped = std::abs(log_ratio) > kMaxLogSequenceRatio;
  out.log_value = std::clamp(log_ratio, -kMaxLogSequenceRatio, kMaxLogSequenceRatio);
  out.value = std::exp(out.log_value);
  return out;
}

double clip_asym(double rho, double eps_minus, double eps_plus) {
  return std::min(std::max(rho, 1.0 - eps_minus), 1.0 + eps_plus);
}

double length_penalty(double length, double l_max, double l_cache) {
  if (!(length >= 0.0)) throw InputError("length must be >= 0");
  if (!(l_cache > 0.0)) throw InputError("L_cache must be > 0");
  return std::clamp((l_max - length) / l_cache - 1.0, -1.0, 0.0);
}

double shaped_reward(double reward, bool correct, double length, double l_max, double l_cache) {
  return correct ? reward + length_penalty(length, l_max, l_cache) : reward;
}

InterruptionOutcome apply_interruption(std::size_t natural_length, const InterruptionSpec& spec,
                                       std::mt19937_64& rng) {
  if (spec.lo > spec.hi) throw InputError("interruption window requires lo <= hi");
  InterruptionOutcome out;
  out.budget = std::uniform_int_distribution<std::size_t>(spec.lo, spec.hi)(rng);
  if (natural_length > out.budget) {
    out.final_length = out.budget + spec.marker_tokens;
    out.interrupted = true;
  } else {
    out.final_length = natural_length;
  }
  return out;
}

CompletionRecord inject_precision_mismatch(const CompletionRecord& record, double noise_scale,
                                           std::mt19937_64& rng) {
  if (!(noise_scale >= 0.0)) throw InputError("noise scale must be >= 0");
  CompletionRecord out = record;
  if (noise_scale == 0.0) return out;
  std::uniform_real_distribution<double> noise(-noise_scale, noise_scale);
  for (auto& lp : out.logp_gen) lp = std::min(0.0, lp + noise(rng));
  return out;
}

double policy_entropy(std::span<const double> logits) {
  if (logits.empty()) throw InputError("entropy of an empty distribution");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double log_z = std::log(z);
  double h = 0.0;
  for (double x : logits) {
    const double lp = x - mx - log_z;
    const double p = std::exp(lp);
    if (p > 0.0) h -= p * lp;
  }
  return std::max(0.0, h);
}

}  // namespace scalerl::rl
