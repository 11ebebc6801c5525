#pragma once

// Advantages, importance-sampling ratios, clipping, loss aggregation and the
// GRPO / DAPO / CISPO / GSPO / ScaleRL surrogate objectives with exact
// gradients with respect to the per-token trainer log-probabilities.
//
// Sign convention: every objective is a quantity to maximise.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scalerl/exec.hpp"

namespace scalerl::rl {

struct CompletionRecord {
  std::vector<double> logp_train;  // trainer policy, nats, <= 0
  std::vector<double> logp_gen;    // generator snapshot, nats, <= 0
  // Per-token loss mask; empty means every token is trained on. Forced
  // tokens such as the interruption marker carry 0.
  std::vector<std::uint8_t> loss_mask;
  double reward = 0.0;
  bool truncated = false;
  bool interrupted = false;

  std::size_t token_count() const { return logp_train.size(); }
  bool active(std::size_t t) const { return loss_mask.empty() || loss_mask[t] != 0; }
  std::size_t active_tokens() const;
  void validate() const;
};

struct RolloutGroup {
  std::string prompt_id;
  std::vector<CompletionRecord> completions;
};

using Batch = std::vector<RolloutGroup>;

/// Per group, per completion.
using Advantages = std::vector<std::vector<double>>;

/// Per group, per completion, per token.
using TokenTable = std::vector<std::vector<std::vector<double>>>;

enum class AdvantageMode { prompt_std, batch_std, none };

struct AdvantageSpec {
  AdvantageMode mode = AdvantageMode::prompt_std;
  double epsilon = 1e-4;
};

struct ClipSpec {
  double eps_minus = 0.20;
  double eps_plus = 0.26;
  double eps_max_cispo = 5.0;  // CISPO truncation; lower bound fixed at 0
  double gspo_lower = 3e-3;
  double gspo_upper = 5e-3;

  void validate() const;
};

enum class LossType { grpo, dapo, cispo, gspo, scalerl };
enum class Aggregation { sample_avg, prompt_avg, token_avg };
enum class GspoRatio { product, geometric_mean };

struct LossSpec {
  LossType type = LossType::dapo;
  Aggregation aggregation = Aggregation::prompt_avg;
  AdvantageSpec advantage;
  ClipSpec clip;
  bool exclude_truncated = false;
  bool zero_variance_filter = false;
  GspoRatio gspo_ratio = GspoRatio::product;

  /// CISPO weighting, prompt-level aggregation, batch-level advantage
  /// normalisation, zero-variance filtering and truncation exclusion.
  static LossSpec scalerl();
  void validate() const;
};

struct LossDiagnostics {
  double clipped_fraction = 0.0;  // over active tokens in the effective batch
  double mean_is_ratio = 0.0;     // token-level ratio averaged the same way
  std::size_t effective_groups = 0;
  std::size_t effective_completions = 0;
  std::size_t active_tokens = 0;
  std::size_t dropped_groups = 0;
  std::size_t excluded_truncated = 0;
  std::size_t clamped_sequences = 0;  // GSPO ratios whose exponent was clamped
};

struct LossOutput {
  // Set when filtering left nothing to train on; value and gradient are zero.
  bool no_gradient = false;
  double value = 0.0;
  TokenTable grad;  // same shape as the input batch, zeros where excluded
  LossDiagnostics diag;
};

const char* to_string(LossType t);
const char* to_string(Aggregation a);
const char* to_string(AdvantageMode m);
LossType parse_loss_type(const std::string& s);
Aggregation parse_aggregation(const std::string& s);
AdvantageMode parse_advantage_mode(const std::string& s);

/// Centered group rewards, optionally scaled by the group (prompt_std) or
/// batch-wide (batch_std) population standard deviation plus epsilon.
/// Zero-variance groups always map to zeros. prompt_std rejects G = 1.
Advantages compute_advantages(const Batch& batch, const AdvantageSpec& spec);

double is_ratio_token(const CompletionRecord& record, std::size_t t);

struct SequenceRatio {
  double value = 1.0;
  double log_value = 0.0;  // after clamping
  bool clamped = false;
};

/// Largest |log ratio| a sequence ratio may take before it is clamped.
inline constexpr double kMaxLogSequenceRatio = 50.0;

/// exp(sum_t (logp_train - logp_gen)) over active tokens, computed in log
/// space; geometric_mean divides the exponent by the active token count.
SequenceRatio is_ratio_sequence(const CompletionRecord& record, GspoRatio mode = GspoRatio::product);

double clip_asym(double rho, double eps_minus, double eps_plus);

/// Aggregates per-token terms (active tokens only). Throws on an empty table.
double aggregate(const TokenTable& terms, Aggregation aggregation);

/// Full surrogate with its gradient. When `stop_gradient_anchor` is given,
/// the stop-gradient quantities (CISPO truncated weights) are evaluated on
/// the anchor's trainer log-probabilities instead of `batch`'s; it must
/// have the same shape. Used to finite-difference the frozen-weight
/// surrogate.
LossOutput compute_loss(const Batch& batch, const LossSpec& spec, Exec exec = Exec::serial,
                        const Batch* stop_gradient_anchor = nullptr);

LossOutput loss_grpo(const Batch& batch, LossSpec spec);
LossOutput loss_dapo(const Batch& batch, LossSpec spec);
LossOutput loss_cispo(const Batch& batch, LossSpec spec);
LossOutput loss_gspo(const Batch& batch, LossSpec spec);
LossOutput loss_scalerl(const Batch& batch, LossSpec spec);

/// clip((l_max - length) / l_cache - 1, -1, 0)
double length_penalty(double length, double l_max = 14000.0, double l_cache = 2000.0);

/// Adds the length penalty to correct traces only.
double shaped_reward(double reward, bool correct, double length, double l_max, double l_cache);

struct InterruptionSpec {
  std::size_t lo = 10000;
  std::size_t hi = 12000;
  std::size_t marker_tokens = 1;
};

struct InterruptionOutcome {
  std::size_t final_length = 0;  // includes the marker when interrupted
  std::size_t budget = 0;
  bool interrupted = false;
};

/// Draws a budget uniformly from [lo, hi]; a generation that would run past
/// it stops at the budget and gets the marker appended.
InterruptionOutcome apply_interruption(std::size_t natural_length, const InterruptionSpec& spec,
                                       std::mt19937_64& rng);

/// Perturbs logp_gen with iid U[-s, s] noise (clamped to <= 0); logp_train
/// is untouched. Abstract stand-in for low-precision generator heads.
CompletionRecord inject_precision_mismatch(const CompletionRecord& record, double noise_scale,
                                           std::mt19937_64& rng);

/// Shannon entropy (nats) of softmax(logits).
double policy_entropy(std::span<const double> logits);

}  // namespace scalerl::rl
