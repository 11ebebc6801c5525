#pragma once

// Discrete-event model of the generator/trainer split: PPO-off-policy-k
// against PipelineRL-k, measuring idle time, throughput and policy lag.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace scalerl::sim {

/// k value meaning "never stall" for PipelineRL.
inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

struct LengthDist {
  std::size_t lo = 200;  // tokens; uniform over [lo, hi], fixed when equal
  std::size_t hi = 200;
};

struct WorkerConfig {
  std::size_t n_generators = 1;
  double tokens_per_second = 100.0;  // per generator
  LengthDist completion_tokens;
  double update_duration = 1.0;  // seconds per optimizer step
  double broadcast_latency = 0.0;
  std::size_t batch_completions = 1;  // B-hat: completions per optimizer step

  void validate() const;
};

enum class SchedulerKind { ppo_offpolicy, pipeline_rl };

enum class PpoOverlap {
  one_batch_ahead,  // generation of batch j+1 overlaps training on batch j
  alternating,      // generation waits for the weights trained on batch j
};

struct SchedulerPolicy {
  SchedulerKind kind = SchedulerKind::pipeline_rl;
  std::size_t k = 1;
  PpoOverlap overlap = PpoOverlap::one_batch_ahead;

  void validate() const;
};

enum class EventKind {
  train_start,
  train_finish,
  weights_push,
  weights_in,
  gen_start,
  gen_finish,
  consume,
  trainer_stall,
};

const char* to_string(EventKind k);
const char* to_string(SchedulerKind k);
SchedulerKind parse_scheduler(const std::string& s);

struct TraceEvent {
  double time = 0.0;
  int worker = 0;  // 0 = trainer, g + 1 = generator g
  EventKind kind = EventKind::gen_start;
  std::size_t version = 0;
  long completion = -1;
};

struct Segment {
  std::size_t version = 0;
  std::size_t tokens = 0;
};

struct CompletionTrace {
  std::size_t id = 0;
  int generator = 0;
  double start = 0.0;
  double finish = -1.0;  // < 0 while in flight at the horizon
  std::size_t tokens = 0;
  std::vector<Segment> segments;
  std::optional<std::size_t> consumed_version;  // trainer version of the consuming update
};

struct SimTrace {
  std::vector<TraceEvent> events;
  std::vector<CompletionTrace> completions;
};

struct LagHistogram {
  std::map<std::size_t, std::size_t> per_token;       // lag -> tokens
  std::map<std::size_t, std::size_t> per_completion;  // lag of oldest segment -> completions
  std::size_t max_lag = 0;

  std::size_t token_mass() const;
};

struct WorkerTime {
  double busy = 0.0;
  double idle = 0.0;
};

struct SimMetrics {
  double generator_idle = 0.0;  // mean over generators, steady window
  double trainer_idle = 0.0;
  double completions_per_time = 0.0;
  double steps_per_time = 0.0;
  LagHistogram lag;  // consumed completions only
  std::size_t steps = 0;
  std::size_t completions_finished = 0;
  std::size_t completions_consumed = 0;
  std::size_t tokens_generated = 0;  // includes partial in-flight work at the horizon
  std::size_t tokens_trained = 0;
  double window_start = 0.0;  // first optimizer step
  double window_end = 0.0;    // horizon
  std::vector<WorkerTime> worker_totals;  // over [0, horizon]; trainer first
  bool steady_state = true;
  bool deadlock = false;
  std::string note;
};

struct SimResult {
  SimTrace trace;
  SimMetrics metrics;
};

/// Deterministic for fixed inputs. Simultaneous events are processed in
/// (time, worker, kind) order.
SimResult simulate(const WorkerConfig& cfg, const SchedulerPolicy& policy, double horizon, std::uint64_t seed);

/// Recomputes the lag histograms from the completion records.
LagHistogram lag_histogram(const SimTrace& trace);

struct PolicyComparison {
  std::size_t k = 1;
  SimMetrics ppo;
  SimMetrics pipeline;
};

/// PPO rows run in alternating mode unless told otherwise.
std::vector<PolicyComparison> compare_policies(const WorkerConfig& cfg, const std::vector<std::size_t>& k_values,
                                               double horizon, std::uint64_t seed,
                                               PpoOverlap overlap = PpoOverlap::alternating);

/// CSV columns: time,worker,event,version,completion
void write_trace_csv(std::ostream& out, const SimTrace& trace);

nlohmann::json to_json(const SimMetrics& m);
nlohmann::json to_json(const WorkerConfig& cfg);
nlohmann::json to_json(const SchedulerPolicy& p);

struct Scenario {
  WorkerConfig workers;
  SchedulerPolicy policy;
  double horizon = 1000.0;
  std::uint64_t seed = 0;
};

/// Keys not present keep their defaults; unknown keys are rejected.
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& s);

}  // namespace scalerl::sim
