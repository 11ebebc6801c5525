#include "scalerl/async_sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <queue>
#include <random>
#include <deque>
#include <tuple>

#include "scalerl/error.hpp"

namespace scalerl::sim {
namespace {

// Queue kinds; the numeric order breaks ties at equal (time, worker).
enum class QKind { train_finish = 0, weights_arrive = 1, gen_finish = 2 };

struct QEvent {
  double time;
  int worker;
  QKind kind;
  std::uint64_t seq;
  std::size_t payload;
};

struct Later {
  bool operator()(const QEvent& a, const QEvent& b) const {
    return std::tie(a.time, a.worker, a.kind, a.seq) > std::tie(b.time, b.worker, b.kind, b.seq);
  }
};

struct Interval {
  double start;
  double end;
};

double busy_between(const std::vector<Interval>& iv, double a, double b) {
  double s = 0.0;
  for (const auto& x : iv) s += std::max(0.0, std::min(x.end, b) - std::max(x.start, a));
  return s;
}

class Simulator {
 public:
  Simulator(const WorkerConfig& cfg, const SchedulerPolicy& policy, double horizon, std::uint64_t seed)
      : cfg_(cfg), pol_(policy), horizon_(horizon), rng_(seed), gens_(cfg.n_generators),
        busy_(cfg.n_generators + 1) {}

  SimResult run();

 private:
  struct Gen {
    bool busy = false;
    std::size_t current = 0;
    double since = 0.0;
  };

  struct PpoBatch {
    std::size_t snapshot = 0;
    std::size_t assigned = 0;
    std::size_t finished = 0;
    std::vector<std::size_t> ids;
  };

  bool pipeline() const { return pol_.kind == SchedulerKind::pipeline_rl; }
  std::size_t ppo_batch_size() const { return pol_.k * cfg_.batch_completions; }

  void push(double t, int worker, QKind kind, std::size_t payload) {
    q_.push({t, worker, kind, seq_++, payload});
  }
  void log(int worker, EventKind kind, std::size_t version, long completion = -1) {
    trace_.events.push_back({now_, worker, kind, version, completion});
  }

  void dispatch();
  void try_start_trainer();
  void try_start_generators();
  void start_completion(std::size_t g, std::size_t version);
  void on_gen_finish(std::size_t g);
  void on_train_finish();
  void on_weights(std::size_t version);
  void begin_update(const std::vector<std::size_t>& minibatch);
  std::size_t tokens_done(const CompletionTrace& c, double t) const;
  SimMetrics metrics(bool deadlock);

  WorkerConfig cfg_;
  SchedulerPolicy pol_;
  double horizon_;
  std::mt19937_64 rng_;
  double now_ = 0.0;
  std::priority_queue<QEvent, std::vector<QEvent>, Later> q_;
  std::uint64_t seq_ = 0;
  SimTrace trace_;

  std::size_t version_ = 0;    // trainer weights
  std::size_t delivered_ = 0;  // newest weights held by the generators
  std::vector<Gen> gens_;
  bool trainer_busy_ = false;
  double trainer_since_ = 0.0;
  std::vector<std::vector<Interval>> busy_;
  std::optional<double> first_update_;
  bool stalled_ = false;
  bool throttled_ = false;  // a generator was refused by the lag bound

  // PipelineRL
  std::deque<std::size_t> pending_;  // unconsumed, in start order

  // PPO-off-policy
  std::vector<PpoBatch> batches_;
  std::vector<std::size_t> batch_of_;
  std::size_t train_batch_ = 0;
  std::size_t update_in_batch_ = 0;
  bool training_batch_ = false;
  std::size_t batches_started_ = 0;
  std::size_t batches_trained_ = 0;
};

std::size_t Simulator::tokens_done(const CompletionTrace& c, double t) const {
  const double produced = std::floor((t - c.start) * cfg_.tokens_per_second + 1e-9);
  return std::min<std::size_t>(c.tokens, static_cast<std::size_t>(std::max(0.0, produced)));
}

void Simulator::start_completion(std::size_t g, std::size_t version) {
  CompletionTrace c;
  c.id = trace_.completions.size();
  c.generator = static_cast<int>(g);
  c.start = now_;
  c.tokens = cfg_.completion_tokens.lo == cfg_.completion_tokens.hi
                 ? cfg_.completion_tokens.lo
                 : std::uniform_int_distribution<std::size_t>(cfg_.completion_tokens.lo,
                                                              cfg_.completion_tokens.hi)(rng_);
  c.segments.push_back({version, 0});
  const double duration = static_cast<double>(c.tokens) / cfg_.tokens_per_second;
  gens_[g] = {true, c.id, now_};
  log(static_cast<int>(g) + 1, EventKind::gen_start, version, static_cast<long>(c.id));
  push(now_ + duration, static_cast<int>(g) + 1, QKind::gen_finish, g);
  trace_.completions.push_back(std::move(c));
  if (pipeline()) pending_.push_back(trace_.completions.back().id);
}

void Simulator::try_start_generators() {
  throttled_ = false;
  for (std::size_t g = 0; g < gens_.size(); ++g) {
    if (gens_[g].busy) continue;
    if (pipeline()) {
      // FIFO consumption fixes the version that will consume a new
      // completion; refuse to start one that would land more than k behind.
      if (pol_.k != kUnbounded) {
        const std::size_t next_step = version_ + (trainer_busy_ ? 1 : 0);
        const std::size_t consumed_at = next_step + pending_.size() / cfg_.batch_completions;
        if (consumed_at > delivered_ + pol_.k) {
          throttled_ = true;
          return;
        }
      }
      start_completion(g, delivered_);
      continue;
    }
    const std::size_t size = ppo_batch_size();
    if (batches_.empty() || batches_.back().assigned == size) {
      const std::size_t next = batches_.size();
      if (next > 0) {
        const bool ok = pol_.overlap == PpoOverlap::one_batch_ahead
                            ? batches_started_ >= next
                            : batches_trained_ >= next && delivered_ >= next * pol_.k;
        if (!ok) return;
      }
      batches_.push_back({delivered_, 0, 0, {}});
    }
    auto& b = batches_.back();
    const std::size_t id = trace_.completions.size();
    b.ids.push_back(id);
    ++b.assigned;
    batch_of_.push_back(batches_.size() - 1);
    start_completion(g, b.snapshot);
  }
}

void Simulator::begin_update(const std::vector<std::size_t>& minibatch) {
  for (std::size_t id : minibatch) {
    trace_.completions[id].consumed_version = version_;
    log(0, EventKind::consume, version_, static_cast<long>(id));
  }
  if (!first_update_) first_update_ = now_;
  trainer_busy_ = true;
  trainer_since_ = now_;
  stalled_ = false;
  log(0, EventKind::train_start, version_);
  push(now_ + cfg_.update_duration, 0, QKind::train_finish, 0);
}

void Simulator::try_start_trainer() {
  if (trainer_busy_) return;
  const std::size_t bh = cfg_.batch_completions;
  if (pipeline()) {
    // strict FIFO: the oldest B-hat completions, even if younger ones are done
    const bool head_done = pending_.size() >= bh &&
                           std::all_of(pending_.begin(), pending_.begin() + static_cast<long>(bh),
                                       [&](std::size_t id) { return trace_.completions[id].finish >= 0.0; });
    if (!head_done) {
      if (throttled_ && !stalled_) log(0, EventKind::trainer_stall, version_);
      stalled_ = stalled_ || throttled_;
      return;
    }
    std::vector<std::size_t> mb(pending_.begin(), pending_.begin() + static_cast<long>(bh));
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<long>(bh));
    begin_update(mb);
    return;
  }
  if (training_batch_ || train_batch_ >= batches_.size()) return;
  const auto& b = batches_[train_batch_];
  if (b.finished < ppo_batch_size()) return;
  training_batch_ = true;
  update_in_batch_ = 0;
  ++batches_started_;
  begin_update({b.ids.begin(), b.ids.begin() + static_cast<long>(bh)});
}

void Simulator::on_gen_finish(std::size_t g) {
  auto& c = trace_.completions[gens_[g].current];
  std::size_t assigned = 0;
  for (const auto& s : c.segments) assigned += s.tokens;
  c.segments.back().tokens += c.tokens - assigned;
  std::erase_if(c.segments, [](const Segment& s) { return s.tokens == 0; });
  c.finish = now_;
  busy_[g + 1].push_back({gens_[g].since, now_});
  gens_[g].busy = false;
  log(static_cast<int>(g) + 1, EventKind::gen_finish, c.segments.back().version, static_cast<long>(c.id));
  if (!pipeline()) ++batches_[batch_of_[c.id]].finished;
}

void Simulator::on_train_finish() {
  ++version_;
  trainer_busy_ = false;
  busy_[0].push_back({trainer_since_, now_});
  log(0, EventKind::train_finish, version_);
  auto push_weights = [&] {
    log(0, EventKind::weights_push, version_);
    if (cfg_.broadcast_latency == 0.0) {
      on_weights(version_);
    } else {
      push(now_ + cfg_.broadcast_latency, 0, QKind::weights_arrive, version_);
    }
  };
  if (pipeline()) {
    push_weights();
    return;
  }
  ++update_in_batch_;
  const auto& b = batches_[train_batch_];
  if (update_in_batch_ < pol_.k) {
    const std::size_t bh = cfg_.batch_completions;
    const auto first = b.ids.begin() + static_cast<long>(update_in_batch_ * bh);
    begin_update({first, first + static_cast<long>(bh)});
    return;
  }
  training_batch_ = false;
  ++train_batch_;
  ++batches_trained_;
  push_weights();
}

void Simulator::on_weights(std::size_t version) {
  if (version <= delivered_) return;
  delivered_ = version;
  for (std::size_t g = 0; g < gens_.size(); ++g) {
    log(static_cast<int>(g) + 1, EventKind::weights_in, version);
    if (!pipeline() || !gens_[g].busy) continue;
    auto& c = trace_.completions[gens_[g].current];
    const std::size_t done = tokens_done(c, now_);
    std::size_t assigned = 0;
    for (const auto& s : c.segments) assigned += s.tokens;
    if (done > assigned) {
      c.segments.back().tokens += done - assigned;
      c.segments.push_back({version, 0});
    } else {
      c.segments.back().version = version;
    }
  }
}

void Simulator::dispatch() {
  try_start_trainer();
  try_start_generators();
  try_start_trainer();
  try_start_generators();
}

SimResult Simulator::run() {
  dispatch();
  while (!q_.empty()) {
    const QEvent ev = q_.top();
    if (ev.time > horizon_) break;
    q_.pop();
    now_ = ev.time;
    switch (ev.kind) {
      case QKind::gen_finish: on_gen_finish(ev.payload); break;
      case QKind::train_finish: on_train_finish(); break;
      case QKind::weights_arrive: on_weights(ev.payload); break;
    }
    dispatch();
  }
  const bool deadlock = q_.empty();
  SimResult r;
  r.metrics = metrics(deadlock);
  r.trace = std::move(trace_);
  return r;
}

SimMetrics Simulator::metrics(bool deadlock) {
  SimMetrics m;
  if (trainer_busy_) busy_[0].push_back({trainer_since_, horizon_});
  for (std::size_t g = 0; g < gens_.size(); ++g) {
    if (gens_[g].busy) busy_[g + 1].push_back({gens_[g].since, horizon_});
  }
  for (const auto& iv : busy_) {
    const double b = busy_between(iv, 0.0, horizon_);
    m.worker_totals.push_back({b, horizon_ - b});
  }
  for (const auto& c : trace_.completions) {
    if (c.finish >= 0.0) {
      m.tokens_generated += c.tokens;
      ++m.completions_finished;
    } else {
      m.tokens_generated += tokens_done(c, horizon_);
    }
  }
  m.lag = lag_histogram(trace_);
  m.tokens_trained = m.lag.token_mass();
  for (const auto& c : trace_.completions) m.completions_consumed += c.consumed_version.has_value();
  m.steps = version_;
  m.deadlock = deadlock;
  m.window_end = horizon_;
  m.window_start = first_update_.value_or(0.0);
  if (!first_update_) {
    m.steady_state = false;
    m.note = "no optimizer step started before the horizon";
  }
  if (deadlock) {
    m.steady_state = false;
    m.note = "no pending events after t=" + std::to_string(now_) + ": steady state unreachable";
  }
  const double window = m.window_end - m.window_start;
  if (!(window > 0.0)) {
    m.steady_state = false;
    if (m.note.empty()) m.note = "empty steady window";
    return m;
  }
  // summed busy intervals can overshoot the window by rounding
  auto idle = [&](std::size_t w) {
    return std::clamp((window - busy_between(busy_[w], m.window_start, m.window_end)) / window, 0.0, 1.0);
  };
  double gen_idle = 0.0;
  for (std::size_t g = 0; g < gens_.size(); ++g) gen_idle += idle(g + 1);
  m.generator_idle = gen_idle / static_cast<double>(gens_.size());
  m.trainer_idle = idle(0);
  std::size_t finishes = 0, steps = 0;
  for (const auto& e : trace_.events) {
    if (e.time < m.window_start) continue;
    finishes += e.kind == EventKind::gen_finish;
    steps += e.kind == EventKind::train_finish;
  }
  m.completions_per_time = static_cast<double>(finishes) / window;
  m.steps_per_time = static_cast<double>(steps) / window;
  return m;
}

std::size_t parse_k(const nlohmann::json& j) {
  if (j.is_string() && (j == "inf" || j == "infinity")) return kUnbounded;
  return j.get<std::size_t>();
}

}  // namespace

void WorkerConfig::validate() const {
  if (n_generators < 1) throw InputError("need at least one generator");
  if (!(tokens_per_second > 0.0)) throw InputError("tokens_per_second must be > 0");
  if (completion_tokens.lo < 1 || completion_tokens.lo > completion_tokens.hi) {
    throw InputError("completion tokens need 1 <= lo <= hi");
  }
  if (!(update_duration > 0.0)) throw InputError("update_duration must be > 0");
  if (!(broadcast_latency >= 0.0)) throw InputError("broadcast_latency must be >= 0");
  if (batch_completions < 1) throw InputError("batch_completions must be >= 1");
}

void SchedulerPolicy::validate() const {
  if (k < 1) throw InputError("k must be >= 1");
  if (kind == SchedulerKind::ppo_offpolicy && k == kUnbounded) {
    throw InputError("PPO-off-policy needs a finite k");
  }
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::train_start: return "train_start";
    case EventKind::train_finish: return "train_finish";
    case EventKind::weights_push: return "weights_push";
    case EventKind::weights_in: return "weights_in";
    case EventKind::gen_start: return "gen_start";
    case EventKind::gen_finish: return "gen_finish";
    case EventKind::consume: return "consume";
    case EventKind::trainer_stall: return "trainer_stall";
  }
  return "?";
}

const char* to_string(SchedulerKind k) { return k == SchedulerKind::ppo_offpolicy ? "ppo" : "pipeline"; }

SchedulerKind parse_scheduler(const std::string& s) {
  if (s == "ppo" || s == "ppo_offpolicy") return SchedulerKind::ppo_offpolicy;
  if (s == "pipeline" || s == "pipeline_rl") return SchedulerKind::pipeline_rl;
  throw InputError("unknown scheduler '" + s + "' (expected ppo or pipeline)");
}

std::size_t LagHistogram::token_mass() const {
  std::size_t n = 0;
  for (const auto& [lag, count] : per_token) n += count;
  return n;
}

SimResult simulate(const WorkerConfig& cfg, const SchedulerPolicy& policy, double horizon, std::uint64_t seed) {
  cfg.validate();
  policy.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InputError("horizon must be finite and > 0");
  if (policy.k != kUnbounded && policy.k > kUnbounded / cfg.batch_completions) {
    throw InputError("k * batch_completions overflows");
  }
  return Simulator(cfg, policy, horizon, seed).run();
}

LagHistogram lag_histogram(const SimTrace& trace) {
  LagHistogram h;
  for (const auto& c : trace.completions) {
    if (!c.consumed_version) continue;
    const std::size_t v = *c.consumed_version;
    for (const auto& s : c.segments) {
      const std::size_t lag = v - s.version;
      h.per_token[lag] += s.tokens;
      h.max_lag = std::max(h.max_lag, lag);
    }
    ++h.per_completion[v - c.segments.front().version];
  }
  return h;
}

std::vector<PolicyComparison> compare_policies(const WorkerConfig& cfg, const std::vector<std::size_t>& k_values,
                                               double horizon, std::uint64_t seed, PpoOverlap overlap) {
  if (k_values.empty()) throw InputError("compare_policies needs at least one k");
  std::vector<PolicyComparison> out;
  for (std::size_t k : k_values) {
    PolicyComparison pc;
    pc.k = k;
    pc.pipeline = simulate(cfg, {SchedulerKind::pipeline_rl, k}, horizon, seed).metrics;
    if (k != kUnbounded) pc.ppo = simulate(cfg, {SchedulerKind::ppo_offpolicy, k, overlap}, horizon, seed).metrics;
    out.push_back(std::move(pc));
  }
  return out;
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
  out << "time,worker,event,version,completion\n";
  for (const auto& e : trace.events) {
    out << nlohmann::json(e.time).dump() << ',' << (e.worker == 0 ? std::string("trainer") : "gen" + std::to_string(e.worker - 1))
        << ',' << to_string(e.kind) << ',' << e.version << ',';
    if (e.completion >= 0) out << e.completion;
    out << '\n';
  }
}

nlohmann::json to_json(const SimMetrics& m) {
  auto hist = [](const std::map<std::size_t, std::size_t>& h) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [lag, n] : h) j[std::to_string(lag)] = n;
    return j;
  };
  nlohmann::json workers = nlohmann::json::array();
  for (std::size_t i = 0; i < m.worker_totals.size(); ++i) {
    workers.push_back({{"worker", i == 0 ? std::string("trainer") : "gen" + std::to_string(i - 1)},
                       {"busy", m.worker_totals[i].busy},
                       {"idle", m.worker_totals[i].idle}});
  }
  return {{"generator_idle", m.generator_idle},
          {"trainer_idle", m.trainer_idle},
          {"completions_per_time", m.completions_per_time},
          {"steps_per_time", m.steps_per_time},
          {"max_lag", m.lag.max_lag},
          {"lag_per_token", hist(m.lag.per_token)},
          {"lag_per_completion", hist(m.lag.per_completion)},
          {"steps", m.steps},
          {"completions_finished", m.completions_finished},
          {"completions_consumed", m.completions_consumed},
          {"tokens_generated", m.tokens_generated},
          {"tokens_trained", m.tokens_trained},
          {"window", {m.window_start, m.window_end}},
          {"workers", std::move(workers)},
          {"steady_state", m.steady_state},
          {"deadlock", m.deadlock},
          {"note", m.note}};
}

nlohmann::json to_json(const WorkerConfig& c) {
  return {{"n_generators", c.n_generators},
          {"tokens_per_second", c.tokens_per_second},
          {"completion_tokens", {c.completion_tokens.lo, c.completion_tokens.hi}},
          {"update_duration", c.update_duration},
          {"broadcast_latency", c.broadcast_latency},
          {"batch_completions", c.batch_completions}};
}

nlohmann::json to_json(const SchedulerPolicy& p) {
  nlohmann::json k = p.k == kUnbounded ? nlohmann::json("inf") : nlohmann::json(p.k);
  return {{"kind", to_string(p.kind)},
          {"k", k},
          {"overlap", p.overlap == PpoOverlap::alternating ? "alternating" : "one_batch_ahead"}};
}

nlohmann::json to_json(const Scenario& s) {
  return {{"workers", to_json(s.workers)}, {"policy", to_json(s.policy)}, {"horizon", s.horizon}, {"seed", s.seed}};
}

Scenario scenario_from_json(const nlohmann::json& j) {
  auto reject_unknown = [](const nlohmann::json& obj, std::initializer_list<const char*> keys, const char* where) {
    for (const auto& [key, _] : obj.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
        throw InputError(std::string("unknown key '") + key + "' in " + where);
      }
    }
  };
  try {
    Scenario s;
    reject_unknown(j, {"workers", "policy", "horizon", "seed"}, "scenario");
    if (j.contains("workers")) {
      const auto& w = j["workers"];
      reject_unknown(w,
                     {"n_generators", "tokens_per_second", "completion_tokens", "update_duration",
                      "broadcast_latency", "batch_completions"},
                     "workers");
      auto& c = s.workers;
      c.n_generators = w.value("n_generators", c.n_generators);
      c.tokens_per_second = w.value("tokens_per_second", c.tokens_per_second);
      if (w.contains("completion_tokens")) {
        const auto& t = w["completion_tokens"];
        if (t.is_array()) {
          c.completion_tokens = {t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>()};
        } else {
          c.completion_tokens = {t.get<std::size_t>(), t.get<std::size_t>()};
        }
      }
      c.update_duration = w.value("update_duration", c.update_duration);
      c.broadcast_latency = w.value("broadcast_latency", c.broadcast_latency);
      c.batch_completions = w.value("batch_completions", c.batch_completions);
    }
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      reject_unknown(p, {"kind", "k", "overlap"}, "policy");
      if (p.contains("kind")) s.policy.kind = parse_scheduler(p["kind"].get<std::string>());
      if (p.contains("k")) s.policy.k = parse_k(p["k"]);
      if (p.contains("overlap")) {
        const auto o = p["overlap"].get<std::string>();
        if (o == "alternating") {
          s.policy.overlap = PpoOverlap::alternating;
        } else if (o == "one_batch_ahead") {
          s.policy.overlap = PpoOverlap::one_batch_ahead;
        } else {
          throw InputError("unknown overlap '" + o + "'");
        }
      }
    }
    s.horizon = j.value("horizon", s.horizon);
    s.seed = j.value("seed", s.seed);
    s.workers.validate();
    s.policy.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed scenario: ") + e.what());
  }
}

}  // namespace scalerl::sim
