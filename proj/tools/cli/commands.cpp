#include "cli/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli/schema.hpp"
#include "cli/svg.hpp"
#include "scalerl/async_sim.hpp"
#include "scalerl/curve_io.hpp"
#include "scalerl/error.hpp"
#include "scalerl/scaling_law.hpp"
#include "scalerl/toy_rl.hpp"

namespace scalerl::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
  if (!f) throw InputError("failed writing '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

TrainingCurve load_curve(const std::string& path) {
  std::istringstream in(read_file(path));
  try {
    return read_training_curve(in, fs::path(path).stem().string());
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

std::string fmt(double v) { return format_double(v); }

bool given(const CLI::Option* o) { return o->count() > 0; }

// ---- shared fit options ----------------------------------------------------

struct FitOptions {
  FitConfig cfg;
  std::string model = "sigmoid";
  std::string r0 = "fitted";
  bool serial = false;

  FitConfig config() const {
    FitConfig c = cfg;
    c.r0_policy = r0 == "measured" ? R0Policy::measured_at_window_start : R0Policy::fitted;
    c.exec = serial ? Exec::serial : Exec::parallel;
    return c;
  }
};

void add_fit_options(CLI::App* s, FitOptions& o, bool with_model) {
  s->add_option("--window-min", o.cfg.window_min, "Lower compute bound of the fit window");
  s->add_option("--window-max", o.cfg.window_max, "Upper compute bound of the fit window");
  s->add_option("--a-min", o.cfg.a_min, "Smallest asymptote on the grid");
  s->add_option("--a-max", o.cfg.a_max, "Largest asymptote on the grid");
  s->add_option("--a-step", o.cfg.a_step, "Asymptote grid step");
  s->add_option("--cmid-min", o.cfg.cmid_min, "Smallest Cmid on the grid");
  s->add_option("--cmid-max", o.cfg.cmid_max, "Largest Cmid on the grid");
  s->add_option("--cmid-count", o.cfg.cmid_count, "Log-spaced Cmid grid points");
  s->add_option("--r0", o.r0, "R0 handling")->check(CLI::IsMember({"fitted", "measured"}));
  s->add_flag("--serial", o.serial, "Use the serial reference kernels");
  if (with_model) s->add_option("--model", o.model, "Curve family")->check(CLI::IsMember({"sigmoid", "powerlaw"}));
}

FitResult fit_curve(const TrainingCurve& curve, const FitOptions& o) {
  const auto cfg = o.config();
  if (window_points(curve, cfg).empty()) throw InputError("no points in window");
  return o.model == "powerlaw" ? fit_power_law(curve, cfg) : fit_sigmoid(curve, cfg);
}

void print_fit(std::ostream& out, const FitResult& fit) {
  if (fit.is_sigmoid()) {
    const auto& s = fit.sigmoid();
    out << "model  sigmoid\nA      " << fmt(s.a) << "\nB      " << fmt(s.b) << "\nCmid   " << fmt(s.cmid)
        << "\nR0     " << fmt(s.r0) << '\n';
  } else {
    const auto& p = fit.power_law();
    out << "model  powerlaw\nA      " << fmt(p.a) << "\nB      " << fmt(p.b) << "\nD      " << fmt(p.d) << '\n';
  }
  out << "ssr    " << fmt(fit.ssr) << "\npoints " << fit.n_points << "\nwindow " << fmt(fit.window.first) << " .. "
      << fmt(fit.window.second) << '\n';
}

// ---- subcommands -----------------------------------------------------------

struct Globals {
  bool json = false;
};

struct FitCmd {
  std::string csv, output, plot;
  double plot_to = 0.0;
  FitOptions fit;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("fit", "Fit a training curve CSV (compute,reward[,step])");
    s->add_option("csv", csv, "Training curve CSV")->required();
    add_fit_options(s, fit, true);
    s->add_option("-o,--output", output, "Write the FitResult JSON here");
    s->add_option("--plot", plot, "Write an SVG plot here");
    s->add_option("--plot-to", plot_to, "Extend the dashed extrapolation to this compute (0: last point)");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    const auto curve = load_curve(csv);
    const auto result = fit_curve(curve, fit);
    const auto j = to_json(result);
    if (!output.empty()) write_file(output, pretty(j));
    if (!plot.empty()) write_file(plot, render_fit_svg(curve, result, plot_to));
    if (g.json) {
      out << pretty(j);
    } else {
      print_fit(out, result);
    }
    return kOk;
  }
};

struct ExtrapolateCmd {
  std::string input, output;
  std::vector<double> targets;
  FitOptions fit;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("extrapolate", "Predict reward at target compute from a fit JSON or a curve CSV");
    s->add_option("input", input, "FitResult JSON (*.json) or training curve CSV")->required();
    s->add_option("--to", targets, "Target compute values, comma separated")->required()->delimiter(',');
    add_fit_options(s, fit, true);
    s->add_option("-o,--output", output, "Write the JSON report here");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    const FitResult result =
        fs::path(input).extension() == ".json" ? fit_result_from_json(read_json(input)) : fit_curve(load_curve(input), fit);
    const auto preds = extrapolate(result, targets);
    json rows = json::array();
    for (const auto& p : preds) rows.push_back({{"compute", p.compute}, {"reward", p.reward}, {"low_confidence", p.low_confidence}});
    const json j{{"fit", to_json(result)}, {"predictions", rows}};
    if (!output.empty()) write_file(output, pretty(j));
    if (g.json) {
      out << pretty(j);
    } else {
      out << "compute,reward,low_confidence\n";
      for (const auto& p : preds) out << fmt(p.compute) << ',' << fmt(p.reward) << ',' << (p.low_confidence ? "yes" : "no") << '\n';
    }
    return kOk;
  }
};

struct CompareCmd {
  std::vector<std::string> csvs;
  std::string output;
  double margin = 0.02;
  FitOptions fit;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("compare", "Rank two or more runs by asymptote, then by efficiency");
    s->add_option("csvs", csvs, "Training curve CSVs")->required();
    s->add_option("--margin", margin, "Asymptotes closer than this share a refit A")->check(CLI::NonNegativeNumber);
    add_fit_options(s, fit, false);
    s->add_option("-o,--output", output, "Write the JSON report here");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    if (csvs.size() < 2) throw InputError("compare needs at least two CSV files");
    const auto cfg = fit.config();
    std::vector<TrainingCurve> curves;
    std::vector<FitResult> fits;
    for (const auto& path : csvs) {
      curves.push_back(load_curve(path));
      fits.push_back(fit_curve(curves.back(), fit));
    }
    const std::size_t n = curves.size();
    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = curves[i].label.empty() ? "run" + std::to_string(i) : curves[i].label;

    // greedy clusters down the A ordering; members within `margin` of the
    // cluster head are refit with their mean A
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fits[a].sigmoid().a > fits[b].sigmoid().a; });
    json ranking = json::array();
    std::size_t rank = 1;
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i + 1;
      while (j < n && fits[order[i]].sigmoid().a - fits[order[j]].sigmoid().a <= margin + 1e-12) ++j;
      struct Row {
        std::size_t idx;
        SigmoidCurve c;
      };
      std::vector<Row> rows;
      std::optional<double> shared;
      if (j - i > 1) {
        double sum = 0.0;
        for (std::size_t m = i; m < j; ++m) sum += fits[order[m]].sigmoid().a;
        shared = sum / static_cast<double>(j - i);
        for (std::size_t m = i; m < j; ++m) rows.push_back({order[m], fit_sigmoid_fixed_a(curves[order[m]], cfg, *shared).sigmoid()});
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
          return a.c.b != b.c.b ? a.c.b > b.c.b : a.c.cmid < b.c.cmid;
        });
      } else {
        rows.push_back({order[i], fits[order[i]].sigmoid()});
      }
      for (const auto& r : rows) {
        ranking.push_back({{"rank", rank++},
                           {"label", labels[r.idx]},
                           {"Cmid", r.c.cmid},
                           {"B", r.c.b},
                           {"A", r.c.a},
                           {"shared_A", shared ? json(*shared) : json(nullptr)}});
      }
      i = j;
    }

    json pairs = json::array();
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const auto c = compare_with_shared_asymptote(curves[a], curves[b], cfg, margin);
        const double b1 = c.shared ? c.refit1->sigmoid().b : c.fit1.sigmoid().b;
        const double b2 = c.shared ? c.refit2->sigmoid().b : c.fit2.sigmoid().b;
        pairs.push_back({{"first", labels[a]},
                         {"second", labels[b]},
                         {"shared", c.shared},
                         {"shared_A", c.shared ? json(c.shared_a) : json(nullptr)},
                         {"B_first", b1},
                         {"B_second", b2},
                         {"verdict", to_string(c.verdict)}});
      }
    }
    json runs = json::array();
    for (std::size_t i = 0; i < n; ++i) runs.push_back({{"label", labels[i]}, {"fit", to_json(fits[i])}});
    const json j{{"margin", margin}, {"runs", runs}, {"ranking", ranking}, {"pairs", pairs}};
    if (!output.empty()) write_file(output, pretty(j));
    if (g.json) {
      out << pretty(j);
      return kOk;
    }
    out << std::left << std::setw(6) << "rank" << std::setw(24) << "run" << std::setw(14) << "Cmid" << std::setw(12)
        << "B" << std::setw(10) << "A" << "shared A\n";
    for (const auto& r : ranking) {
      out << std::setw(6) << r["rank"].get<std::size_t>() << std::setw(24) << r["label"].get<std::string>()
          << std::setw(14) << fmt(r["Cmid"].get<double>()) << std::setw(12) << fmt(r["B"].get<double>())
          << std::setw(10) << fmt(r["A"].get<double>())
          << (r["shared_A"].is_null() ? std::string("-") : fmt(r["shared_A"].get<double>())) << '\n';
    }
    for (const auto& p : pairs) {
      out << p["first"].get<std::string>() << " vs " << p["second"].get<std::string>() << ": "
          << p["verdict"].get<std::string>() << '\n';
    }
    return kOk;
  }
};

struct EfficiencyCmd {
  std::string csv, fit_json, output;
  SigmoidCurve curve;
  FitOptions fit;
  CLI::Option *r0 = nullptr, *a = nullptr, *b = nullptr, *cmid = nullptr;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("efficiency-view",
                                 "Map a curve to (log C, log F(R)); points on the fitted sigmoid lie on a line of slope B");
    s->add_option("csv", csv, "Training curve CSV")->required();
    s->add_option("--fit", fit_json, "Use the sigmoid in this FitResult JSON instead of fitting");
    r0 = s->add_option("--curve-r0", curve.r0, "Use this sigmoid (all four --curve-* needed)");
    a = s->add_option("--curve-a", curve.a, "Sigmoid asymptote");
    b = s->add_option("--curve-b", curve.b, "Sigmoid exponent");
    cmid = s->add_option("--curve-cmid", curve.cmid, "Sigmoid midpoint");
    add_fit_options(s, fit, false);
    s->add_option("-o,--output", output, "Write the JSON report here");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    const auto data = load_curve(csv);
    const int explicit_params = given(r0) + given(a) + given(b) + given(cmid);
    SigmoidCurve c;
    if (explicit_params == 4) {
      c = curve;
      c.validate();
    } else if (explicit_params != 0) {
      throw InputError("--curve-r0, --curve-a, --curve-b and --curve-cmid go together");
    } else if (!fit_json.empty()) {
      const auto f = fit_result_from_json(read_json(fit_json));
      if (!f.is_sigmoid()) throw InputError("efficiency-view needs a sigmoid fit");
      c = f.sigmoid();
    } else {
      c = fit_curve(data, fit).sigmoid();
    }
    const auto view = efficiency_transform(data, c);
    json pts = json::array();
    for (std::size_t i = 0; i < view.log_compute.size(); ++i) pts.push_back({{"log_compute", view.log_compute[i]}, {"log_f", view.log_f[i]}});
    std::optional<LineFit> line;
    if (view.log_compute.size() >= 2) line = view.line();
    const json j{{"curve", {{"R0", c.r0}, {"A", c.a}, {"B", c.b}, {"Cmid", c.cmid}}},
                 {"points", pts},
                 {"slope", line ? json(line->slope) : json(nullptr)},
                 {"intercept", line ? json(line->intercept) : json(nullptr)},
                 {"skipped", view.skipped}};
    if (!output.empty()) write_file(output, pretty(j));
    if (g.json) {
      out << pretty(j);
    } else {
      out << "log_compute,log_f\n";
      for (std::size_t i = 0; i < view.log_compute.size(); ++i) out << fmt(view.log_compute[i]) << ',' << fmt(view.log_f[i]) << '\n';
      out << "# slope " << (line ? fmt(line->slope) : "n/a") << " (B = " << fmt(c.b) << "), skipped " << view.skipped << '\n';
    }
    return kOk;
  }
};

struct SimulateCmd {
  std::string scenario_path, policy = "pipeline", k = "8", overlap = "alternating", trace, output;
  sim::WorkerConfig w{4, 100.0, {100, 300}, 1.0, 0.0, 4};
  double horizon = 1000.0;
  std::uint64_t seed = 0;
  std::vector<std::string> compare_k;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("simulate", "Discrete-event run of PPO-off-policy-k or PipelineRL-k");
    s->add_option("--scenario", scenario_path, "Scenario JSON; flags given explicitly override it");
    opts["policy"] = s->add_option("--policy", policy, "Scheduler")->transform(CLI::IsMember({"ppo", "ppo_offpolicy", "pipeline", "pipeline_rl"}));
    opts["k"] = s->add_option("--k", k, "Off-policyness bound (integer or inf)");
    opts["overlap"] = s->add_option("--overlap", overlap, "PPO overlap mode")->check(CLI::IsMember({"alternating", "one_batch_ahead"}));
    opts["generators"] = s->add_option("--generators", w.n_generators, "Generator workers");
    opts["tps"] = s->add_option("--tps", w.tokens_per_second, "Tokens per second per generator");
    opts["tokens-lo"] = s->add_option("--tokens-lo", w.completion_tokens.lo, "Shortest completion (tokens)");
    opts["tokens-hi"] = s->add_option("--tokens-hi", w.completion_tokens.hi, "Longest completion (tokens)");
    opts["update"] = s->add_option("--update", w.update_duration, "Seconds per optimizer step");
    opts["latency"] = s->add_option("--latency", w.broadcast_latency, "Weight broadcast latency (seconds)");
    opts["batch"] = s->add_option("--batch", w.batch_completions, "Completions per optimizer step");
    opts["horizon"] = s->add_option("--horizon", horizon, "Simulated seconds");
    opts["seed"] = s->add_option("--seed", seed, "Seed for completion lengths")->envname("SCALERL_SEED");
    s->add_option("--compare-k", compare_k, "Run PPO and PipelineRL side by side for these k values")->delimiter(',');
    s->add_option("--trace", trace, "Write the event trace CSV here");
    s->add_option("-o,--output", output, "Write the JSON report here");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  static std::size_t parse_k(const std::string& v) {
    if (v == "inf") return sim::kUnbounded;
    try {
      std::size_t pos = 0;
      const auto k = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(k);
    } catch (const std::exception&) {
      throw InputError("k must be a positive integer or 'inf', got '" + v + "'");
    }
  }

  int exec(std::ostream& out, const Globals& g) {
    sim::Scenario sc;
    sc.workers = w;
    sc.policy.kind = sim::parse_scheduler(policy);
    sc.policy.k = parse_k(k);
    sc.horizon = horizon;
    sc.seed = seed;
    if (!scenario_path.empty()) {
      const auto file = sim::scenario_from_json(read_json(scenario_path));
      auto keep = [&](const char* name) { return given(opts.at(name)); };
      if (!keep("generators")) sc.workers.n_generators = file.workers.n_generators;
      if (!keep("tps")) sc.workers.tokens_per_second = file.workers.tokens_per_second;
      if (!keep("tokens-lo")) sc.workers.completion_tokens.lo = file.workers.completion_tokens.lo;
      if (!keep("tokens-hi")) sc.workers.completion_tokens.hi = file.workers.completion_tokens.hi;
      if (!keep("update")) sc.workers.update_duration = file.workers.update_duration;
      if (!keep("latency")) sc.workers.broadcast_latency = file.workers.broadcast_latency;
      if (!keep("batch")) sc.workers.batch_completions = file.workers.batch_completions;
      if (!keep("policy")) sc.policy.kind = file.policy.kind;
      if (!keep("k")) sc.policy.k = file.policy.k;
      if (!keep("overlap")) overlap = file.policy.overlap == sim::PpoOverlap::alternating ? "alternating" : "one_batch_ahead";
      if (!keep("horizon")) sc.horizon = file.horizon;
      if (!keep("seed")) sc.seed = file.seed;
    }
    sc.policy.overlap = overlap == "alternating" ? sim::PpoOverlap::alternating : sim::PpoOverlap::one_batch_ahead;
    sc.workers.validate();
    sc.policy.validate();
    if (!(sc.horizon > 0.0)) throw InputError("horizon must be > 0");

    if (!compare_k.empty()) {
      std::vector<std::size_t> ks;
      for (const auto& v : compare_k) ks.push_back(parse_k(v));
      const auto rows = sim::compare_policies(sc.workers, ks, sc.horizon, sc.seed, sc.policy.overlap);
      json jr = json::array();
      for (const auto& r : rows) {
        jr.push_back({{"k", r.k == sim::kUnbounded ? json("inf") : json(r.k)}, {"ppo", to_json(r.ppo)}, {"pipeline", to_json(r.pipeline)}});
      }
      const json j{{"workers", to_json(sc.workers)},
                   {"horizon", sc.horizon},
                   {"seed", sc.seed},
                   {"overlap", sc.policy.overlap == sim::PpoOverlap::alternating ? "alternating" : "one_batch_ahead"},
                   {"rows", jr}};
      if (!output.empty()) write_file(output, pretty(j));
      if (g.json) {
        out << pretty(j);
        return kOk;
      }
      out << "k      ppo_gen_idle  pipe_gen_idle  ppo_steps/t  pipe_steps/t  ppo_max_lag  pipe_max_lag\n";
      for (const auto& r : rows) {
        out << std::left << std::setw(7) << (r.k == sim::kUnbounded ? std::string("inf") : std::to_string(r.k))
            << std::setw(14) << fmt(r.ppo.generator_idle) << std::setw(15) << fmt(r.pipeline.generator_idle)
            << std::setw(13) << fmt(r.ppo.steps_per_time) << std::setw(14) << fmt(r.pipeline.steps_per_time)
            << std::setw(13) << r.ppo.lag.max_lag << r.pipeline.lag.max_lag << '\n';
      }
      return kOk;
    }

    const auto result = sim::simulate(sc.workers, sc.policy, sc.horizon, sc.seed);
    if (!trace.empty()) {
      std::ostringstream os;
      sim::write_trace_csv(os, result.trace);
      write_file(trace, os.str());
    }
    const json j{{"scenario", to_json(sc)}, {"metrics", to_json(result.metrics)}};
    if (!output.empty()) write_file(output, pretty(j));
    if (g.json) {
      out << pretty(j);
    } else {
      const auto& m = result.metrics;
      out << "generator_idle " << fmt(m.generator_idle) << "\ntrainer_idle   " << fmt(m.trainer_idle)
          << "\nsteps          " << m.steps << "\nsteps/time     " << fmt(m.steps_per_time) << "\ncompletions/t  "
          << fmt(m.completions_per_time) << "\nmax_lag        " << m.lag.max_lag << '\n';
      if (m.deadlock) out << "deadlock: " << m.note << '\n';
    }
    return kOk;
  }
};

struct TrainCmd {
  toy::RunConfig cfg;
  std::string preset = "scalerl", run_config, curve_path, metrics_path, manifest_path;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("train", "Run the toy RL trainer and emit its training curve");
    s->add_option("--run-config", run_config, "RunConfig JSON; flags given explicitly override it");
    opts["preset"] = s->add_option("--preset", preset, "Recipe preset")
                         ->check(CLI::IsMember({"scalerl", "grpo_deepseek", "dapo_qwen", "magistral", "minimax"}));
    opts["steps"] = s->add_option("--steps", cfg.max_steps, "Optimizer steps");
    opts["eval-every"] = s->add_option("--eval-every", cfg.eval_every, "Steps between evaluations");
    opts["eval-n"] = s->add_option("--eval-n", cfg.eval_generations, "Generations per validation prompt (mean@n)");
    opts["lr"] = s->add_option("--lr", cfg.learning_rate, "Step size");
    opts["momentum"] = s->add_option("--momentum", cfg.momentum, "Momentum coefficient");
    opts["temperature"] = s->add_option("--temperature", cfg.temperature, "Policy temperature");
    opts["sequence"] = s->add_flag("--sequence", cfg.space.sequence, "4-token answers after a thinking phase");
    opts["n-tasks"] = s->add_option("--n-tasks", cfg.n_tasks, "Prompt pool size");
    opts["holdout"] = s->add_option("--holdout", cfg.holdout, "Validation prompts");
    opts["hard-fraction"] = s->add_option("--hard-fraction", cfg.hard_fraction, "Share of hard-tier prompts");
    opts["k"] = s->add_option("--k", cfg.preset.k, "Off-policyness bound of the preset's scheduler");
    opts["token-cost"] = s->add_option("--token-cost", cfg.token_cost, "Compute per generated token");
    opts["step-cost"] = s->add_option("--step-cost", cfg.step_cost, "Compute per optimizer step");
    opts["seed"] = s->add_option("--seed", cfg.seed, "Run seed")->envname("SCALERL_SEED");
    s->add_option("--curve", curve_path, "Write the training curve CSV here");
    s->add_option("--metrics", metrics_path, "Write the metrics CSV here");
    s->add_option("--manifest", manifest_path, "Write the run manifest JSON here");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    toy::RunConfig c;
    if (!run_config.empty()) c = toy::run_config_from_json(read_json(run_config));
    auto set = [&](const char* name, auto apply) {
      if (given(opts.at(name)) || run_config.empty()) apply();
    };
    set("preset", [&] {
      const std::size_t k = c.preset.k;
      c.preset = toy::RecipePreset::make(toy::parse_preset(preset));
      if (!run_config.empty()) c.preset.k = k;
    });
    set("k", [&] { if (given(opts.at("k"))) c.preset.k = cfg.preset.k; });
    set("steps", [&] { c.max_steps = cfg.max_steps; });
    set("eval-every", [&] { c.eval_every = cfg.eval_every; });
    set("eval-n", [&] { c.eval_generations = cfg.eval_generations; });
    set("lr", [&] { c.learning_rate = cfg.learning_rate; });
    set("momentum", [&] { c.momentum = cfg.momentum; });
    set("temperature", [&] { c.temperature = cfg.temperature; });
    set("sequence", [&] { c.space.sequence = cfg.space.sequence; });
    set("n-tasks", [&] { c.n_tasks = cfg.n_tasks; });
    set("holdout", [&] { c.holdout = cfg.holdout; });
    set("hard-fraction", [&] { c.hard_fraction = cfg.hard_fraction; });
    set("token-cost", [&] { c.token_cost = cfg.token_cost; });
    set("step-cost", [&] { c.step_cost = cfg.step_cost; });
    set("seed", [&] { c.seed = cfg.seed; });
    c.validate();

    toy::Trainer trainer(c);
    const auto a = trainer.run();
    const auto manifest = toy::run_manifest(c, a);
    if (!curve_path.empty()) {
      std::ostringstream os;
      write_training_curve(os, a.curve);
      write_file(curve_path, os.str());
    }
    if (!metrics_path.empty()) {
      std::ostringstream os;
      toy::write_metrics_csv(os, a);
      write_file(metrics_path, os.str());
    }
    if (!manifest_path.empty()) write_file(manifest_path, pretty(manifest));
    if (g.json) {
      out << pretty(manifest);
    } else {
      out << "preset   " << toy::to_string(c.preset.id) << "\nsteps    " << a.steps << "\ncompute  " << fmt(a.compute)
          << "\nreward   " << (a.curve.points.empty() ? std::string("n/a") : fmt(a.curve.points.back().reward))
          << "\nexcluded " << a.excluded_prompts << '\n';
      if (!a.halt_reason.empty()) out << "halted: " << a.halt_reason << '\n';
    }
    return a.unstable ? kInstability : kOk;
  }
};

struct SynthCmd {
  SigmoidCurve curve{0.1, 0.61, 1.92, 2542.0};
  SynthSpec spec;
  bool linear = false;
  std::uint64_t seed = 0;
  std::string label = "synth", output;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("synth", "Sample a sigmoid curve, optionally with Gaussian noise");
    s->add_option("--r0", curve.r0, "Starting reward");
    s->add_option("--a", curve.a, "Asymptote");
    s->add_option("--b", curve.b, "Exponent");
    s->add_option("--cmid", curve.cmid, "Midpoint compute");
    s->add_option("--cmin", spec.compute_min, "First compute value");
    s->add_option("--cmax", spec.compute_max, "Last compute value");
    s->add_option("--n", spec.n_points, "Number of points");
    s->add_flag("--linear", linear, "Linearly spaced compute instead of log spaced");
    s->add_option("--noise", spec.noise_sigma, "Gaussian noise sigma (clipped to [0, 1])");
    s->add_option("--seed", seed, "Noise seed")->envname("SCALERL_SEED");
    s->add_option("--label", label, "Curve label");
    s->add_option("-o,--output", output, "Write the CSV here instead of stdout");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    spec.log_spaced = !linear;
    const auto tc = synthesize_curve(curve, spec, seed, label);
    std::ostringstream csv;
    write_training_curve(csv, tc);
    if (!output.empty()) write_file(output, csv.str());
    if (g.json) {
      json pts = json::array();
      for (const auto& p : tc.points) pts.push_back({{"compute", p.compute}, {"reward", p.reward}});
      out << pretty({{"label", tc.label}, {"points", pts}});
    } else if (output.empty()) {
      out << csv.str();
    }
    return kOk;
  }
};

struct ValidateCmd {
  std::string file, schema_name;
  bool list = false;

  void add(CLI::App& app, std::function<int()>& action, std::ostream& out, const Globals& g) {
    auto* s = app.add_subcommand("validate", "Check a training curve CSV, or a JSON file against a shipped schema");
    s->add_option("file", file, "CSV or JSON file");
    s->add_option("--schema", schema_name, "Schema for JSON input (see --list-schemas)");
    s->add_flag("--list-schemas", list, "Print the shipped schema names");
    s->callback([this, &action, &out, &g] { action = [this, &out, &g] { return exec(out, g); }; });
  }

  int exec(std::ostream& out, const Globals& g) {
    if (list) {
      for (const auto& n : schema_names()) out << n << '\n';
      return kOk;
    }
    if (file.empty()) throw InputError("validate needs a file");
    json report{{"file", file}, {"errors", json::array()}};
    if (fs::path(file).extension() == ".json") {
      if (schema_name.empty()) throw InputError("JSON input needs --schema (one of the names from --list-schemas)");
      schema(schema_name);
      report["kind"] = schema_name;
      try {
        for (const auto& e : check_schema(json::parse(read_file(file)), schema_name)) report["errors"].push_back(e);
      } catch (const json::parse_error& e) {
        report["errors"].push_back(e.what());
      }
    } else {
      report["kind"] = "curve";
      try {
        const auto c = load_curve(file);
        report["points"] = c.points.size();
      } catch (const InputError& e) {
        report["errors"].push_back(e.what());
      }
    }
    const bool ok = report["errors"].empty();
    report["valid"] = ok;
    if (g.json) {
      out << pretty(report);
    } else if (ok) {
      out << "ok " << file << '\n';
    } else {
      for (const auto& e : report["errors"]) out << file << ": " << e.get<std::string>() << '\n';
    }
    return ok ? kOk : kInputError;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compute-scaling laboratory for RL recipes: fit, extrapolate and compare reward-vs-compute curves, "
               "simulate generator/trainer schedules and train toy RL runs.",
               "scalerl"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML/INI file of option values, [subcommand] sections; flags > config > defaults");
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.footer(
      "Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 instability halt.\n"
      "Seeds: --seed, then the config file, then SCALERL_SEED, then 0.");
  Globals g;
  app.add_flag("--json", g.json, "Print machine-readable JSON on stdout");

  std::function<int()> action;
  FitCmd fit;
  ExtrapolateCmd extrap;
  CompareCmd compare;
  EfficiencyCmd eff;
  SimulateCmd simulate;
  TrainCmd train;
  SynthCmd synth;
  ValidateCmd validate;
  fit.add(app, action, out, g);
  extrap.add(app, action, out, g);
  compare.add(app, action, out, g);
  eff.add(app, action, out, g);
  simulate.add(app, action, out, g);
  train.add(app, action, out, g);
  synth.add(app, action, out, g);
  validate.add(app, action, out, g);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }
  try {
    return action ? action() : kInputError;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kNumericFailure;
  }
}

}  // namespace scalerl::cli
