#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cli/commands.hpp"
#include "cli/schema.hpp"
#include "scalerl/curve_io.hpp"
#include "scalerl/scaling_law.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = scalerl::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("scalerl-cli-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void put(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

void require_schema(const std::string& text, const std::string& name) {
  const auto errs = scalerl::cli::check_schema(json::parse(text), name);
  for (const auto& e : errs) MESSAGE(e);
  REQUIRE(errs.empty());
}

// Noise-free curve written directly from the oracle formula.
void oracle_csv(const std::string& path, double r0, double a, double b, double cmid, double lo, double hi, int n) {
  const auto tc = testing::oracle_curve(r0, a, b, cmid, lo, hi, n);
  std::ofstream f(path);
  scalerl::write_training_curve(f, tc);
}

}  // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"fit", "--help"}).code == 0);
  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  CHECK(cli({"fit"}).code == 2);
  CHECK(cli({"synth", "--nope"}).code == 2);
  CHECK(cli({"fit", "x.csv", "--model", "cubic"}).code == 2);
  CHECK(cli({"fit", "/nonexistent/x.csv"}).code == 2);
  const auto help = cli({"--help"}).out;
  CHECK(help.find("Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 instability halt") != std::string::npos);
  CHECK(help.find("flags > config > defaults") != std::string::npos);
  CHECK(cli({"train", "--help"}).out.find("[0.01]") != std::string::npos);
}

TEST_CASE("synth without noise lies on the sigmoid") {
  const auto r = cli({"synth", "--r0", "0.1", "--a", "0.61", "--b", "1.92", "--cmid", "2542", "--n", "40"});
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  const auto tc = scalerl::read_training_curve(in);
  REQUIRE(tc.points.size() == 40);
  CHECK(tc.points.front().compute == doctest::Approx(1500.0).epsilon(1e-12));
  CHECK(tc.points.back().compute == doctest::Approx(16000.0).epsilon(1e-12));
  for (const auto& p : tc.points) {
    CHECK(p.reward == doctest::Approx(testing::sigmoid_oracle(0.1, 0.61, 1.92, 2542.0, p.compute)).epsilon(1e-12));
  }
  require_schema(cli({"synth", "--json", "--n", "5"}).out, "curve");
  CHECK(cli({"synth", "--a", "1.5"}).code == 2);
}

TEST_CASE("synth is reproducible per seed and honours SCALERL_SEED") {
  TempDir d;
  REQUIRE(cli({"synth", "--noise", "0.02", "--seed", "5", "-o", d / "a.csv"}).code == 0);
  REQUIRE(cli({"synth", "--noise", "0.02", "--seed", "5", "-o", d / "b.csv"}).code == 0);
  REQUIRE(cli({"synth", "--noise", "0.02", "--seed", "6", "-o", d / "c.csv"}).code == 0);
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
  CHECK(slurp(d / "a.csv") != slurp(d / "c.csv"));

  ::setenv("SCALERL_SEED", "5", 1);
  const auto env = cli({"synth", "--noise", "0.02"}).out;
  const auto flag = cli({"synth", "--noise", "0.02", "--seed", "6"}).out;
  ::unsetenv("SCALERL_SEED");
  CHECK(env == slurp(d / "a.csv"));
  CHECK(flag == slurp(d / "c.csv"));
}

TEST_CASE("config file sits between flags and defaults") {
  TempDir d;
  put(d / "cfg.toml", "json = true\n[synth]\nn = 4\nnoise = 0.05\nseed = 3\n");
  const auto from_cfg = cli({"--config", d / "cfg.toml", "synth"});
  REQUIRE(from_cfg.code == 0);
  const auto j = json::parse(from_cfg.out);
  CHECK(j["points"].size() == 4);
  CHECK(from_cfg.out == cli({"synth", "--json", "--n", "4", "--noise", "0.05", "--seed", "3"}).out);
  const auto flag_wins = json::parse(cli({"--config", d / "cfg.toml", "synth", "--n", "6"}).out);
  CHECK(flag_wins["points"].size() == 6);
  ::setenv("SCALERL_SEED", "99", 1);
  CHECK(cli({"--config", d / "cfg.toml", "synth"}).out == from_cfg.out);
  ::unsetenv("SCALERL_SEED");
}

TEST_CASE("fit recovers synth parameters and writes schema-valid JSON") {
  TempDir d;
  REQUIRE(cli({"synth", "--r0", "0.1", "--a", "0.61", "--b", "1.92", "--cmid", "2542", "--n", "75", "-o", d / "s.csv"}).code == 0);
  const auto r = cli({"--json", "fit", d / "s.csv", "-o", d / "fit.json"});
  REQUIRE(r.code == 0);
  require_schema(r.out, "fit");
  CHECK(slurp(d / "fit.json") == r.out);
  const auto j = json::parse(r.out);
  CHECK(j["model"] == "sigmoid");
  CHECK(std::abs(j["A"].get<double>() - 0.61) <= 0.005);
  CHECK(std::abs(j["B"].get<double>() - 1.92) <= 0.2);
  CHECK(std::abs(j["Cmid"].get<double>() - 2542.0) / 2542.0 < 0.05);

  const auto pl = cli({"fit", d / "s.csv", "--model", "powerlaw", "--json"});
  REQUIRE(pl.code == 0);
  require_schema(pl.out, "fit");
  CHECK(json::parse(pl.out)["model"] == "powerlaw");
}

TEST_CASE("fit input errors") {
  TempDir d;
  put(d / "empty.csv", "");
  auto r = cli({"fit", d / "empty.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("no points in window") != std::string::npos);

  put(d / "header.csv", "compute,reward\n");
  r = cli({"fit", d / "header.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("no points in window") != std::string::npos);

  put(d / "early.csv", "compute,reward\n10,0.2\n20,0.3\n");
  CHECK(cli({"fit", d / "early.csv"}).err.find("no points in window") != std::string::npos);

  put(d / "over.csv", "compute,reward\n2000,0.5\n3000,1.2\n4000,0.6\n5000,1.5\n");
  r = cli({"fit", d / "over.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("line(s) 3 5") != std::string::npos);

  put(d / "cols.csv", "compute,reward\n2000,0.5\n3000,x\n");
  r = cli({"fit", d / "cols.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK(r.err.find("column 2") != std::string::npos);
}

TEST_CASE("fit plot: solid over the window, dashed beyond, data in comments") {
  TempDir d;
  REQUIRE(cli({"synth", "--n", "30", "--cmax", "40000", "-o", d / "s.csv"}).code == 0);
  const auto plain = cli({"--json", "fit", d / "s.csv", "--window-max", "10000"});
  const auto plotted = cli({"--json", "fit", d / "s.csv", "--window-max", "10000", "--plot", d / "p.svg"});
  REQUIRE(plotted.code == 0);
  CHECK(plain.out == plotted.out);
  const auto svg = slurp(d / "p.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("class=\"fit\"") != std::string::npos);
  const auto dashed = svg.find("class=\"extrapolation\"");
  REQUIRE(dashed != std::string::npos);
  CHECK(svg.find("stroke-dasharray", dashed) != std::string::npos);
  CHECK(svg.find("stroke-dasharray") > svg.find("class=\"fit\""));
  std::istringstream in(slurp(d / "s.csv"));
  const auto tc = scalerl::read_training_curve(in);
  for (const auto& p : tc.points) {
    CHECK(svg.find(scalerl::format_double(p.compute) + "," + scalerl::format_double(p.reward)) != std::string::npos);
  }
  const auto c0 = svg.find("<!--");
  CHECK(svg.find("--", c0 + 4) == svg.find("-->", c0));

  // whole-range fit: nothing left to extrapolate
  REQUIRE(cli({"fit", d / "s.csv", "--plot", d / "q.svg"}).code == 0);
  CHECK(slurp(d / "q.svg").find("class=\"extrapolation\"") == std::string::npos);
  REQUIRE(cli({"fit", d / "s.csv", "--plot", d / "r.svg", "--plot-to", "1e6"}).code == 0);
  CHECK(slurp(d / "r.svg").find("class=\"extrapolation\"") != std::string::npos);
}

TEST_CASE("extrapolate from a fit JSON or a CSV") {
  TempDir d;
  REQUIRE(cli({"synth", "-o", d / "s.csv"}).code == 0);
  REQUIRE(cli({"fit", d / "s.csv", "-o", d / "fit.json"}).code == 0);
  const auto fit = scalerl::fit_result_from_json(json::parse(slurp(d / "fit.json")));
  const auto r = cli({"--json", "extrapolate", d / "fit.json", "--to", "20000,1e6"});
  REQUIRE(r.code == 0);
  require_schema(r.out, "extrapolate");
  const auto j = json::parse(r.out);
  REQUIRE(j["predictions"].size() == 2);
  CHECK(j["predictions"][0]["reward"].get<double>() == scalerl::predict(fit, 20000.0));
  CHECK_FALSE(j["predictions"][0]["low_confidence"].get<bool>());
  CHECK(j["predictions"][1]["low_confidence"].get<bool>());
  const auto from_csv = cli({"--json", "extrapolate", d / "s.csv", "--to", "20000,1e6"});
  CHECK(json::parse(from_csv.out)["predictions"] == j["predictions"]);
  CHECK(cli({"extrapolate", d / "fit.json"}).code == 2);
}

TEST_CASE("compare: shared asymptote ranks by B, a wide gap is asymptote dominance") {
  TempDir d;
  oracle_csv(d / "fast.csv", 0.1, 0.61, 2.4, 2542.0, 1500.0, 16000.0, 60);
  oracle_csv(d / "slow.csv", 0.1, 0.61, 1.5, 2542.0, 1500.0, 16000.0, 60);
  oracle_csv(d / "high.csv", 0.1, 0.71, 1.92, 2542.0, 1500.0, 16000.0, 60);

  CHECK(cli({"compare", d / "fast.csv"}).code == 2);

  auto r = cli({"--json", "compare", d / "slow.csv", d / "fast.csv"});
  REQUIRE(r.code == 0);
  require_schema(r.out, "compare");
  auto j = json::parse(r.out);
  REQUIRE(j["ranking"].size() == 2);
  CHECK(j["ranking"][0]["label"] == "fast");
  CHECK(j["ranking"][1]["label"] == "slow");
  CHECK_FALSE(j["ranking"][0]["shared_A"].is_null());
  CHECK(j["pairs"][0]["shared"].get<bool>());
  CHECK(j["pairs"][0]["verdict"] == "second_more_efficient");

  r = cli({"--json", "compare", d / "high.csv", d / "slow.csv", d / "fast.csv"});
  REQUIRE(r.code == 0);
  require_schema(r.out, "compare");
  j = json::parse(r.out);
  CHECK(j["ranking"][0]["label"] == "high");
  CHECK(j["ranking"][0]["shared_A"].is_null());
  CHECK(j["pairs"][0]["first"] == "high");
  CHECK(j["pairs"][0]["verdict"] == "first_higher_asymptote");
  CHECK(j["pairs"][1]["verdict"] == "first_higher_asymptote");

  const auto text = cli({"compare", d / "high.csv", d / "fast.csv"}).out;
  CHECK(text.find("Cmid") != std::string::npos);
  CHECK(text.find("high vs fast: first_higher_asymptote") != std::string::npos);
}

TEST_CASE("efficiency-view on exact data has slope B") {
  TempDir d;
  oracle_csv(d / "s.csv", 0.1, 0.61, 1.92, 2542.0, 200.0, 50000.0, 80);
  const auto r = cli({"--json", "efficiency-view", d / "s.csv", "--curve-r0", "0.1", "--curve-a", "0.61", "--curve-b",
                      "1.92", "--curve-cmid", "2542"});
  REQUIRE(r.code == 0);
  require_schema(r.out, "efficiency");
  const auto j = json::parse(r.out);
  CHECK(std::abs(j["slope"].get<double>() - 1.92) < 1e-6);
  CHECK(j["points"].size() == 80);
  CHECK(cli({"efficiency-view", d / "s.csv", "--curve-a", "0.61"}).code == 2);

  REQUIRE(cli({"fit", d / "s.csv", "-o", d / "fit.json"}).code == 0);
  const auto via_fit = json::parse(cli({"--json", "efficiency-view", d / "s.csv", "--fit", d / "fit.json"}).out);
  const auto fitted = json::parse(slurp(d / "fit.json"));
  CHECK(via_fit["curve"]["B"] == fitted["B"]);
}

TEST_CASE("simulate: pipeline k = 8 keeps lag within 8") {
  const auto r = cli({"--json", "simulate", "--policy", "pipeline", "--k", "8"});
  REQUIRE(r.code == 0);
  require_schema(r.out, "simulate");
  const auto j = json::parse(r.out);
  CHECK(j["metrics"]["max_lag"].get<std::size_t>() <= 8);
  CHECK(j["scenario"]["policy"]["k"] == 8);
  CHECK_FALSE(j["metrics"]["deadlock"].get<bool>());

  for (const auto& extra : std::vector<std::vector<std::string>>{
           {"--generators", "3", "--tokens-lo", "50", "--tokens-hi", "900", "--latency", "0.5"},
           {"--batch", "1", "--update", "2.5"}}) {
    std::vector<std::string> args{"--json", "simulate", "--policy", "pipeline", "--k", "2", "--seed", "4"};
    args.insert(args.end(), extra.begin(), extra.end());
    CHECK(json::parse(cli(args).out)["metrics"]["max_lag"].get<std::size_t>() <= 2);
  }
  CHECK(cli({"simulate", "--k", "zero"}).code == 2);
  CHECK(cli({"simulate", "--k", "0"}).code == 2);
  CHECK(cli({"simulate", "--policy", "impala"}).code == 2);
}

TEST_CASE("simulate: scenario file, flag overrides, trace and comparison") {
  TempDir d;
  put(d / "sc.json", R"({"workers": {"n_generators": 2, "batch_completions": 2}, "policy": {"kind": "ppo_offpolicy", "k": 2},
                         "horizon": 60, "seed": 3})");
  const auto base = json::parse(cli({"--json", "simulate", "--scenario", d / "sc.json"}).out);
  CHECK(base["scenario"]["policy"]["kind"] == "ppo");
  CHECK(base["scenario"]["workers"]["n_generators"] == 2);
  CHECK(base["scenario"]["horizon"] == 60.0);
  const auto over = json::parse(cli({"--json", "simulate", "--scenario", d / "sc.json", "--policy", "pipeline"}).out);
  CHECK(over["scenario"]["policy"]["kind"] == "pipeline");
  CHECK(over["scenario"]["workers"]["n_generators"] == 2);
  put(d / "bad.json", R"({"workers": {"gpus": 2}})");
  CHECK(cli({"simulate", "--scenario", d / "bad.json"}).code == 2);

  REQUIRE(cli({"simulate", "--horizon", "30", "--trace", d / "t.csv"}).code == 0);
  const auto trace = slurp(d / "t.csv");
  CHECK(trace.rfind("time,worker,event,version,completion\n", 0) == 0);

  const auto cmp = cli({"--json", "simulate", "--compare-k", "1,4,inf", "--horizon", "300"});
  REQUIRE(cmp.code == 0);
  require_schema(cmp.out, "sim_compare");
  const auto j = json::parse(cmp.out);
  REQUIRE(j["rows"].size() == 3);
  CHECK(j["rows"][2]["k"] == "inf");
  for (const auto& row : j["rows"]) {
    CHECK(row["pipeline"]["generator_idle"].get<double>() <= row["ppo"]["generator_idle"].get<double>() + 1e-12);
  }
}

TEST_CASE("train: deterministic outputs, schema-valid manifest") {
  TempDir d;
  auto args = [&](const std::string& tag) {
    return std::vector<std::string>{"train",        "--preset",   "scalerl",         "--seed",
                                    "1",            "--steps",    "200",             "--n-tasks",
                                    "1000",         "--holdout",  "100",             "--eval-every",
                                    "50",           "--curve",    d / (tag + ".csv"), "--metrics",
                                    d / (tag + "_m.csv"), "--manifest", d / (tag + ".json")};
  };
  const auto a = cli(args("a"));
  const auto b = cli(args("b"));
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
  CHECK(slurp(d / "a_m.csv") == slurp(d / "b_m.csv"));
  CHECK(slurp(d / "a.json") == slurp(d / "b.json"));
  require_schema(slurp(d / "a.json"), "train");
  const auto m = json::parse(slurp(d / "a.json"));
  CHECK(m["steps"] == 200);
  CHECK(m["evaluations"] == 4);
  CHECK(m["config"]["seed"] == 1);
  CHECK(slurp(d / "a_m.csv").rfind("step,compute,entropy,trunc_rate,eff_batch,clip_frac\n", 0) == 0);
  CHECK(cli({"validate", d / "a.csv"}).code == 0);
  CHECK(cli({"train", "--lr", "-1"}).code == 2);
  CHECK(cli({"train", "--preset", "ppo"}).code == 2);
}

TEST_CASE("train: run-config file under flags, instability exits 4") {
  TempDir d;
  put(d / "rc.json", R"({"preset": "minimax", "n_tasks": 600, "holdout": 100, "max_steps": 40, "eval_every": 20,
                         "learning_rate": 0.0, "seed": 2})");
  const auto base = json::parse(cli({"--json", "train", "--run-config", d / "rc.json"}).out);
  CHECK(base["config"]["preset"]["preset"] == "minimax");
  CHECK(base["steps"] == 40);
  const auto over = json::parse(cli({"--json", "train", "--run-config", d / "rc.json", "--steps", "20"}).out);
  CHECK(over["steps"] == 20);
  CHECK(over["config"]["preset"]["preset"] == "minimax");

  put(d / "unstable.json", R"({"n_tasks": 600, "holdout": 100, "max_steps": 3000, "eval_every": 10,
                               "learning_rate": 0.0, "divergence_fraction": 1.0, "divergence_patience": 2})");
  const auto r = cli({"train", "--run-config", d / "unstable.json", "--manifest", d / "m.json"});
  CHECK(r.code == 4);
  const auto m = json::parse(slurp(d / "m.json"));
  CHECK(m["unstable"].get<bool>());
  CHECK(m["steps"].get<std::size_t>() < 3000);
}

TEST_CASE("validate: CSV checks, JSON schemas") {
  TempDir d;
  put(d / "ok.csv", "compute,reward\n1,0.2\n2,0.3\n");
  put(d / "bad.csv", "compute,reward\n1,0.2\n1,0.3\n");
  CHECK(cli({"validate", d / "ok.csv"}).code == 0);
  const auto bad = cli({"--json", "validate", d / "bad.csv"});
  CHECK(bad.code == 2);
  require_schema(bad.out, "validate");
  CHECK(bad.out.find("not strictly increasing") != std::string::npos);

  put(d / "fit.json", R"({"model": "sigmoid", "R0": 0.1, "A": 0.6, "B": 2, "Cmid": 3000, "D": null, "ssr": 0,
                          "window": [1500, 16000], "n_points": 10, "grid_best": false})");
  CHECK(cli({"validate", d / "fit.json", "--schema", "fit"}).code == 0);
  put(d / "nofit.json", R"({"model": "cubic", "A": "high", "extra": 1})");
  const auto r = cli({"validate", d / "nofit.json", "--schema", "fit"});
  CHECK(r.code == 2);
  CHECK(r.out.find("/model") != std::string::npos);
  CHECK(r.out.find("/A") != std::string::npos);
  CHECK(r.out.find("/extra: unexpected key") != std::string::npos);
  CHECK(r.out.find("missing required key 'B'") != std::string::npos);
  CHECK(cli({"validate", d / "fit.json"}).code == 2);
  CHECK(cli({"validate", d / "fit.json", "--schema", "nope"}).code == 2);
  put(d / "broken.json", "{");
  CHECK(cli({"validate", d / "broken.json", "--schema", "fit"}).code == 2);
  const auto names = cli({"validate", "--list-schemas"}).out;
  for (const char* n : {"fit", "compare", "simulate", "sim_metrics", "train", "extrapolate", "efficiency", "curve"}) {
    CHECK(names.find(n) != std::string::npos);
  }
}

TEST_CASE("seeded commands are byte-identical across invocations") {
  TempDir d;
  REQUIRE(cli({"synth", "--noise", "0.01", "--seed", "8", "-o", d / "s.csv"}).code == 0);
  oracle_csv(d / "o.csv", 0.1, 0.65, 1.7, 3000.0, 1500.0, 16000.0, 40);
  const std::vector<std::vector<std::string>> cmds = {
      {"synth", "--noise", "0.01", "--seed", "8"},
      {"--json", "fit", d / "s.csv"},
      {"--json", "compare", d / "s.csv", d / "o.csv"},
      {"--json", "extrapolate", d / "s.csv", "--to", "1e5"},
      {"--json", "efficiency-view", d / "s.csv"},
      {"--json", "simulate", "--seed", "3", "--tokens-lo", "10", "--tokens-hi", "500"},
      {"--json", "train", "--seed", "3", "--steps", "60", "--n-tasks", "600", "--holdout", "100", "--eval-every", "20"},
  };
  for (const auto& c : cmds) {
    const auto first = cli(c);
    REQUIRE(first.code == 0);
    CHECK(first.out == cli(c).out);
  }
}
