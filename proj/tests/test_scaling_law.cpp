#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "scalerl/curve_io.hpp"
#include "scalerl/error.hpp"
#include "scalerl/scaling_law.hpp"
#include "support.hpp"

using namespace scalerl;
using testing::oracle_curve;
using testing::sigmoid_oracle;

namespace {

const SigmoidCurve kLarge{0.1, 0.610, 1.92, 2542.0};

FitConfig small_grid() {
  FitConfig cfg;
  cfg.a_min = 0.55;
  cfg.a_max = 0.70;
  cfg.a_step = 0.01;
  cfg.cmid_min = 1000;
  cfg.cmid_max = 5000;
  cfg.cmid_count = 9;
  cfg.refine_cmid = false;
  return cfg;
}

}  // namespace

TEST_CASE("predict: midpoint and direct evaluation") {
  const SigmoidCurve c{0.2, 0.6, 1.0, 1000.0};
  CHECK(predict(c, 1000.0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(predict(c, 3000.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(predict(c, 0.0), InputError);
  CHECK_THROWS_AS(predict(c, -5.0), InputError);
}

TEST_CASE("predict agrees with an independent evaluator on a log grid") {
  for (int i = 0; i <= 60; ++i) {
    const double c = std::pow(10.0, 1.0 + 0.1 * i);
    CHECK(std::abs(predict(kLarge, c) - sigmoid_oracle(0.1, 0.61, 1.92, 2542, c)) < 1e-12);
  }
}

TEST_CASE("predict is increasing, bounded and saturates at A") {
  double prev = -1.0;
  for (int i = 0; i <= 200; ++i) {
    const double c = 100.0 * std::pow(1.05, i);
    const double r = predict(kLarge, c);
    CHECK(r > prev);
    CHECK(r < kLarge.a);
    prev = r;
  }
  CHECK(std::abs(predict(kLarge, 1e6 * kLarge.cmid) - kLarge.a) < 1e-6);
  CHECK(predict(kLarge, kLarge.cmid) == kLarge.r0 + (kLarge.a - kLarge.r0) / 2.0);
}

TEST_CASE("curve validation") {
  CHECK_NOTHROW(kLarge.validate());
  CHECK_THROWS_AS((SigmoidCurve{0.7, 0.6, 1, 1}).validate(), InputError);
  CHECK_THROWS_AS((SigmoidCurve{0.1, 0.6, 0, 1}).validate(), InputError);
  CHECK_THROWS_AS((SigmoidCurve{0.1, 0.6, 1, -1}).validate(), InputError);
  CHECK_THROWS_AS((SigmoidCurve{0.1, 1.2, 1, 1}).validate(), InputError);
}

TEST_CASE("noiseless recovery of the large-scale parameters") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 75);
  const auto fit = fit_sigmoid(data, FitConfig{});
  REQUIRE(fit.is_sigmoid());
  CHECK(std::abs(fit.sigmoid().a - 0.61) <= 0.005 + 1e-12);
  CHECK(std::abs(fit.sigmoid().b - 1.92) <= 0.02);
  CHECK(fit.ssr < 1e-6);
  CHECK(fit.n_points == 75);
  CHECK(fit.grid_best);
}

TEST_CASE("noisy recovery stays within the asymptote margin") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 75, 0.01, 7);
  const auto fit = fit_sigmoid(data, FitConfig{});
  CHECK(std::abs(fit.sigmoid().a - 0.61) <= 0.02);
}

TEST_CASE("fit refusals") {
  TrainingCurve flat;
  for (int i = 0; i < 10; ++i) flat.points.push_back({2000.0 + 100 * i, 0.5, std::nullopt});
  CHECK_THROWS_AS(fit_sigmoid(flat, FitConfig{}), FitError);
  CHECK_THROWS_AS(fit_power_law(flat, FitConfig{}), FitError);

  TrainingCurve few;
  for (int i = 0; i < 3; ++i) few.points.push_back({2000.0 + 100 * i, 0.3 + 0.1 * i, std::nullopt});
  CHECK_THROWS_AS(fit_sigmoid(few, FitConfig{}), FitError);

  TrainingCurve empty;
  try {
    fit_sigmoid(empty, FitConfig{});
    FAIL("expected refusal");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("no points in window") != std::string::npos);
  }

  const auto high = oracle_curve(0.1, 0.9, 1.5, 2000, 1500, 16000, 30);
  try {
    fit_sigmoid(high, FitConfig{});
    FAIL("expected refusal");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("below the max observed reward") != std::string::npos);
  }
}

TEST_CASE("returned cell beats every other grid cell (exhaustive small grid)") {
  auto cfg = small_grid();
  const auto data = oracle_curve(0.1, 0.62, 1.7, 2600, 1500, 16000, 40, 0.01, 3);
  const auto fit = fit_sigmoid(data, cfg);
  const auto pts = window_points(data, cfg);
  // Brute force: for each cell scan B densely and R0 by closed form.
  for (double a : cfg.a_grid()) {
    for (double cmid : cfg.cmid_grid()) {
      double best = INFINITY;
      for (int k = 0; k <= 4000; ++k) {
        const double b = 0.05 + k * (8.0 - 0.05) / 4000;
        double su = 0, sp = 0;
        for (const auto& p : pts) {
          const double s = 1.0 / (1.0 + std::pow(cmid / p.compute, b));
          const double u = 1.0 - s;
          sp += u * (a * s - p.reward);
          su += u * u;
        }
        const double r0 = std::clamp(-sp / su, 0.0, a);
        double ssr = 0;
        for (const auto& p : pts) {
          const double e = sigmoid_oracle(r0, a, b, cmid, p.compute) - p.reward;
          ssr += e * e;
        }
        best = std::min(best, ssr);
      }
      CHECK(fit.ssr <= best + 1e-9);
    }
  }
}

TEST_CASE("grid fit beats random grid cells with the default grid") {
  const auto data = oracle_curve(0.05, 0.66, 2.2, 3200, 1500, 20000, 50, 0.01, 11);
  FitConfig cfg;
  cfg.refine_cmid = false;
  const auto fit = fit_sigmoid(data, cfg);
  const auto pts = window_points(data, cfg);
  std::mt19937_64 rng(5);
  const auto ag = cfg.a_grid();
  const auto cg = cfg.cmid_grid();
  for (int trial = 0; trial < 100; ++trial) {
    const double a = ag[rng() % ag.size()];
    const double cmid = cg[rng() % cg.size()];
    auto one = cfg;
    one.a_min = one.a_max = a;
    one.cmid_min = one.cmid_max = cmid;
    one.cmid_count = 1;
    const auto cell = fit_sigmoid_fixed_a(data, one, a);
    CHECK(fit.ssr <= cell.ssr + 1e-12);
    CHECK(cell.ssr == doctest::Approx(sigmoid_ssr(pts, cell.sigmoid())).epsilon(1e-9));
  }
}

TEST_CASE("noiseless recovery over random parameter draws") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ua(0.50, 0.75), ub(1.0, 2.8), uc(1500, 6000), ur(0.0, 0.2);
  int ok = 0;
  const int draws = 24;
  for (int i = 0; i < draws; ++i) {
    const double a = std::round(ua(rng) / 0.005) * 0.005;
    const double b = ub(rng), cmid = uc(rng), r0 = ur(rng);
    const auto data = oracle_curve(r0, a, b, cmid, 1500, 40000, 75);
    const auto f = fit_sigmoid(data, FitConfig{}).sigmoid();
    const bool good = std::abs(f.a - a) <= 0.005 + 1e-9 && std::abs(f.b - b) <= 0.02 &&
                      std::abs(f.cmid - cmid) <= 403.0;
    ok += good;
  }
  CHECK(ok >= draws * 99 / 100);
}

TEST_CASE("window insensitivity on clean data") {
  const auto data = oracle_curve(0.1, 0.645, 1.7, 8000, 100, 100000, 120);
  FitConfig half;
  half.window_min = 1500;
  half.window_max = 50000;
  FitConfig all;
  all.window_min = 0;
  const auto f1 = fit_sigmoid(data, half);
  const auto f2 = fit_sigmoid(data, all);
  CHECK(std::abs(f1.sigmoid().a - f2.sigmoid().a) <= 0.005 + 1e-12);
}

TEST_CASE("serial and parallel fits are bit-identical") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 75, 0.01, 9);
  FitConfig s;
  s.exec = Exec::serial;
  FitConfig p;
  p.exec = Exec::parallel;
  const auto fs = fit_sigmoid(data, s);
  const auto fp = fit_sigmoid(data, p);
  CHECK(fs.ssr == fp.ssr);
  CHECK(fs.sigmoid().a == fp.sigmoid().a);
  CHECK(fs.sigmoid().b == fp.sigmoid().b);
  CHECK(fs.sigmoid().cmid == fp.sigmoid().cmid);
  CHECK(fs.sigmoid().r0 == fp.sigmoid().r0);
  const auto ps = fit_power_law(data, s);
  const auto pp = fit_power_law(data, p);
  CHECK(ps.ssr == pp.ssr);
  CHECK(ps.power_law().d == pp.power_law().d);
}

TEST_CASE("fits are deterministic") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 75, 0.01, 4);
  const auto a = to_json(fit_sigmoid(data, FitConfig{})).dump();
  const auto b = to_json(fit_sigmoid(data, FitConfig{})).dump();
  CHECK(a == b);
}

TEST_CASE("measured R0 policy pins R0 to the first in-window reward") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 40);
  FitConfig cfg;
  cfg.r0_policy = R0Policy::measured_at_window_start;
  const auto fit = fit_sigmoid(data, cfg);
  CHECK(fit.sigmoid().r0 == window_points(data, cfg).front().reward);
}

TEST_CASE("power law: noiseless recovery") {
  const double a = 0.65, b = 1.5;
  const double d = (a - 0.3) * std::pow(1500.0, b);
  TrainingCurve data;
  for (int i = 0; i < 60; ++i) {
    const double c = 1500.0 * std::pow(20.0, i / 59.0);
    data.points.push_back({c, a - d / std::pow(c, b), std::nullopt});
  }
  const auto fit = fit_power_law(data, FitConfig{});
  REQUIRE_FALSE(fit.is_sigmoid());
  CHECK(std::abs(fit.power_law().a - a) <= 0.005 + 1e-12);
  CHECK(std::abs(fit.power_law().b - b) <= 0.02);
  CHECK(fit.ssr < 1e-6);
}

TEST_CASE("power law overshoots the sigmoid asymptote on a low-compute window") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 75);
  FitConfig cfg;
  cfg.window_max = 4000;
  const auto pl = fit_power_law(data, cfg);
  const auto sg = fit_sigmoid(data, FitConfig{});
  CHECK(pl.asymptote() >= sg.asymptote() + 0.05);
}

TEST_CASE("efficiency transform") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 500, 50000, 60);
  const auto view = efficiency_transform(data, kLarge);
  CHECK(view.skipped == 0);
  const auto line = view.line();
  CHECK(std::abs(line.slope - 1.92) < 1e-9);
  CHECK(std::abs(line.intercept) < 1e-7);

  TrainingCurve with_bad = data;
  with_bad.points.push_back({60000, 0.61, std::nullopt});
  with_bad.points.push_back({70000, 0.7, std::nullopt});
  CHECK(efficiency_transform(with_bad, kLarge).skipped == 2);

  const auto r1 = oracle_curve(0.1, 0.61, 2.01, 2542, 500, 50000, 60);
  const auto r2 = oracle_curve(0.1, 0.61, 1.77, 2542, 500, 50000, 60);
  const auto s1 = efficiency_transform(r1, {0.1, 0.61, 2.01, 2542}).line().slope;
  const auto s2 = efficiency_transform(r2, {0.1, 0.61, 1.77, 2542}).line().slope;
  CHECK(s1 > s2);
}

TEST_CASE("extrapolation") {
  const auto full = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 75, 0.005, 21);
  TrainingCurve first_half;
  for (const auto& p : full.points) {
    if (p.compute <= 8000) first_half.points.push_back(p);
  }
  const auto fit = fit_sigmoid(first_half, FitConfig{});
  const double t[] = {16000.0, 3000.0, 100000.0};
  const auto ex = extrapolate(fit, t);
  CHECK(std::abs(ex[0].reward - sigmoid_oracle(0.1, 0.61, 1.92, 2542, 16000)) < 0.02);
  CHECK(ex[1].reward == predict(fit, 3000.0));
  CHECK_FALSE(ex[1].low_confidence);
  CHECK(ex[2].low_confidence);

  FitResult scout;
  scout.curve = SigmoidCurve{0.1, 0.645, 1.70, 5000.0};
  scout.window = {1500, 50000};
  const double tgt[] = {100000.0};
  const auto e = extrapolate(scout, tgt);
  CHECK(e[0].reward > 0.62);
  CHECK(e[0].reward < 0.645);
}

TEST_CASE("error margin") {
  std::vector<FitResult> fits(3);
  const double as[] = {0.600, 0.610, 0.615};
  for (int i = 0; i < 3; ++i) fits[i].curve = SigmoidCurve{0.1, as[i], 1.9, 2500};
  const auto m = error_margin(fits);
  CHECK(m.range_a == doctest::Approx(0.015).epsilon(1e-12));
  CHECK(m.range_b == 0.0);
  const double mean = (0.600 + 0.610 + 0.615) / 3;
  const double var = (std::pow(0.6 - mean, 2) + std::pow(0.61 - mean, 2) + std::pow(0.615 - mean, 2)) / 2;
  CHECK(m.std_a == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

  std::vector<FitResult> same(2, fits[0]);
  const auto z = error_margin(same);
  CHECK(z.range_a == 0.0);
  CHECK(z.std_a == 0.0);
  CHECK_THROWS_AS(error_margin(std::span<const FitResult>(fits.data(), 1)), InputError);
}

TEST_CASE("shared-asymptote comparison") {
  const auto r1 = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 60);
  const auto r2 = oracle_curve(0.1, 0.61, 1.70, 2542, 1500, 16000, 60);
  const auto cmp = compare_with_shared_asymptote(r1, r2, FitConfig{});
  CHECK(cmp.shared);
  CHECK(cmp.verdict == Verdict::first_more_efficient);
  REQUIRE(cmp.refit1.has_value());
  CHECK(cmp.refit1->sigmoid().a == cmp.refit2->sigmoid().a);

  const auto same = compare_with_shared_asymptote(r1, r1, FitConfig{});
  CHECK(same.verdict == Verdict::equally_efficient);
  CHECK(std::abs(same.refit1->sigmoid().b - same.refit2->sigmoid().b) < 1e-9);

  const auto hi = oracle_curve(0.1, 0.71, 1.92, 2542, 1500, 16000, 60);
  const auto dom = compare_with_shared_asymptote(r1, hi, FitConfig{});
  CHECK_FALSE(dom.shared);
  CHECK(dom.verdict == Verdict::second_higher_asymptote);
}

TEST_CASE("high-compute power law") {
  const auto pl = high_compute_power_law({0.0, 1.0, 1.0, 10.0});
  CHECK(pl.d == doctest::Approx(10.0).epsilon(1e-15));
  const auto big = high_compute_power_law(kLarge);
  CHECK(big.d == doctest::Approx(0.51 * std::pow(2542.0, 1.92)).epsilon(1e-12));
  // Gap is (A - R0) x^2 / (1 + x) with x = (Cmid / C)^B.
  for (double b : {1.0, 1.5, 2.5}) {
    const SigmoidCurve s{0.1, 0.61, b, 2542.0};
    const auto p = high_compute_power_law(s);
    for (int i = 0; i <= 40; ++i) {
      const double c = 100.0 * s.cmid * std::pow(1.3, i);
      const double x = std::pow(s.cmid / c, b);
      const double gap = predict(s, c) - predict(p, c);
      CHECK(gap == doctest::Approx(0.51 * x * x / (1 + x)).epsilon(1e-6));
      if (b >= 1.5) CHECK(std::abs(gap) < 1e-6);
    }
  }
}

TEST_CASE("synthesized curves") {
  SynthSpec spec;
  const auto clean = synthesize_curve(kLarge, spec, 1);
  REQUIRE(clean.points.size() == 75);
  CHECK(clean.points.front().compute == 1500.0);
  CHECK(clean.points.back().compute == 16000.0);
  for (const auto& p : clean.points) CHECK(p.reward == predict(kLarge, p.compute));
  spec.noise_sigma = 0.01;
  const auto n1 = synthesize_curve(kLarge, spec, 3);
  const auto n2 = synthesize_curve(kLarge, spec, 3);
  for (std::size_t i = 0; i < n1.points.size(); ++i) CHECK(n1.points[i].reward == n2.points[i].reward);
}

TEST_CASE("CSV parsing and diagnostics") {
  std::istringstream good("# comment\ncompute,reward,step\n100,0.2,1\n200,0.3,2\n");
  const auto tc = read_training_curve(good, "x");
  REQUIRE(tc.points.size() == 2);
  CHECK(tc.points[1].step.value() == 2);

  std::istringstream bad_header("c,r\n1,0.1\n");
  CHECK_THROWS_AS(read_training_curve(bad_header), InputError);

  std::istringstream bad_cell("compute,reward\n100,0.2\n200,abc\n");
  try {
    read_training_curve(bad_cell);
    FAIL("expected parse error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
  }

  std::istringstream out_of_range("compute,reward\n100,1.2\n200,0.3\n300,1.5\n");
  try {
    read_training_curve(out_of_range);
    FAIL("expected range error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }

  std::istringstream non_increasing("compute,reward\n100,0.2\n100,0.3\n");
  CHECK_THROWS_AS(read_training_curve(non_increasing), InputError);
}

TEST_CASE("CSV and JSON round trips") {
  const auto data = oracle_curve(0.1, 0.61, 1.92, 2542, 1500, 16000, 20, 0.01, 2);
  std::stringstream ss;
  write_training_curve(ss, data);
  const auto back = read_training_curve(ss);
  REQUIRE(back.points.size() == data.points.size());
  for (std::size_t i = 0; i < data.points.size(); ++i) {
    CHECK(back.points[i].compute == data.points[i].compute);
    CHECK(back.points[i].reward == data.points[i].reward);
  }
  const auto fit = fit_sigmoid(data, FitConfig{});
  const auto j = to_json(fit);
  CHECK(j["model"] == "sigmoid");
  CHECK(j["D"].is_null());
  const auto f2 = fit_result_from_json(j);
  CHECK(f2.sigmoid().a == fit.sigmoid().a);
  CHECK(f2.sigmoid().cmid == fit.sigmoid().cmid);
  CHECK(f2.ssr == fit.ssr);
}
