#include "scalerl/scaling_law.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "fit_kernels.hpp"
#include "scalerl/error.hpp"

namespace scalerl {
namespace {

double round_grid(double v) { return std::round(v * 1e12) / 1e12; }

std::vector<double> stepped_grid(double lo, double hi, double step) {
  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  grid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) grid.push_back(round_grid(lo + step * static_cast<double>(i)));
  return grid;
}

void check_fittable(const std::vector<CurvePoint>& pts, const FitConfig& cfg) {
  if (pts.empty()) {
    std::ostringstream os;
    os << "no points in window [" << cfg.window_min << ", " << cfg.window_max << "]";
    throw FitError(os.str());
  }
  if (pts.size() < 4) {
    std::ostringstream os;
    os << "too few points in window: " << pts.size() << " < 4";
    throw FitError(os.str());
  }
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](const auto& x, const auto& y) {
    return x.reward < y.reward;
  });
  if (hi->reward - lo->reward <= 0.0) throw FitError("degenerate input: all rewards in window are equal");
}

detail::WindowData make_window(const std::vector<CurvePoint>& pts) {
  detail::WindowData wd;
  for (const auto& p : pts) {
    wd.compute.push_back(p.compute);
    wd.log_compute.push_back(std::log(p.compute));
    wd.reward.push_back(p.reward);
  }
  return wd;
}

detail::InnerOptions inner_options(const FitConfig& cfg, const std::vector<CurvePoint>& pts) {
  detail::InnerOptions opt;
  opt.b_min = cfg.b_min;
  opt.b_max = cfg.b_max;
  opt.fit_r0 = cfg.r0_policy == R0Policy::fitted;
  opt.fixed_r0 = pts.front().reward;
  return opt;
}

FitResult fit_sigmoid_grid(const std::vector<CurvePoint>& pts, const FitConfig& cfg,
                           const std::vector<double>& a_grid) {
  const auto wd = make_window(pts);
  const auto opt = inner_options(cfg, pts);
  const auto cmid_grid = cfg.cmid_grid();
  const auto cells = detail::sigmoid_grid(wd, a_grid, cmid_grid, opt, cfg.exec);
  const std::size_t best = detail::ordered_argmin(cells);
  if (best == static_cast<std::size_t>(-1)) {
    throw FitError("no admissible grid cell: every candidate A lies below the pinned R0");
  }
  const std::size_t nc = cmid_grid.size();
  const double grid_ssr = cells[best].ssr;
  SigmoidCurve curve{cells[best].r0, a_grid[best / nc], cells[best].b, cmid_grid[best % nc]};
  double ssr = grid_ssr;

  if (cfg.refine_cmid) {
    const auto rows = detail::polish_rows(wd, a_grid, cmid_grid, cells, opt, cfg.exec);
    std::size_t pick = static_cast<std::size_t>(-1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!(rows[i].cell.ssr < std::numeric_limits<double>::infinity())) continue;
      if (pick == static_cast<std::size_t>(-1) || rows[i].cell.ssr < rows[pick].cell.ssr - 1e-12) pick = i;
    }
    if (pick != static_cast<std::size_t>(-1) && rows[pick].cell.ssr < ssr) {
      const auto& r = rows[pick];
      curve = SigmoidCurve{r.cell.r0, a_grid[pick], r.cell.b, r.cmid};
      ssr = r.cell.ssr;
    }
  }

  FitResult result;
  result.curve = curve;
  result.ssr = ssr;
  result.n_points = pts.size();
  result.window = {pts.front().compute, pts.back().compute};
  result.grid_best = ssr <= grid_ssr + 1e-12;
  return result;
}

}  // namespace

void SigmoidCurve::validate() const {
  if (!(r0 >= 0.0 && r0 <= a && a <= 1.0)) {
    std::ostringstream os;
    os << "sigmoid curve requires 0 <= R0 <= A <= 1 (R0=" << r0 << ", A=" << a << ")";
    throw InputError(os.str());
  }
  if (!(b > 0.0)) throw InputError("sigmoid curve requires B > 0");
  if (!(cmid > 0.0)) throw InputError("sigmoid curve requires Cmid > 0");
}

void PowerLawCurve::validate() const {
  if (!(b > 0.0)) throw InputError("power law requires B > 0");
  if (!(d >= 0.0)) throw InputError("power law requires D >= 0");
  if (!(c0 >= 0.0)) throw InputError("power law requires C0 >= 0");
}

void TrainingCurve::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.compute) || p.compute < 0.0) {
      throw InputError("point " + std::to_string(i) + ": compute must be finite and >= 0");
    }
    if (!(p.reward >= 0.0 && p.reward <= 1.0)) {
      throw InputError("point " + std::to_string(i) + ": reward outside [0, 1]");
    }
    if (i > 0 && !(p.compute > points[i - 1].compute)) {
      throw InputError("point " + std::to_string(i) + ": compute not strictly increasing");
    }
  }
}

double TrainingCurve::max_compute() const { return points.empty() ? 0.0 : points.back().compute; }

void FitConfig::validate() const {
  if (!(a_step > 0.0) || !(a_max >= a_min)) throw InputError("A grid must be non-empty with a positive step");
  if (!(a_min >= 0.0 && a_max <= 1.0)) throw InputError("A grid must lie inside [0, 1]");
  if (cmid_count < 1 || !(cmid_min > 0.0) || !(cmid_max >= cmid_min)) {
    throw InputError("Cmid grid must be non-empty and positive");
  }
  if (!(window_min >= 0.0)) throw InputError("fit window minimum must be >= 0");
  if (!(window_max > window_min)) throw InputError("fit window maximum must exceed its minimum");
  if (!(b_min > 0.0 && b_max > b_min)) throw InputError("B search range must satisfy 0 < b_min < b_max");
  if (!(power_law_a_max >= a_min && power_law_a_max <= 1.0)) {
    throw InputError("power-law A grid must end inside [A_min, 1]");
  }
}

std::vector<double> FitConfig::a_grid() const { return stepped_grid(a_min, a_max, a_step); }

std::vector<double> FitConfig::a_grid_power_law() const {
  return stepped_grid(a_min, power_law_a_max, a_step);
}

std::vector<double> FitConfig::cmid_grid() const {
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(cmid_count));
  if (cmid_count == 1) return {cmid_min};
  for (int i = 0; i < cmid_count; ++i) {
    grid.push_back(cmid_min + (cmid_max - cmid_min) * i / (cmid_count - 1));
  }
  return grid;
}

double FitResult::asymptote() const { return is_sigmoid() ? sigmoid().a : power_law().a; }

double FitResult::exponent() const { return is_sigmoid() ? sigmoid().b : power_law().b; }

double predict(const SigmoidCurve& curve, double compute) {
  if (!(compute > 0.0)) throw InputError("predict requires compute > 0");
  return curve.r0 + (curve.a - curve.r0) / (1.0 + std::pow(curve.cmid / compute, curve.b));
}

double predict(const PowerLawCurve& curve, double compute) {
  if (!(compute > 0.0)) throw InputError("predict requires compute > 0");
  return curve.a - curve.d / std::pow(compute, curve.b);
}

double predict(const FitResult& fit, double compute) {
  return std::visit([compute](const auto& c) { return predict(c, compute); }, fit.curve);
}

std::vector<CurvePoint> window_points(const TrainingCurve& data, const FitConfig& cfg) {
  std::vector<CurvePoint> out;
  for (const auto& p : data.points) {
    if (p.compute > 0.0 && p.compute >= cfg.window_min && p.compute <= cfg.window_max) out.push_back(p);
  }
  return out;
}

FitResult fit_sigmoid(const TrainingCurve& data, const FitConfig& cfg) {
  cfg.validate();
  data.validate();
  const auto pts = window_points(data, cfg);
  check_fittable(pts, cfg);
  const double max_r = std::max_element(pts.begin(), pts.end(), [](const auto& x, const auto& y) {
                         return x.reward < y.reward;
                       })->reward;
  if (cfg.a_max < max_r) {
    std::ostringstream os;
    os << "A grid [" << cfg.a_min << ", " << cfg.a_max << "] lies entirely below the max observed reward "
       << max_r << "; widen a_max";
    throw FitError(os.str());
  }
  return fit_sigmoid_grid(pts, cfg, cfg.a_grid());
}

FitResult fit_sigmoid_fixed_a(const TrainingCurve& data, const FitConfig& cfg, double a) {
  cfg.validate();
  data.validate();
  if (!(a >= 0.0 && a <= 1.0)) throw InputError("fixed A must lie in [0, 1]");
  const auto pts = window_points(data, cfg);
  check_fittable(pts, cfg);
  return fit_sigmoid_grid(pts, cfg, {a});
}

FitResult fit_power_law(const TrainingCurve& data, const FitConfig& cfg) {
  cfg.validate();
  data.validate();
  const auto pts = window_points(data, cfg);
  check_fittable(pts, cfg);
  const auto a_grid = cfg.a_grid_power_law();
  const double max_r = std::max_element(pts.begin(), pts.end(), [](const auto& x, const auto& y) {
                         return x.reward < y.reward;
                       })->reward;
  if (a_grid.back() < max_r) {
    throw FitError("power-law A grid lies entirely below the max observed reward");
  }
  const auto wd = make_window(pts);
  const auto opt = inner_options(cfg, pts);
  const auto cells = detail::power_law_grid(wd, a_grid, opt, cfg.exec);
  const std::size_t best = detail::ordered_argmin(cells);
  if (best == static_cast<std::size_t>(-1)) throw FitError("power-law fit found no admissible cell");

  FitResult result;
  result.curve = PowerLawCurve{a_grid[best], cells[best].b, cells[best].d, pts.front().compute};
  result.ssr = cells[best].ssr;
  result.n_points = pts.size();
  result.window = {pts.front().compute, pts.back().compute};
  result.grid_best = true;
  return result;
}

double sigmoid_ssr(std::span<const CurvePoint> points, const SigmoidCurve& curve) {
  double ssr = 0.0;
  for (const auto& p : points) {
    const double e = predict(curve, p.compute) - p.reward;
    ssr += e * e;
  }
  return ssr;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("line fit needs two or more (x, y) pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (!(sxx > 0.0)) throw NumericError("line fit needs two distinct x values");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

EfficiencyView efficiency_transform(const TrainingCurve& data, const SigmoidCurve& curve) {
  EfficiencyView view;
  const double gain = curve.a - curve.r0;
  const double log_num = curve.b * std::log(curve.cmid);
  for (const auto& p : data.points) {
    if (!(p.compute > 0.0) || !(p.reward > curve.r0 && p.reward < curve.a)) {
      ++view.skipped;
      continue;
    }
    const double denom = gain / (p.reward - curve.r0) - 1.0;
    if (!(denom > 0.0)) {
      ++view.skipped;
      continue;
    }
    view.log_compute.push_back(std::log(p.compute));
    view.log_f.push_back(log_num - std::log(denom));
  }
  return view;
}

std::vector<Extrapolation> extrapolate(const FitResult& fit, std::span<const double> targets) {
  std::vector<Extrapolation> out;
  out.reserve(targets.size());
  for (double c : targets) {
    out.push_back({c, predict(fit, c), c > 10.0 * fit.window.second});
  }
  return out;
}

ErrorMargin error_margin(std::span<const FitResult> fits) {
  if (fits.size() < 2) throw InputError("error margin needs at least two fits");
  auto spread = [&](auto get, double& range, double& sd) {
    std::vector<double> v;
    for (const auto& f : fits) v.push_back(get(f));
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    range = *hi - *lo;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  ErrorMargin m;
  spread([](const FitResult& f) { return f.asymptote(); }, m.range_a, m.std_a);
  spread([](const FitResult& f) { return f.exponent(); }, m.range_b, m.std_b);
  return m;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::first_more_efficient: return "first_more_efficient";
    case Verdict::second_more_efficient: return "second_more_efficient";
    case Verdict::equally_efficient: return "equally_efficient";
    case Verdict::first_higher_asymptote: return "first_higher_asymptote";
    case Verdict::second_higher_asymptote: return "second_higher_asymptote";
  }
  return "unknown";
}

SharedAsymptoteComparison compare_with_shared_asymptote(const TrainingCurve& run1, const TrainingCurve& run2,
                                                        const FitConfig& cfg, double margin) {
  constexpr double kBTie = 1e-6;
  SharedAsymptoteComparison cmp;
  cmp.fit1 = fit_sigmoid(run1, cfg);
  cmp.fit2 = fit_sigmoid(run2, cfg);
  const double a1 = cmp.fit1.asymptote();
  const double a2 = cmp.fit2.asymptote();
  if (std::abs(a1 - a2) <= margin + 1e-12) {
    cmp.shared = true;
    cmp.shared_a = 0.5 * (a1 + a2);
    cmp.refit1 = fit_sigmoid_fixed_a(run1, cfg, cmp.shared_a);
    cmp.refit2 = fit_sigmoid_fixed_a(run2, cfg, cmp.shared_a);
    const double b1 = cmp.refit1->exponent();
    const double b2 = cmp.refit2->exponent();
    if (std::abs(b1 - b2) <= kBTie) {
      cmp.verdict = Verdict::equally_efficient;
    } else {
      cmp.verdict = b1 > b2 ? Verdict::first_more_efficient : Verdict::second_more_efficient;
    }
  } else {
    cmp.verdict = a1 > a2 ? Verdict::first_higher_asymptote : Verdict::second_higher_asymptote;
  }
  return cmp;
}

PowerLawCurve high_compute_power_law(const SigmoidCurve& curve) {
  curve.validate();
  return PowerLawCurve{curve.a, curve.b, (curve.a - curve.r0) * std::pow(curve.cmid, curve.b), 0.0};
}

TrainingCurve synthesize_curve(const SigmoidCurve& curve, const SynthSpec& spec, unsigned long long seed,
                               const std::string& label) {
  curve.validate();
  if (!(spec.compute_min > 0.0 && spec.compute_max > spec.compute_min)) {
    throw InputError("synth compute range must satisfy 0 < min < max");
  }
  if (spec.n_points < 2) throw InputError("synth needs at least 2 points");
  if (!(spec.noise_sigma >= 0.0)) throw InputError("noise sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  TrainingCurve out;
  out.label = label;
  const double n1 = static_cast<double>(spec.n_points - 1);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    const double u = static_cast<double>(i) / n1;
    double c = spec.log_spaced
                   ? std::exp(std::log(spec.compute_min) + u * (std::log(spec.compute_max) - std::log(spec.compute_min)))
                   : spec.compute_min + u * (spec.compute_max - spec.compute_min);
    if (i == 0) c = spec.compute_min;
    if (i + 1 == spec.n_points) c = spec.compute_max;
    double r = predict(curve, c);
    if (spec.noise_sigma > 0.0) r = std::clamp(r + spec.noise_sigma * noise(rng), 0.0, 1.0);
    out.points.push_back({c, r, std::nullopt});
  }
  return out;
}

}  // namespace scalerl
