#include "fit_kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scalerl::detail {
namespace {

constexpr int kCoarseB = 32;

std::vector<double> coarse_b_grid(const InnerOptions& opt, double extra) {
  std::vector<double> grid;
  grid.reserve(kCoarseB + 1);
  const double lo = std::log(opt.b_min);
  const double hi = std::log(opt.b_max);
  for (int i = 0; i < kCoarseB; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / (kCoarseB - 1)));
  grid.front() = opt.b_min;
  grid.back() = opt.b_max;
  if (std::isfinite(extra) && extra > opt.b_min && extra < opt.b_max) {
    grid.insert(std::upper_bound(grid.begin(), grid.end(), extra), extra);
  }
  return grid;
}

// Coarse scan followed by golden section between the neighbours of the best
// coarse point. `objective` returns the SSR for a given B.
template <typename F>
double minimise_b(F&& objective, const InnerOptions& opt, double init) {
  const auto grid = coarse_b_grid(opt, init);
  std::size_t best = 0;
  double best_ssr = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = objective(grid[i]);
    if (s < best_ssr) {
      best_ssr = s;
      best = i;
    }
  }
  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  const double b = golden_section(objective, lo, hi, 1e-10 * (1.0 + grid[best]));
  return objective(b) <= best_ssr ? b : grid[best];
}

// Log-linear initialiser: log((A - R0)/(R - R0) - 1) = B log(Cmid / C),
// regressed through the origin over points with R0 < R < A.
double initial_b(const WindowData& data, double a, double cmid, double r0) {
  double sxy = 0.0;
  double sxx = 0.0;
  const double log_cmid = std::log(cmid);
  for (std::size_t i = 0; i < data.reward.size(); ++i) {
    const double r = data.reward[i];
    if (!(r > r0 && r < a)) continue;
    const double y = std::log((a - r0) / (r - r0) - 1.0);
    const double x = log_cmid - data.log_compute[i];
    sxy += x * y;
    sxx += x * x;
  }
  if (sxx <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / sxx;
}

}  // namespace

SigmoidCell fit_sigmoid_cell(const WindowData& data, double a, double cmid, const InnerOptions& opt) {
  SigmoidCell cell;
  if (!opt.fit_r0 && opt.fixed_r0 > a) return cell;
  const std::size_t n = data.reward.size();
  const double log_cmid = std::log(cmid);

  // Returns SSR and, when R0 is profiled, writes the optimal R0.
  auto evaluate = [&](double b, double* r0_out) {
    if (opt.fit_r0) {
      // R = R0 (1 - s) + A s is linear in R0.
      double q = 0.0, p = 0.0, uu = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(b * (log_cmid - data.log_compute[i])));
        const double u = 1.0 - s;
        const double e = a * s - data.reward[i];
        q += e * e;
        p += u * e;
        uu += u * u;
      }
      double r0 = uu > 0.0 ? -p / uu : 0.0;
      r0 = std::clamp(r0, 0.0, a);
      if (r0_out) *r0_out = r0;
      return std::max(0.0, q + 2.0 * r0 * p + r0 * r0 * uu);
    }
    const double r0 = opt.fixed_r0;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(b * (log_cmid - data.log_compute[i])));
      const double e = r0 + (a - r0) * s - data.reward[i];
      ssr += e * e;
    }
    if (r0_out) *r0_out = r0;
    return ssr;
  };

  const double init = initial_b(data, a, cmid, opt.fit_r0 ? 0.0 : opt.fixed_r0);
  const double b = minimise_b([&](double x) { return evaluate(x, nullptr); }, opt, init);
  cell.b = b;
  cell.ssr = evaluate(b, &cell.r0);
  return cell;
}

PowerLawCell fit_power_law_cell(const WindowData& data, double a, const InnerOptions& opt) {
  PowerLawCell cell;
  const std::size_t n = data.reward.size();
  // Scale compute by the first in-window point so C^-B stays representable.
  const double log_ref = data.log_compute.front();

  auto evaluate = [&](double b, double* d_scaled) {
    double stt = 0.0, stx = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = std::exp(-b * (data.log_compute[i] - log_ref));
      const double t = a - data.reward[i];
      stt += t * t;
      stx += t * x;
      sxx += x * x;
    }
    const double d = std::max(0.0, stx / sxx);
    if (d_scaled) *d_scaled = d;
    return std::max(0.0, stt - 2.0 * d * stx + d * d * sxx);
  };

  const double b = minimise_b([&](double x) { return evaluate(x, nullptr); }, opt,
                              std::numeric_limits<double>::quiet_NaN());
  double d_scaled = 0.0;
  cell.ssr = evaluate(b, &d_scaled);
  cell.b = b;
  cell.d = d_scaled * std::exp(b * log_ref);
  return cell;
}

std::vector<SigmoidCell> sigmoid_grid(const WindowData& data, const std::vector<double>& a_grid,
                                      const std::vector<double>& cmid_grid, const InnerOptions& opt,
                                      Exec exec) {
  const std::size_t nc = cmid_grid.size();
  const long total = static_cast<long>(a_grid.size() * nc);
  std::vector<SigmoidCell> cells(static_cast<std::size_t>(total));
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (long idx = 0; idx < total; ++idx) {
      const auto i = static_cast<std::size_t>(idx);
      cells[i] = fit_sigmoid_cell(data, a_grid[i / nc], cmid_grid[i % nc], opt);
    }
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      cells[i] = fit_sigmoid_cell(data, a_grid[i / nc], cmid_grid[i % nc], opt);
    }
  }
  return cells;
}

namespace {

PolishedRow polish_row(const WindowData& data, double a, const std::vector<double>& cmid_grid,
                       const SigmoidCell* row, const InnerOptions& opt) {
  const std::size_t nc = cmid_grid.size();
  std::size_t ic = static_cast<std::size_t>(-1);
  for (std::size_t j = 0; j < nc; ++j) {
    if (!(row[j].ssr < std::numeric_limits<double>::infinity())) continue;
    if (ic == static_cast<std::size_t>(-1) || row[j].ssr < row[ic].ssr - 1e-12) ic = j;
  }
  PolishedRow out;
  if (ic == static_cast<std::size_t>(-1)) return out;
  out.cell = row[ic];
  out.cmid = cmid_grid[ic];
  if (nc < 2) return out;
  const double lo = cmid_grid[ic == 0 ? 0 : ic - 1];
  const double hi = cmid_grid[std::min(ic + 1, nc - 1)];
  auto objective = [&](double cmid) { return fit_sigmoid_cell(data, a, cmid, opt).ssr; };
  const double cmid = golden_section(objective, lo, hi, 1e-9 * (hi - lo));
  const auto polished = fit_sigmoid_cell(data, a, cmid, opt);
  if (polished.ssr < out.cell.ssr) {
    out.cell = polished;
    out.cmid = cmid;
  }
  return out;
}

}  // namespace

std::vector<PolishedRow> polish_rows(const WindowData& data, const std::vector<double>& a_grid,
                                     const std::vector<double>& cmid_grid, const std::vector<SigmoidCell>& cells,
                                     const InnerOptions& opt, Exec exec) {
  const std::size_t nc = cmid_grid.size();
  std::vector<PolishedRow> rows(a_grid.size());
  const long total = static_cast<long>(a_grid.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long idx = 0; idx < total; ++idx) {
      const auto i = static_cast<std::size_t>(idx);
      rows[i] = polish_row(data, a_grid[i], cmid_grid, cells.data() + i * nc, opt);
    }
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i] = polish_row(data, a_grid[i], cmid_grid, cells.data() + i * nc, opt);
    }
  }
  return rows;
}

std::vector<PowerLawCell> power_law_grid(const WindowData& data, const std::vector<double>& a_grid,
                                         const InnerOptions& opt, Exec exec) {
  const long total = static_cast<long>(a_grid.size());
  std::vector<PowerLawCell> cells(a_grid.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (long idx = 0; idx < total; ++idx) {
      const auto i = static_cast<std::size_t>(idx);
      cells[i] = fit_power_law_cell(data, a_grid[i], opt);
    }
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = fit_power_law_cell(data, a_grid[i], opt);
  }
  return cells;
}

}  // namespace scalerl::detail

namespace scalerl {

bool openmp_enabled() noexcept {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace scalerl
