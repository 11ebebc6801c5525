#pragma once

// Per-cell least-squares kernels behind the grid fitters. Every cell is
// independent, so the grid loop has a serial reference and an OpenMP version
// writing into per-cell slots; the reduction afterwards is ordered.

#include <cstddef>
#include <limits>
#include <vector>

#include "scalerl/exec.hpp"

namespace scalerl::detail {

struct WindowData {
  std::vector<double> compute;
  std::vector<double> log_compute;
  std::vector<double> reward;
};

struct InnerOptions {
  double b_min = 0.05;
  double b_max = 8.0;
  bool fit_r0 = true;
  double fixed_r0 = 0.0;  // used when fit_r0 is false
};

struct SigmoidCell {
  double ssr = std::numeric_limits<double>::infinity();
  double b = 0.0;
  double r0 = 0.0;
};

struct PowerLawCell {
  double ssr = std::numeric_limits<double>::infinity();
  double b = 0.0;
  double d = 0.0;
};

SigmoidCell fit_sigmoid_cell(const WindowData& data, double a, double cmid, const InnerOptions& opt);

PowerLawCell fit_power_law_cell(const WindowData& data, double a, const InnerOptions& opt);

/// Evaluates every (A, Cmid) cell; result index is ia * cmid.size() + ic.
std::vector<SigmoidCell> sigmoid_grid(const WindowData& data, const std::vector<double>& a_grid,
                                      const std::vector<double>& cmid_grid, const InnerOptions& opt,
                                      Exec exec);

struct PolishedRow {
  SigmoidCell cell;
  double cmid = 0.0;
};

/// For every A row, takes the row's best grid cell and golden-section
/// searches Cmid over the neighbouring grid interval. Rows with no finite
/// cell stay at infinite SSR.
std::vector<PolishedRow> polish_rows(const WindowData& data, const std::vector<double>& a_grid,
                                     const std::vector<double>& cmid_grid, const std::vector<SigmoidCell>& cells,
                                     const InnerOptions& opt, Exec exec);

std::vector<PowerLawCell> power_law_grid(const WindowData& data, const std::vector<double>& a_grid,
                                         const InnerOptions& opt, Exec exec);

/// Index of the smallest SSR; a later cell must beat the incumbent by more
/// than 1e-12 to replace it. Returns npos when every cell is infinite.
template <typename Cell>
std::size_t ordered_argmin(const std::vector<Cell>& cells) {
  constexpr double kTie = 1e-12;
  std::size_t best = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!(cells[i].ssr < std::numeric_limits<double>::infinity())) continue;
    if (best == static_cast<std::size_t>(-1) || cells[i].ssr < cells[best].ssr - kTie) best = i;
  }
  return best;
}

/// Golden-section minimisation of f on [lo, hi]; returns the abscissa.
template <typename F>
double golden_section(F&& f, double lo, double hi, double tol, int max_iter = 200) {
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = f(x1);
  double f2 = f(x2);
  for (int it = 0; it < max_iter && (hi - lo) > tol; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = f(x2);
    }
  }
  return f1 <= f2 ? x1 : x2;
}

}  // namespace scalerl::detail
