#pragma once

// Sigmoidal reward-vs-compute law, its power-law comparator, and the grid
// fitters used to estimate and extrapolate both.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "scalerl/exec.hpp"

namespace scalerl {

/// R(C) = R0 + (A - R0) / (1 + (Cmid / C)^B)
struct SigmoidCurve {
  double r0 = 0.0;    // reward at the start of training
  double a = 1.0;     // asymptotic reward
  double b = 1.0;     // scaling exponent
  double cmid = 1.0;  // compute at which half of the gain is reached

  /// Throws InputError unless 0 <= r0 <= a <= 1, b > 0 and cmid > 0.
  void validate() const;
};

/// R(C) = A - D / C^B, meaningful only for C >= c0.
struct PowerLawCurve {
  double a = 1.0;
  double b = 1.0;
  double d = 1.0;
  double c0 = 0.0;

  void validate() const;
};

struct CurvePoint {
  double compute = 0.0;
  double reward = 0.0;
  std::optional<long> step;
};

/// Ordered evaluation series: compute strictly increasing, rewards in [0, 1].
struct TrainingCurve {
  std::string label;
  std::vector<CurvePoint> points;

  void validate() const;
  double max_compute() const;
};

enum class R0Policy {
  measured_at_window_start,  // pin R0 to the first in-window reward
  fitted,                    // least-squares R0 for every (A, Cmid, B)
};

struct FitConfig {
  double a_min = 0.450;
  double a_max = 0.800;
  double a_step = 0.005;
  double cmid_min = 100.0;
  double cmid_max = 40000.0;
  int cmid_count = 100;
  double window_min = 1500.0;
  double window_max = std::numeric_limits<double>::infinity();
  R0Policy r0_policy = R0Policy::fitted;
  double b_min = 0.05;
  double b_max = 8.0;
  // Continuous golden-section polish of Cmid inside the winning grid
  // interval. A is never moved off its grid.
  bool refine_cmid = true;
  // Upper end of the A grid for the power-law fitter. Power laws are not
  // bounded by the sigmoid's ceiling, so their grid extends to 1.
  double power_law_a_max = 1.0;
  Exec exec = Exec::parallel;

  void validate() const;
  std::vector<double> a_grid() const;
  std::vector<double> a_grid_power_law() const;
  std::vector<double> cmid_grid() const;
};

struct FitResult {
  std::variant<SigmoidCurve, PowerLawCurve> curve;
  double ssr = 0.0;
  std::size_t n_points = 0;
  std::pair<double, double> window{0.0, 0.0};  // compute range actually used
  bool grid_best = false;

  bool is_sigmoid() const { return std::holds_alternative<SigmoidCurve>(curve); }
  const SigmoidCurve& sigmoid() const { return std::get<SigmoidCurve>(curve); }
  const PowerLawCurve& power_law() const { return std::get<PowerLawCurve>(curve); }
  double asymptote() const;
  double exponent() const;
};

double predict(const SigmoidCurve& curve, double compute);
double predict(const PowerLawCurve& curve, double compute);
double predict(const FitResult& fit, double compute);

/// Points of `data` inside the configured window (compute > 0 always).
std::vector<CurvePoint> window_points(const TrainingCurve& data, const FitConfig& cfg);

/// Grid search over (A, Cmid) with a one-dimensional least-squares fit of B
/// in every cell. Ties within 1e-12 SSR resolve to the smaller A, then the
/// smaller Cmid. Refuses fewer than 4 in-window points, constant rewards and
/// an A grid lying entirely below the largest observed reward.
FitResult fit_sigmoid(const TrainingCurve& data, const FitConfig& cfg);

/// Same search for A - D / C^B: grid over A, inner fit of B with D profiled
/// out in closed form.
FitResult fit_power_law(const TrainingCurve& data, const FitConfig& cfg);

/// SSR of one sigmoid against the in-window points; used by tests and the
/// grid-optimality checks.
double sigmoid_ssr(std::span<const CurvePoint> points, const SigmoidCurve& curve);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept. Needs two distinct x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

struct EfficiencyView {
  std::vector<double> log_compute;
  std::vector<double> log_f;
  std::size_t skipped = 0;

  LineFit line() const { return fit_line(log_compute, log_f); }
};

/// Maps every point with R0 < R < A to (log C, log F(R)) where
/// F(R) = Cmid^B / ((A - R0) / (R - R0) - 1). For points on the curve
/// F(R) = C^B, so the transformed series is a line of slope B.
EfficiencyView efficiency_transform(const TrainingCurve& data, const SigmoidCurve& curve);

struct Extrapolation {
  double compute = 0.0;
  double reward = 0.0;
  bool low_confidence = false;  // target beyond 10x the fitted window
};

std::vector<Extrapolation> extrapolate(const FitResult& fit, std::span<const double> targets);

struct ErrorMargin {
  double range_a = 0.0;  // max - min
  double std_a = 0.0;    // sample standard deviation
  double range_b = 0.0;
  double std_b = 0.0;
};

ErrorMargin error_margin(std::span<const FitResult> fits);

enum class Verdict {
  first_more_efficient,
  second_more_efficient,
  equally_efficient,
  first_higher_asymptote,
  second_higher_asymptote,
};

const char* to_string(Verdict v);

struct SharedAsymptoteComparison {
  FitResult fit1;
  FitResult fit2;
  bool shared = false;           // |A1 - A2| <= margin
  double shared_a = 0.0;
  std::optional<FitResult> refit1;
  std::optional<FitResult> refit2;
  Verdict verdict = Verdict::equally_efficient;
};

/// Within the margin both runs are refit with A pinned to mean(A1, A2) and
/// the larger B wins; outside it the larger A dominates.
SharedAsymptoteComparison compare_with_shared_asymptote(const TrainingCurve& run1,
                                                        const TrainingCurve& run2,
                                                        const FitConfig& cfg,
                                                        double margin = 0.02);

/// Refit with A fixed to a single value.
FitResult fit_sigmoid_fixed_a(const TrainingCurve& data, const FitConfig& cfg, double a);

struct SynthSpec {
  double compute_min = 1500.0;
  double compute_max = 16000.0;
  std::size_t n_points = 75;
  bool log_spaced = true;
  double noise_sigma = 0.0;  // Gaussian, result clipped to [0, 1]
};

/// Seeded samples of `curve`; with zero noise every point lies on it exactly.
TrainingCurve synthesize_curve(const SigmoidCurve& curve, const SynthSpec& spec, unsigned long long seed,
                               const std::string& label = "synth");

/// The large-compute limit of the sigmoid: A - (A - R0) Cmid^B / C^B.
PowerLawCurve high_compute_power_law(const SigmoidCurve& curve);

}  // namespace scalerl
