#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <random>
#include <vector>

#include "scalerl/rl_objectives.hpp"
#include "scalerl/scaling_law.hpp"

namespace testing {

// Written independently of the library: logistic form in log-compute.
inline double sigmoid_oracle(double r0, double a, double b, double cmid, double c) {
  const double z = b * (std::log(c) - std::log(cmid));
  return r0 + (a - r0) / (1.0 + std::exp(-z));
}

inline scalerl::TrainingCurve oracle_curve(double r0, double a, double b, double cmid, double lo, double hi,
                                           int n, double sigma = 0.0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sigma > 0.0 ? sigma : 1.0);
  scalerl::TrainingCurve tc;
  tc.label = "oracle";
  for (int i = 0; i < n; ++i) {
    const double c = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
    double r = sigmoid_oracle(r0, a, b, cmid, c);
    if (sigma > 0.0) r = std::min(1.0, std::max(0.0, r + nd(rng)));
    tc.points.push_back({c, r, std::nullopt});
  }
  return tc;
}

inline scalerl::rl::Batch random_batch(std::mt19937_64& rng, int prompts, int group, int max_tokens,
                                       double drift = 0.3, bool ragged = true) {
  std::uniform_real_distribution<double> lp(-3.0, -0.05);
  std::uniform_real_distribution<double> dd(-drift, drift);
  std::uniform_int_distribution<int> len(1, max_tokens);
  std::bernoulli_distribution coin(0.5);
  scalerl::rl::Batch batch;
  for (int p = 0; p < prompts; ++p) {
    scalerl::rl::RolloutGroup g;
    g.prompt_id = "p" + std::to_string(p);
    for (int i = 0; i < group; ++i) {
      scalerl::rl::CompletionRecord c;
      const int n = ragged ? len(rng) : max_tokens;
      for (int t = 0; t < n; ++t) {
        const double gen = lp(rng);
        c.logp_gen.push_back(gen);
        c.logp_train.push_back(std::min(-1e-3, gen + dd(rng)));
      }
      c.reward = coin(rng) ? 1.0 : -1.0;
      g.completions.push_back(std::move(c));
    }
    batch.push_back(std::move(g));
  }
  return batch;
}

// Nudges trainer log-probs away from clip boundaries so central
// differences never straddle a kink.
inline void avoid_kinks(scalerl::rl::Batch& batch, const scalerl::rl::LossSpec& spec) {
  const auto& cl = spec.clip;
  const double token_edges[] = {1 - cl.eps_minus, 1 + cl.eps_minus, 1 + cl.eps_plus, cl.eps_max_cispo};
  const double seq_edges[] = {1 - cl.gspo_lower, 1 + cl.gspo_upper};
  for (auto& g : batch) {
    for (auto& c : g.completions) {
      for (std::size_t t = 0; t < c.token_count(); ++t) {
        for (int guard = 0; guard < 8; ++guard) {
          const double rho = std::exp(c.logp_train[t] - c.logp_gen[t]);
          bool near = false;
          for (double e : token_edges) near = near || std::abs(rho - e) < 1e-4;
          if (!near) break;
          c.logp_train[t] -= 3e-4;
        }
      }
      for (int guard = 0; guard < 8; ++guard) {
        const auto seq = scalerl::rl::is_ratio_sequence(c, spec.gspo_ratio);
        bool near = false;
        for (double e : seq_edges) near = near || std::abs(seq.value - e) < 1e-5;
        if (!near) break;
        c.logp_train[0] -= 3e-5;
      }
    }
  }
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
};

// Central differences of the surrogate value on every logp_train entry.
// Stop-gradient weights stay frozen at the unperturbed batch.
// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
inline GradCheck finite_difference_check(const scalerl::rl::Batch& batch, const scalerl::rl::LossSpec& spec,
                                         double h = 1e-6) {
  using namespace scalerl::rl;
  const auto base = compute_loss(batch, spec);
  GradCheck out;
  Batch work = batch;
  for (std::size_t g = 0; g < batch.size(); ++g) {
    for (std::size_t i = 0; i < batch[g].completions.size(); ++i) {
      for (std::size_t t = 0; t < batch[g].completions[i].token_count(); ++t) {
        double& x = work[g].completions[i].logp_train[t];
        const double x0 = x;
        x = x0 + h;
        const double up = compute_loss(work, spec, scalerl::Exec::serial, &batch).value;
        x = x0 - h;
        const double dn = compute_loss(work, spec, scalerl::Exec::serial, &batch).value;
        x = x0;
        const double numeric = (up - dn) / (2 * h);
        const double analytic = base.grad[g][i][t];
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
        out.max_rel_err = std::max(out.max_rel_err, std::abs(analytic - numeric) / scale);
        ++out.entries;
      }
    }
  }
  return out;
}

}  // namespace testing
