#include <algorithm>
#include <cmath>
#include <numeric>

#include "scalerl/error.hpp"
#include "scalerl/rl_objectives.hpp"

namespace scalerl::rl {

Advantages advantages_from_rewards(const std::vector<std::vector<double>>& rewards, const AdvantageSpec& spec);

namespace {

struct Selection {
  std::vector<std::vector<std::size_t>> kept;  // empty for dropped groups
  std::size_t dropped_groups = 0;
  std::size_t excluded_truncated = 0;
};

bool forces_filters(const LossSpec& spec) { return spec.type == LossType::scalerl; }

Selection select_effective(const Batch& batch, const LossSpec& spec) {
  const bool exclude = spec.exclude_truncated || forces_filters(spec);
  const bool zero_var = spec.zero_variance_filter || forces_filters(spec);
  Selection sel;
  sel.kept.resize(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    const auto& comps = batch[g].completions;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      if (exclude && comps[i].truncated) {
        ++sel.excluded_truncated;
        continue;
      }
      kept.push_back(i);
    }
    bool drop = kept.empty();
    if (!drop && zero_var) {
      const double r0 = comps[kept.front()].reward;
      drop = std::all_of(kept.begin(), kept.end(), [&](std::size_t i) { return comps[i].reward == r0; });
    }
    if (drop) {
      ++sel.dropped_groups;
      kept.clear();
    }
    sel.kept[g] = std::move(kept);
  }
  return sel;
}

struct GroupStats {
  std::size_t clipped = 0;
  std::size_t tokens = 0;
  double ratio_sum = 0.0;
  std::size_t clamped = 0;
};

// Per-token objective and its derivative with respect to logp_train for the
// token-level losses.
struct TokenTerm {
  double value;
  double deriv;
  bool clipped;
};

TokenTerm ppo_clip_term(double rho, double adv, double lo, double hi) {
  const double c = std::clamp(rho, lo, hi);
  const double unclipped = rho * adv;
  const double clipped = c * adv;
  if (unclipped <= clipped) return {unclipped, unclipped, false};
  return {clipped, 0.0, true};
}

}  // namespace

const char* to_string(LossType t) {
  switch (t) {
    case LossType::grpo: return "grpo";
    case LossType::dapo: return "dapo";
    case LossType::cispo: return "cispo";
    case LossType::gspo: return "gspo";
    case LossType::scalerl: return "scalerl";
  }
  return "?";
}

const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::sample_avg: return "sample_avg";
    case Aggregation::prompt_avg: return "prompt_avg";
    case Aggregation::token_avg: return "token_avg";
  }
  return "?";
}

const char* to_string(AdvantageMode m) {
  switch (m) {
    case AdvantageMode::prompt_std: return "prompt_std";
    case AdvantageMode::batch_std: return "batch_std";
    case AdvantageMode::none: return "none";
  }
  return "?";
}

LossType parse_loss_type(const std::string& s) {
  for (auto t : {LossType::grpo, LossType::dapo, LossType::cispo, LossType::gspo, LossType::scalerl}) {
    if (s == to_string(t)) return t;
  }
  throw InputError("unknown loss type '" + s + "'");
}

Aggregation parse_aggregation(const std::string& s) {
  for (auto a : {Aggregation::sample_avg, Aggregation::prompt_avg, Aggregation::token_avg}) {
    if (s == to_string(a)) return a;
  }
  throw InputError("unknown aggregation '" + s + "'");
}

AdvantageMode parse_advantage_mode(const std::string& s) {
  for (auto m : {AdvantageMode::prompt_std, AdvantageMode::batch_std, AdvantageMode::none}) {
    if (s == to_string(m)) return m;
  }
  throw InputError("unknown advantage mode '" + s + "'");
}

void ClipSpec::validate() const {
  if (eps_minus < 0 || eps_plus < 0 || eps_max_cispo < 0 || gspo_lower < 0 || gspo_upper < 0) {
    throw InputError("clip thresholds must be non-negative");
  }
  if (!(1.0 - eps_minus > 0.0)) throw InputError("clip requires 1 - eps_minus > 0");
  if (!(1.0 - gspo_lower > 0.0)) throw InputError("clip requires 1 - gspo_lower > 0");
}

LossSpec LossSpec::scalerl() {
  LossSpec s;
  s.type = LossType::scalerl;
  s.aggregation = Aggregation::prompt_avg;
  s.advantage.mode = AdvantageMode::batch_std;
  s.exclude_truncated = true;
  s.zero_variance_filter = true;
  return s;
}

void LossSpec::validate() const {
  clip.validate();
  if (!(advantage.epsilon >= 0.0)) throw InputError("advantage epsilon must be >= 0");
}

double aggregate(const TokenTable& terms, Aggregation aggregation) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& group : terms) {
    double group_sum = 0.0;
    std::size_t group_tokens = 0;
    for (const auto& comp : group) {
      if (comp.empty()) continue;
      const double s = std::accumulate(comp.begin(), comp.end(), 0.0);
      switch (aggregation) {
        case Aggregation::sample_avg:
          total += s / static_cast<double>(comp.size());
          ++count;
          break;
        case Aggregation::prompt_avg:
          group_sum += s;
          group_tokens += comp.size();
          break;
        case Aggregation::token_avg:
          total += s;
          count += comp.size();
          break;
      }
    }
    if (aggregation == Aggregation::prompt_avg && group_tokens > 0) {
      total += group_sum / static_cast<double>(group_tokens);
      ++count;
    }
  }
  if (count == 0) throw InputError("cannot aggregate an empty batch");
  return total / static_cast<double>(count);
}

LossOutput compute_loss(const Batch& batch, const LossSpec& spec, Exec exec, const Batch* anchor) {
  spec.validate();
  for (const auto& g : batch) {
    for (const auto& c : g.completions) c.validate();
  }
  if (anchor) {
    bool same = anchor->size() == batch.size();
    for (std::size_t g = 0; same && g < batch.size(); ++g) {
      same = (*anchor)[g].completions.size() == batch[g].completions.size();
      for (std::size_t i = 0; same && i < batch[g].completions.size(); ++i) {
        same = (*anchor)[g].completions[i].token_count() == batch[g].completions[i].token_count();
      }
    }
    if (!same) throw InputError("stop-gradient anchor must have the batch's shape");
  }

  LossOutput out;
  out.grad.resize(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    out.grad[g].resize(batch[g].completions.size());
    for (std::size_t i = 0; i < batch[g].completions.size(); ++i) {
      out.grad[g][i].assign(batch[g].completions[i].token_count(), 0.0);
    }
  }

  const Selection sel = select_effective(batch, spec);
  out.diag.dropped_groups = sel.dropped_groups;
  out.diag.excluded_truncated = sel.excluded_truncated;

  // Token counts per kept completion and the aggregation weight of one token.
  std::vector<std::vector<double>> rewards(batch.size());
  std::vector<std::vector<std::size_t>> n_active(batch.size());
  std::size_t n_comp = 0, n_groups = 0, n_tokens = 0;
  for (std::size_t g = 0; g < batch.size(); ++g) {
    std::size_t group_tokens = 0;
    for (std::size_t i : sel.kept[g]) {
      const auto& c = batch[g].completions[i];
      rewards[g].push_back(c.reward);
      const std::size_t n = c.active_tokens();
      n_active[g].push_back(n);
      group_tokens += n;
      if (n > 0) ++n_comp;
    }
    if (group_tokens > 0) ++n_groups;
    n_tokens += group_tokens;
    if (!sel.kept[g].empty()) {
      ++out.diag.effective_groups;
      out.diag.effective_completions += sel.kept[g].size();
    }
  }
  if (n_tokens == 0) {
    out.no_gradient = true;
    return out;
  }
  out.diag.active_tokens = n_tokens;

  std::vector<std::vector<double>> eff_rewards;
  std::vector<std::size_t> eff_index;
  for (std::size_t g = 0; g < batch.size(); ++g) {
    if (sel.kept[g].empty()) continue;
    eff_rewards.push_back(rewards[g]);
    eff_index.push_back(g);
  }
  const Advantages eff_adv = advantages_from_rewards(eff_rewards, spec.advantage);
  std::vector<std::vector<double>> adv(batch.size());
  for (std::size_t k = 0; k < eff_index.size(); ++k) adv[eff_index[k]] = eff_adv[k];

  auto token_weight = [&](std::size_t g, std::size_t j) {
    std::size_t group_tokens = std::accumulate(n_active[g].begin(), n_active[g].end(), std::size_t{0});
    switch (spec.aggregation) {
      case Aggregation::sample_avg:
        return 1.0 / (static_cast<double>(n_comp) * static_cast<double>(n_active[g][j]));
      case Aggregation::prompt_avg:
        return 1.0 / (static_cast<double>(n_groups) * static_cast<double>(group_tokens));
      case Aggregation::token_avg:
        return 1.0 / static_cast<double>(n_tokens);
    }
    return 0.0;
  };

  const double grpo_eps = spec.clip.eps_minus;
  TokenTable terms(batch.size());
  std::vector<GroupStats> stats(batch.size());

  auto process_group = [&](std::size_t g) {
    terms[g].resize(sel.kept[g].size());
    for (std::size_t j = 0; j < sel.kept[g].size(); ++j) {
      const std::size_t i = sel.kept[g][j];
      const auto& c = batch[g].completions[i];
      const std::size_t n = n_active[g][j];
      if (n == 0) continue;
      const double a = adv[g][j];
      const double w = token_weight(g, j);
      auto& term = terms[g][j];
      auto& grad = out.grad[g][i];
      term.reserve(n);

      if (spec.type == LossType::gspo) {
        const auto seq = is_ratio_sequence(c, spec.gspo_ratio);
        if (seq.clamped) ++stats[g].clamped;
        const auto tt = ppo_clip_term(seq.value, a, 1.0 - spec.clip.gspo_lower, 1.0 + spec.clip.gspo_upper);
        // d(seq)/d(logp_t) = seq (product) or seq / n (geometric mean).
        double dseq = seq.clamped ? 0.0 : 1.0;
        if (spec.gspo_ratio == GspoRatio::geometric_mean) dseq /= static_cast<double>(n);
        const double completion_weight = w * static_cast<double>(n);
        for (std::size_t t = 0; t < c.token_count(); ++t) {
          if (!c.active(t)) continue;
          term.push_back(tt.value);
          grad[t] = completion_weight * tt.deriv * dseq;
          stats[g].ratio_sum += is_ratio_token(c, t);
          if (tt.clipped) ++stats[g].clipped;
          ++stats[g].tokens;
        }
        continue;
      }

      const auto* anchor_rec = anchor ? &(*anchor)[g].completions[i] : nullptr;
      for (std::size_t t = 0; t < c.token_count(); ++t) {
        if (!c.active(t)) continue;
        const double rho = is_ratio_token(c, t);
        TokenTerm tt{};
        switch (spec.type) {
          case LossType::grpo: tt = ppo_clip_term(rho, a, 1.0 - grpo_eps, 1.0 + grpo_eps); break;
          case LossType::dapo:
            tt = ppo_clip_term(rho, a, 1.0 - spec.clip.eps_minus, 1.0 + spec.clip.eps_plus);
            break;
          case LossType::cispo:
          case LossType::scalerl: {
            const double rho_sg = anchor_rec ? is_ratio_token(*anchor_rec, t) : rho;
            const double weight = std::min(rho_sg, spec.clip.eps_max_cispo);
            tt = {weight * a * c.logp_train[t], weight * a, rho_sg > spec.clip.eps_max_cispo};
            break;
          }
          case LossType::gspo: break;
        }
        term.push_back(tt.value);
        grad[t] = w * tt.deriv;
        stats[g].ratio_sum += rho;
        if (tt.clipped) ++stats[g].clipped;
        ++stats[g].tokens;
      }
    }
  };

  const long ng = static_cast<long>(batch.size());
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long g = 0; g < ng; ++g) process_group(static_cast<std::size_t>(g));
  } else {
    for (long g = 0; g < ng; ++g) process_group(static_cast<std::size_t>(g));
  }

  out.value = aggregate(terms, spec.aggregation);
  std::size_t clipped = 0, tokens = 0;
  double ratio_sum = 0.0;
  for (const auto& s : stats) {
    clipped += s.clipped;
    tokens += s.tokens;
    ratio_sum += s.ratio_sum;
    out.diag.clamped_sequences += s.clamped;
  }
  out.diag.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
  out.diag.mean_is_ratio = ratio_sum / static_cast<double>(tokens);
  return out;
}

LossOutput loss_grpo(const Batch& batch, LossSpec spec) {
  spec.type = LossType::grpo;
  return compute_loss(batch, spec);
}

LossOutput loss_dapo(const Batch& batch, LossSpec spec) {
  spec.type = LossType::dapo;
  return compute_loss(batch, spec);
}

LossOutput loss_cispo(const Batch& batch, LossSpec spec) {
  spec.type = LossType::cispo;
  return compute_loss(batch, spec);
}

LossOutput loss_gspo(const Batch& batch, LossSpec spec) {
  spec.type = LossType::gspo;
  return compute_loss(batch, spec);
}

LossOutput loss_scalerl(const Batch& batch, LossSpec spec) {
  spec.type = LossType::scalerl;
  return compute_loss(batch, spec);
}

}  // namespace scalerl::rl
