#include "bapo/objective.hpp"

#include <algorithm>
#include <cmath>

#include "bapo/softmax.hpp"

namespace bapo {

namespace {

struct ClipResult {
  double value;
  bool gradient_flows;
};

// min(ρA, clip(ρ, 1-ε_low, 1+ε_high) A); the unclipped branch carries the
// gradient on ties.
ClipResult clipped_term(double ratio, double advantage, double eps_low, double eps_high,
                        bool clip) {
  const double raw = ratio * advantage;
  if (!clip) return {raw, true};
  const double clipped = std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high) * advantage;
  if (raw <= clipped) return {raw, true};
  return {clipped, false};
}

double normalizer(const TrainingBatch& batch, const ObjectiveConfig& config) {
  if (config.normalization == LossNormalization::kBatchCap && batch.size_cap > 0) {
    return static_cast<double>(std::max(batch.size_cap, batch.size()));
  }
  return static_cast<double>(batch.size());
}

// Shared pass: accumulates the objective and, if `grad` is non-null, its
// gradient.
ObjectiveTerms evaluate(const PolicyParams& params, const TrainingBatch& batch,
                        const ObjectiveConfig& config, const PolicyParams& kl_target,
                        PolicyGradient* grad) {
  ObjectiveTerms terms;
  const auto groups = batch.all();
  if (groups.empty()) return terms;
  const double n = normalizer(batch, config);
  const int L = params.max_len();
  std::size_t ratio_terms = 0;
  std::size_t clipped_terms = 0;

  for (const BatchGroup* bg : groups) {
    const ResponseGroup& g = bg->group;
    const int p = g.prompt_id;
    const bool clip = config.clip_buffer_terms || bg->source == Source::kFresh;
    const LogitMatrix lp = params.log_probs(p);
    const LogitMatrix probs = exact_exp(lp.array());
    const double G = g.size();
    const double w = 1.0 / (n * G);

    for (int i = 0; i < g.size(); ++i) {
      const ResponseSeq& y = g.responses[i];
      const double adv = g.advantages[i];
      if (config.ratio_level == RatioLevel::kToken) {
        for (int t = 0; t < L; ++t) {
          const double rho = std::exp(lp(t, y[t]) - g.behavior_token_log_probs(i, t));
          const auto term = clipped_term(rho, adv, config.eps_low, config.eps_high, clip);
          terms.surrogate += w * term.value / L;
          ++ratio_terms;
          if (!term.gradient_flows) ++clipped_terms;
          if (grad && term.gradient_flows && adv != 0.0) {
            const double c = w * rho * adv / L;
            auto row = grad->row(static_cast<Eigen::Index>(p) * L + t);
            row -= c * probs.row(t);
            row[y[t]] += c;
          }
        }
      } else {
        double log_ratio = 0.0;
        for (int t = 0; t < L; ++t) log_ratio += lp(t, y[t]) - g.behavior_token_log_probs(i, t);
        const double s = std::exp(log_ratio / L);
        const auto term = clipped_term(s, adv, config.eps_low, config.eps_high, clip);
        terms.surrogate += w * term.value;
        ++ratio_terms;
        if (!term.gradient_flows) ++clipped_terms;
        if (grad && term.gradient_flows && adv != 0.0) {
          const double c = w * s * adv / L;
          for (int t = 0; t < L; ++t) {
            auto row = grad->row(static_cast<Eigen::Index>(p) * L + t);
            row -= c * probs.row(t);
            row[y[t]] += c;
          }
        }
      }
    }

    const LogitMatrix lq = kl_target.log_probs(p);
    terms.kl += kl_rows(lp, lq) / n;
    terms.entropy += entropy_rows(lp) / n;
    if (grad) {
      for (int t = 0; t < L; ++t) {
        auto row = grad->row(static_cast<Eigen::Index>(p) * L + t);
        const auto diff = (lp.row(t) - lq.row(t)).array();
        const double kl_t = (probs.row(t).array() * diff).sum();
        const double h_t = -(probs.row(t).array() * lp.row(t).array()).sum();
        row.array() -= (config.beta / n) * probs.row(t).array() * (diff - kl_t);
        row.array() -= (config.entropy_coef / n) * probs.row(t).array() * (lp.row(t).array() + h_t);
      }
    }
  }
  terms.total = terms.surrogate - config.beta * terms.kl + config.entropy_coef * terms.entropy;
  terms.clip_fraction =
      ratio_terms ? static_cast<double>(clipped_terms) / static_cast<double>(ratio_terms) : 0.0;
  return terms;
}

}  // namespace

ObjectiveTerms surrogate_objective(const PolicyParams& params, const TrainingBatch& batch,
                                   const ObjectiveConfig& config, const PolicyParams& kl_target) {
  return evaluate(params, batch, config, kl_target, nullptr);
}

GradientResult surrogate_gradient(const PolicyParams& params, const TrainingBatch& batch,
                                  const ObjectiveConfig& config, const PolicyParams& kl_target) {
  GradientResult out;
  out.gradient = PolicyGradient::Zero(params.logits().rows(), params.logits().cols());
  out.empty_batch = batch.empty();
  out.terms = evaluate(params, batch, config, kl_target, &out.gradient);
  return out;
}

}  // namespace bapo
