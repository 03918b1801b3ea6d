#ifndef BAPO_TESTS_HELPERS_HPP
#define BAPO_TESTS_HELPERS_HPP

#include <cmath>
#include <vector>

#include "bapo/batch.hpp"
#include "bapo/env.hpp"
#include "bapo/group_stats.hpp"
#include "bapo/objective.hpp"
#include "bapo/policy.hpp"

namespace testing {

using namespace bapo;

/// Single-prompt policy whose every position uses the given token probabilities.
inline PolicyParams policy_from_probs(const std::vector<double>& probs, int length = 1,
                                      int prompts = 1) {
  const int V = static_cast<int>(probs.size());
  LogitMatrix logits(prompts * length, V);
  for (int r = 0; r < prompts * length; ++r) {
    for (int v = 0; v < V; ++v) logits(r, v) = std::log(probs[v]);
  }
  return PolicyParams(logits, prompts, V, length);
}

inline PolicyParams random_policy(int prompts, int vocab, int length, Rng& rng, double scale = 1.0) {
  LogitMatrix logits(prompts * length, vocab);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = scale * (2 * rng.uniform() - 1);
  return PolicyParams(logits, prompts, vocab, length);
}

/// Group with hand-set rewards; responses and behavior log-probs are filled
/// from `behavior` so ratios are well defined.
inline ResponseGroup group_with_rewards(int prompt, const std::vector<int>& rewards,
                                        const PolicyParams& behavior, Rng& rng,
                                        double smoothing = kDefaultSmoothing) {
  ResponseGroup g;
  g.prompt_id = prompt;
  g.rewards = rewards;
  g.behavior_step = behavior.step_tag();
  const int G = static_cast<int>(rewards.size());
  g.behavior_token_log_probs.resize(G, behavior.max_len());
  for (int i = 0; i < G; ++i) {
    auto y = sample_response(behavior, prompt, rng);
    g.behavior_token_log_probs.row(i) = token_log_probs(behavior, prompt, y).transpose();
    g.responses.push_back(std::move(y));
  }
  refresh_stats(g, smoothing);
  return g;
}

inline ResponseGroup group_with_mean(int prompt, int correct, int G, const PolicyParams& behavior,
                                     Rng& rng) {
  std::vector<int> r(G, 0);
  for (int i = 0; i < correct; ++i) r[i] = 1;
  return group_with_rewards(prompt, r, behavior, rng);
}

/// Universe of `n` prompts, V=2, L=1, each accepting token 1 only.
inline PromptUniverse tiny_universe(int n, int vocab = 2, int length = 1) {
  PromptUniverse u;
  u.vocab_size = vocab;
  u.max_len = length;
  for (int p = 0; p < n; ++p) {
    PromptSpec s;
    s.id = p;
    s.accepted.push_back(ResponseSeq{std::vector<int>(length, 1)});
    s.difficulty = 1.0 / std::pow(vocab, length);
    u.prompts.push_back(s);
  }
  u.weights.assign(n, 1.0 / n);
  double head = 0.0;
  for (int p = 0; p + 1 < n; ++p) head += u.weights[p];
  u.weights.back() = 1.0 - head;
  return u;
}


struct GradientCheck {
  double relative_error = 0.0;
  /// Smallest distance of any ratio to a clip boundary; small values mean the
  /// finite difference may straddle a kink.
  double kink_distance = 0.0;
  double gradient_norm = 0.0;
};

/// Random batch, config and parameters; compares the analytic gradient with
/// central finite differences of the objective.
inline GradientCheck random_gradient_check(std::uint64_t seed, double h = 1e-6) {
  Rng rng(seed);
  const int prompts = 3, V = 2 + static_cast<int>(rng.below(3)), L = 1 + static_cast<int>(rng.below(3));
  const auto behavior = random_policy(prompts, V, L, rng, 1.0);
  PolicyParams current = behavior;
  {
    LogitMatrix lg = behavior.logits();
    for (Eigen::Index i = 0; i < lg.size(); ++i) lg.data()[i] += 0.3 * (2 * rng.uniform() - 1);
    current = PolicyParams(lg, prompts, V, L);
  }
  const auto target = random_policy(prompts, V, L, rng, 0.5);
  ObjectiveConfig cfg;
  cfg.eps_low = 0.1 + 0.2 * rng.uniform();
  cfg.eps_high = 0.1 + 0.2 * rng.uniform();
  cfg.beta = 0.5 * rng.uniform();
  cfg.entropy_coef = 0.1 * rng.uniform();
  cfg.ratio_level = rng.bernoulli(0.5) ? RatioLevel::kToken : RatioLevel::kSequence;
  cfg.clip_buffer_terms = rng.bernoulli(0.5);
  cfg.normalization = rng.bernoulli(0.5) ? LossNormalization::kBatchCap : LossNormalization::kRealized;

  TrainingBatch batch;
  batch.size_cap = 6;
  const Source sources[3] = {Source::kFresh, Source::kReevaluated, Source::kReused};
  for (int k = 0; k < 4; ++k) {
    const int G = 2 + static_cast<int>(rng.below(4));
    std::vector<int> r(G);
    for (auto& x : r) x = rng.bernoulli(0.5);
    r[0] = 1;
    r[1] = 0;
    const int p = static_cast<int>(rng.below(prompts));
    const Source src = sources[rng.below(3)];
    auto& tier = src == Source::kFresh ? batch.x1 : src == Source::kReevaluated ? batch.x2 : batch.x3;
    tier.push_back({group_with_rewards(p, r, behavior, rng), src, 0.0});
  }

  GradientCheck out;
  out.kink_distance = 1e9;
  for (const auto* bg : batch.all()) {
    const auto& g = bg->group;
    for (int i = 0; i < g.size(); ++i) {
      const Eigen::VectorXd rho = token_ratios(current, g.behavior_token_log_probs.row(i).transpose(),
                                               g.prompt_id, g.responses[i]);
      std::vector<double> ratios;
      if (cfg.ratio_level == RatioLevel::kToken) {
        ratios.assign(rho.data(), rho.data() + rho.size());
      } else {
        ratios.push_back(std::exp(rho.array().log().sum() / L));
      }
      for (double q : ratios) {
        out.kink_distance = std::min({out.kink_distance, std::abs(q - (1 - cfg.eps_low)),
                                      std::abs(q - (1 + cfg.eps_high))});
      }
    }
  }

  const auto analytic = surrogate_gradient(current, batch, cfg, target).gradient;
  PolicyGradient numeric = PolicyGradient::Zero(analytic.rows(), analytic.cols());
  for (Eigen::Index i = 0; i < numeric.size(); ++i) {
    LogitMatrix up = current.logits(), down = current.logits();
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fu = surrogate_objective(PolicyParams(up, prompts, V, L), batch, cfg, target).total;
    const double fd = surrogate_objective(PolicyParams(down, prompts, V, L), batch, cfg, target).total;
    numeric.data()[i] = (fu - fd) / (2 * h);
  }
  out.gradient_norm = analytic.norm();
  out.relative_error = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-8);
  return out;
}

}  // namespace testing

#endif  // BAPO_TESTS_HELPERS_HPP
