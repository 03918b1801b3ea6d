#include "bapo/group_stats.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bapo {

GroupStats compute_group_stats(std::span<const int> rewards, double smoothing) {
  const auto G = static_cast<int>(rewards.size());
  if (G < 2) throw std::invalid_argument("group size must be at least 2");
  if (!(smoothing > 0.0)) throw std::invalid_argument("smoothing must be positive");
  int correct = 0;
  for (int r : rewards) {
    if (r != 0 && r != 1) throw std::invalid_argument("rewards must be binary");
    correct += r;
  }
  GroupStats s;
  s.mean = static_cast<double>(correct) / G;
  s.variance = s.mean * (1.0 - s.mean);
  const double denom = std::sqrt(s.variance + smoothing);
  s.advantages.reserve(G);
  for (int r : rewards) s.advantages.push_back((r - s.mean) / denom);
  return s;
}

int accuracy_bin(double mean, int group_size) {
  if (group_size < 1) throw std::invalid_argument("group size must be positive");
  const double scaled = mean * group_size;
  const double k = std::round(scaled);
  if (std::abs(scaled - k) > 1e-9 || k < 0 || k > group_size) {
    throw std::invalid_argument("group mean is not a multiple of 1/G");
  }
  return static_cast<int>(k);
}

int ResponseGroup::correct() const { return std::accumulate(rewards.begin(), rewards.end(), 0); }

void refresh_stats(ResponseGroup& group, double smoothing) {
  const auto s = compute_group_stats(group.rewards, smoothing);
  group.mean = s.mean;
  group.std_dev = std::sqrt(s.variance);
  group.advantages = s.advantages;
}

ResponseGroup rollout_group(const PolicyParams& behavior, const PromptSpec& prompt, int group_size,
                            double smoothing, Rng& rng) {
  ResponseGroup g;
  g.prompt_id = prompt.id;
  g.behavior_step = behavior.step_tag();
  g.behavior_token_log_probs.resize(group_size, behavior.max_len());
  const LogitMatrix lp = behavior.log_probs(prompt.id);
  for (int i = 0; i < group_size; ++i) {
    ResponseSeq y = sample_response(behavior, prompt.id, rng);
    for (int t = 0; t < behavior.max_len(); ++t) g.behavior_token_log_probs(i, t) = lp(t, y[t]);
    g.rewards.push_back(verify(prompt, y));
    g.responses.push_back(std::move(y));
  }
  refresh_stats(g, smoothing);
  return g;
}

}  // namespace bapo
