#ifndef BAPO_GROUP_STATS_HPP
#define BAPO_GROUP_STATS_HPP

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bapo/env.hpp"
#include "bapo/policy.hpp"

namespace bapo {

inline constexpr double kDefaultSmoothing = 1e-4;

struct GroupStats {
  double mean = 0.0;
  /// Population variance μ(1-μ) of the binary rewards.
  double variance = 0.0;
  std::vector<double> advantages;
};

/// Group-standardized advantages (r_i - μ) / sqrt(σ² + ε_smooth).
/// Throws std::invalid_argument for G < 2 or non-binary rewards.
GroupStats compute_group_stats(std::span<const int> rewards, double smoothing = kDefaultSmoothing);

/// Bin k for a group mean μ = k / G. Throws if μ is not a multiple of 1/G.
int accuracy_bin(double mean, int group_size);

/// G responses for one prompt with rewards and behavior-policy log-probabilities.
struct ResponseGroup {
  int prompt_id = 0;
  std::vector<ResponseSeq> responses;
  std::vector<int> rewards;
  /// G x L per-token log-probabilities under the generating policy.
  Eigen::MatrixXd behavior_token_log_probs;
  std::uint64_t behavior_step = 0;
  double mean = 0.0;
  double std_dev = 0.0;
  std::vector<double> advantages;

  int size() const { return static_cast<int>(responses.size()); }
  double behavior_log_prob(int i) const { return behavior_token_log_probs.row(i).sum(); }
  bool zero_variance() const { return mean == 0.0 || mean == 1.0; }
  int correct() const;
};

/// Recomputes mean, std and advantages from the stored rewards.
void refresh_stats(ResponseGroup& group, double smoothing);

/// Samples G responses under `behavior`, verifies them and fills the statistics.
ResponseGroup rollout_group(const PolicyParams& behavior, const PromptSpec& prompt, int group_size,
                            double smoothing, Rng& rng);

}  // namespace bapo

#endif  // BAPO_GROUP_STATS_HPP
