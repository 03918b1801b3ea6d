#ifndef BAPO_BATCH_HPP
#define BAPO_BATCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bapo/env.hpp"
#include "bapo/group_stats.hpp"
#include "bapo/replay_buffer.hpp"

namespace bapo {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FilterMode { kRange, kGaussian, kUniform };

FilterMode parse_filter_mode(const std::string& s);
std::string to_string(FilterMode mode);

struct Range {
  double low = 0.0;
  double high = 0.0;
};

/// Buffer admission thresholds. c2 and c3 slide linearly with r_tot.
struct Thresholds {
  double c1 = 1.0 / 8.0;
  Range c2_range{1.0 / 8.0, 4.0 / 8.0};
  Range c3_range{2.0 / 8.0, 5.0 / 8.0};
  double c2 = 1.0 / 8.0;
  double c3 = 2.0 / 8.0;
  double r_tot = 0.0;

  /// Throws ConfigError unless c1 <= c2_low, low <= high, and c2 <= c3 for
  /// every r_tot in [0, 1].
  void validate() const;
};

/// c_i = r_tot (c_i^high - c_i^low) + c_i^low for i in {2, 3}; c1 unchanged.
Thresholds adapt_thresholds(const Thresholds& th, double r_tot);

/// Running global mean reward. half_life == 0 gives the cumulative mean of
/// every fresh group mean seen so far; otherwise a per-step EMA.
class RewardTracker {
 public:
  explicit RewardTracker(double half_life = 0.0) : half_life_(half_life) {}
  void observe_step(const std::vector<double>& group_means);
  double value() const { return value_; }

 private:
  double half_life_;
  double value_ = 0.0;
  double sum_ = 0.0;
  std::uint64_t count_ = 0;
  bool seen_ = false;
};

enum class Source { kFresh, kReevaluated, kReused };

const char* to_string(Source s);

struct BatchGroup {
  ResponseGroup group;
  Source source = Source::kFresh;
  /// Reward-variance floor this group is certified against.
  double variance_floor = 0.0;
};

struct TrainingBatch {
  std::vector<BatchGroup> x1, x2, x3;
  std::size_t size_cap = 0;

  std::size_t size() const { return x1.size() + x2.size() + x3.size(); }
  bool empty() const { return size() == 0; }
  std::vector<const BatchGroup*> all() const;
};

struct BatchConfig {
  int group_size = 8;
  std::size_t batch_size = 64;
  FilterMode filter_mode = FilterMode::kRange;
  double gaussian_mean = 0.5;
  double gaussian_std = 0.2;
  double uniform_keep = 0.6;
  std::uint64_t reeval_every = 5;
  std::size_t max_reeval = 128;
  bool use_bad_buffer = true;
  bool use_high_buffer = true;
  bool mini_test = false;
  double smoothing = kDefaultSmoothing;
  std::uint64_t high_window = kHighRecencyWindow;
};

/// Parameter-free variant: X2 replays all-wrong groups, X3 reuses exact 50%
/// groups, X1 is plain zero-variance filtering.
BatchConfig mini_test_mode(BatchConfig config);
Thresholds mini_test_thresholds();

double gaussian_acceptance(double mean, double center, double std_dev);

/// Range: keep 1/G <= μ <= (G-1)/G. Gaussian: keep with probability
/// exp(-(μ-center)²/(2 std²)), then drop zero-variance groups. Uniform: keep
/// each with probability `uniform_keep`.
std::vector<ResponseGroup> filter_fresh(const std::vector<ResponseGroup>& groups,
                                        const BatchConfig& config, Rng& rng);

struct ReevalOutcome {
  std::vector<ResponseGroup> admitted;
  /// Prompts leaving the bad buffer: admitted plus mastered (μ = 1).
  std::vector<int> removed;
  std::size_t rollout_groups = 0;
};

/// Resamples each entry's prompt under `current` and admits c1 < μ_new < 1.
/// Entries whose prompt is in `skip` are left untouched and not resampled.
ReevalOutcome reevaluate_bad(const std::vector<BufferEntry>& entries, const PolicyParams& current,
                             const PromptUniverse& universe, double c1, int group_size,
                             double smoothing, std::uint64_t seed, std::uint64_t step,
                             const std::vector<int>& skip = {});

/// k = min(|eligible|, max(0, B - n1 - n2)) entries sampled without
/// replacement from eligible, non-excluded high-buffer entries.
std::vector<BufferEntry> fill_high(const FifoBuffer& high, std::size_t batch_size, std::size_t n1,
                                   std::size_t n2, Rng& rng, std::uint64_t step,
                                   const std::vector<int>& exclude = {},
                                   std::uint64_t window = kHighRecencyWindow);

/// Drops overflow beyond `size_cap`, from x3 first, then x2, then x1, at random
/// within a tier.
void trim_to_budget(TrainingBatch& batch, Rng& rng);

struct BatchResult {
  TrainingBatch batch;
  bool skip = false;
  std::size_t reeval_groups = 0;
  /// Thresholds in force while this batch was built.
  double c2_used = 0.0;
  double c3_used = 0.0;
};

struct Buffers {
  FifoBuffer bad;
  FifoBuffer high;
};

/// One batch: X1 from `fresh`, X2 by re-evaluation when step % m == 0 (and
/// step > 0), X3 from the high buffer, trimmed to the cap. Afterwards r_tot
/// absorbs the fresh group means and c2, c3 are re-mapped for the next step.
BatchResult construct_batch(const std::vector<ResponseGroup>& fresh, Buffers& buffers,
                            Thresholds& thresholds, RewardTracker& tracker,
                            const BatchConfig& config, const PolicyParams& current,
                            const PromptUniverse& universe, std::uint64_t seed, std::uint64_t step);

/// Variance floors backing the stability constants.
double fresh_variance_floor(int group_size);
double reeval_variance_floor(double c1, int group_size, bool mini_test);
double reuse_variance_floor(double c2, double c3);

}  // namespace bapo

#endif  // BAPO_BATCH_HPP
