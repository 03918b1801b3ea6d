#ifndef BAPO_METRICS_HPP
#define BAPO_METRICS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bapo {

inline constexpr const char* kMetricsSchema = "bapo.metrics/1";
inline constexpr const char* kTrackedBinsSchema = "bapo.tracked_bins/1";

enum class RolloutPurpose { kFresh, kReevaluation, kDapoResample, kEvaluation };

/// Rollout accounting in groups; every group is G responses.
///
/// Training purposes (fresh, re-evaluation, dapo resampling) make up the
/// cumulative counters. Tracked-subset evaluation is itemized on its own.
class RolloutLedger {
 public:
  explicit RolloutLedger(int group_size = 8) : group_size_(group_size) {}

  void charge(RolloutPurpose purpose, std::uint64_t groups);

  int group_size() const { return group_size_; }
  std::uint64_t groups(RolloutPurpose purpose) const;
  std::uint64_t cumulative_groups() const { return fresh_ + reeval_ + dapo_; }
  std::uint64_t cumulative_responses() const {
    return cumulative_groups() * static_cast<std::uint64_t>(group_size_);
  }
  std::uint64_t evaluation_groups() const { return eval_; }

 private:
  int group_size_;
  std::uint64_t fresh_ = 0;
  std::uint64_t reeval_ = 0;
  std::uint64_t dapo_ = 0;
  std::uint64_t eval_ = 0;
};

struct LedgerReport {
  std::uint64_t fresh_responses = 0;
  std::uint64_t reevaluation_responses = 0;
  std::uint64_t dapo_resample_responses = 0;
  std::uint64_t evaluation_responses = 0;
  std::uint64_t total_responses = 0;
  std::uint64_t total_groups = 0;
};

LedgerReport ledger_report(const RolloutLedger& ledger);

struct MetricsRecord {
  std::uint64_t step = 0;
  std::string algorithm;
  /// Mean of fresh group means this step.
  double mean_reward = 0.0;
  std::uint64_t fresh_groups = 0;
  std::uint64_t zero_variance_groups = 0;
  std::uint64_t x1 = 0, x2 = 0, x3 = 0;
  bool skipped = false;
  bool synced = false;
  std::uint64_t rollout_step_tag = 0;
  std::vector<std::string> phases;
  double surrogate = 0.0;
  double kl = 0.0;
  double entropy_bonus = 0.0;
  double objective = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double tv_to_rollout_policy = 0.0;
  double policy_entropy = 0.0;
  std::uint64_t ledger_fresh = 0;
  std::uint64_t ledger_reevaluation = 0;
  std::uint64_t ledger_dapo_resample = 0;
  std::uint64_t ledger_evaluation = 0;
  std::uint64_t cumulative_groups = 0;
  std::uint64_t cumulative_responses = 0;
  double c2 = 0.0;
  double c3 = 0.0;
  double r_tot = 0.0;
  std::uint64_t buffer_bad = 0;
  std::uint64_t buffer_high = 0;
  /// Count per accuracy bin 0..G over the tracked subset; empty when this
  /// step was not evaluated.
  std::vector<std::uint64_t> bins;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord metrics_from_json(const std::string& line);

/// Header line written first in every metrics.jsonl.
std::string metrics_header_line();

/// Flat name -> value view of every numeric scalar in a record.
std::map<std::string, double> numeric_fields(const MetricsRecord& r);

/// Per-step accuracy bins of the tracked prompts, keyed by step.
using TrackedBins = std::map<std::uint64_t, std::vector<int>>;

/// (G+1) x (G+1) counts: row = bin at the reference step, column = bin at the
/// query step.
struct MigrationMatrix {
  std::uint64_t reference_step = 0;
  std::uint64_t query_step = 0;
  int group_size = 0;
  std::vector<std::vector<std::uint64_t>> counts;

  std::uint64_t total() const;
  std::uint64_t row_sum(int row) const;
  /// Mass strictly below the diagonal over the total.
  double regression_fraction() const;
};

/// Throws std::out_of_range listing the available steps if either is missing.
MigrationMatrix migration_matrix(const TrackedBins& bins, int group_size,
                                 std::uint64_t reference_step, std::uint64_t query_step);

std::vector<std::uint64_t> bin_histogram(const std::vector<int>& bins, int group_size);

/// Fraction of prompts in bin 0 at `initial` that are in bin >= 1 at `final`.
/// Returns nullopt when no prompt starts in bin 0.
std::optional<double> unlocked_fraction(const std::vector<int>& initial,
                                        const std::vector<int>& final_bins);

void write_tracked_bins(const TrackedBins& bins, const std::vector<int>& tracked_ids,
                        std::ostream& out);
TrackedBins read_tracked_bins(std::istream& in, std::vector<int>* tracked_ids = nullptr);

}  // namespace bapo

#endif  // BAPO_METRICS_HPP
