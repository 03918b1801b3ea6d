#ifndef BAPO_TRAINER_HPP
#define BAPO_TRAINER_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bapo/batch.hpp"
#include "bapo/config.hpp"
#include "bapo/env.hpp"
#include "bapo/metrics.hpp"
#include "bapo/objective.hpp"
#include "bapo/policy.hpp"

namespace bapo {

/// Raised when the objective or gradient turns non-finite. `dump` is a JSON
/// document with the parameters and batch that produced it.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::string dump)
      : std::runtime_error(what), dump(std::move(dump)) {}
  std::string dump;
};

/// Everything a step produced, for tests and audits.
struct StepTrace {
  std::uint64_t step = 0;
  const std::vector<ResponseGroup>* fresh = nullptr;
  const BatchResult* batch = nullptr;
  const PolicyParams* current = nullptr;  // π_θt, before the update
  const PolicyParams* rollout = nullptr;  // α
  const MetricsRecord* record = nullptr;
  const Buffers* buffers = nullptr;
  /// Per-step ledger charge in groups.
  std::uint64_t fresh_groups = 0;
  std::uint64_t reeval_groups = 0;
  std::uint64_t resample_groups = 0;
  int dapo_rounds = 0;
};

struct RunResult {
  PolicyParams final_policy;
  RolloutLedger ledger;
  std::vector<MetricsRecord> records;
  std::vector<int> tracked_ids;
  /// Includes a final evaluation keyed by total_steps.
  TrackedBins tracked_bins;
};

/// Off-policy training loop with delayed rollout-policy sync.
///
/// Each step runs sync -> rollout -> admit -> construct -> update. GRPO,
/// delayed GRPO and DAPO are configurations of the same loop: buffers off,
/// and for DAPO the rollout phase resamples until the batch is full.
class Trainer {
 public:
  Trainer(TrainerConfig config, PromptUniverse universe);
  /// Warm start: policy, rollout and reference policies all begin at `initial`.
  Trainer(TrainerConfig config, PromptUniverse universe, PolicyParams initial);

  const TrainerConfig& config() const { return config_; }
  const PromptUniverse& universe() const { return universe_; }
  const PolicyParams& policy() const { return policy_; }
  const PolicyParams& rollout_policy() const { return rollout_; }
  const PolicyParams& reference_policy() const { return reference_; }
  const RolloutLedger& ledger() const { return ledger_; }
  const Buffers& buffers() const { return buffers_; }
  const Thresholds& thresholds() const { return thresholds_; }
  const std::vector<int>& tracked_ids() const { return tracked_ids_; }
  std::uint64_t current_step() const { return step_; }

  /// Runs one step and returns its record.
  MetricsRecord step(const std::function<void(const StepTrace&)>& observer = {});

  /// Bins of the tracked prompts under the current policy (charged to the
  /// evaluation ledger).
  std::vector<int> evaluate_tracked(std::uint64_t label_step);

  RunResult run(const std::function<void(const MetricsRecord&)>& on_record = {},
                const std::function<void(const StepTrace&)>& observer = {});

 private:
  std::vector<int> select_prompts(Stream s, std::initializer_list<std::uint64_t> tags,
                                  std::size_t count, const std::vector<int>& exclude) const;
  std::vector<ResponseGroup> rollout(const std::vector<int>& prompts, Stream s,
                                     std::uint64_t round);

  TrainerConfig config_;
  PromptUniverse universe_;
  PolicyParams policy_;
  PolicyParams rollout_;
  PolicyParams reference_;
  Buffers buffers_;
  Thresholds thresholds_;
  RewardTracker tracker_;
  RolloutLedger ledger_;
  std::vector<int> tracked_ids_;
  TrackedBins tracked_bins_;
  std::uint64_t step_ = 0;
};

/// Convenience: full run of `config` on `universe`.
RunResult run_training(const TrainerConfig& config, const PromptUniverse& universe,
                       const std::function<void(const MetricsRecord&)>& on_record = {},
                       const std::function<void(const StepTrace&)>& observer = {});

}  // namespace bapo

#endif  // BAPO_TRAINER_HPP
