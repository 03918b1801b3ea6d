#ifndef BAPO_OBJECTIVE_HPP
#define BAPO_OBJECTIVE_HPP

#include "bapo/batch.hpp"
#include "bapo/policy.hpp"

namespace bapo {

enum class RatioLevel { kToken, kSequence };

enum class LossNormalization {
  /// Divide by the configured batch cap B: every group has a fixed weight.
  kBatchCap,
  /// Divide by the number of groups actually in the batch.
  kRealized,
};

struct ObjectiveConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;
  double beta = 0.001;
  double entropy_coef = 0.001;
  RatioLevel ratio_level = RatioLevel::kToken;
  bool clip_buffer_terms = true;
  LossNormalization normalization = LossNormalization::kBatchCap;
};

struct ObjectiveTerms {
  double surrogate = 0.0;
  /// Mean exact KL(π_θ ‖ target) over batch groups (already normalized).
  double kl = 0.0;
  double entropy = 0.0;
  /// surrogate - β kl + entropy_coef entropy.
  double total = 0.0;
  /// Fraction of ratio terms where the clipped branch is active.
  double clip_fraction = 0.0;
};

/// Clipped surrogate of the batch with a KL penalty towards `kl_target` and an
/// entropy bonus. Every sample is weighed against its own stored behavior
/// log-probabilities.
ObjectiveTerms surrogate_objective(const PolicyParams& params, const TrainingBatch& batch,
                                   const ObjectiveConfig& config, const PolicyParams& kl_target);

struct GradientResult {
  PolicyGradient gradient;
  ObjectiveTerms terms;
  /// Set when the batch was empty and the gradient is zero.
  bool empty_batch = false;
};

/// Analytic gradient of surrogate_objective w.r.t. the logits.
GradientResult surrogate_gradient(const PolicyParams& params, const TrainingBatch& batch,
                                  const ObjectiveConfig& config, const PolicyParams& kl_target);

}  // namespace bapo

#endif  // BAPO_OBJECTIVE_HPP
