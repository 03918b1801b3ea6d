#ifndef BAPO_POLICY_HPP
#define BAPO_POLICY_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bapo/random.hpp"

namespace bapo {

using LogitMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Gradients share the logit layout: row (prompt * L + position), column token.
using PolicyGradient = LogitMatrix;

/// Raised when a response is impossible under its behavior policy.
class RatioOverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when exact enumeration of the response space would be too large.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-length token sequence, each token in [0, V).
struct ResponseSeq {
  std::vector<int> tokens;

  std::size_t size() const { return tokens.size(); }
  int operator[](std::size_t i) const { return tokens[i]; }
  auto operator<=>(const ResponseSeq&) const = default;
};

/// Largest response space that exact enumeration will touch.
inline constexpr std::uint64_t kMaxEnumerable = 1'000'000;

/// V^L, or throws CapacityError past kMaxEnumerable.
std::uint64_t response_space_size(int vocab_size, int max_len);

/// Mixed-radix encoding, position 0 most significant.
std::uint64_t sequence_index(const ResponseSeq& y, int vocab_size);
ResponseSeq sequence_from_index(std::uint64_t index, int vocab_size, int max_len);

/// Tabular autoregressive categorical policy.
///
/// One logit row per (prompt, position); tokens at different positions are
/// sampled independently, so sequence probabilities factorize and KL adds
/// across positions. Instances are immutable snapshots in practice: updates
/// return new values and leave the source untouched.
class PolicyParams {
 public:
  PolicyParams() = default;
  /// Uniform policy (all-zero logits).
  PolicyParams(int num_prompts, int vocab_size, int max_len, std::uint64_t step_tag = 0);
  PolicyParams(LogitMatrix logits, int num_prompts, int vocab_size, int max_len,
               std::uint64_t step_tag = 0);

  int num_prompts() const { return num_prompts_; }
  int vocab_size() const { return vocab_size_; }
  int max_len() const { return max_len_; }
  std::uint64_t step_tag() const { return step_tag_; }

  const LogitMatrix& logits() const { return logits_; }

  /// The L x V logit block of one prompt. Throws std::out_of_range.
  auto block(int prompt_id) const {
    check_prompt(prompt_id);
    return logits_.middleRows(static_cast<Eigen::Index>(prompt_id) * max_len_, max_len_);
  }
  auto block(int prompt_id) {
    check_prompt(prompt_id);
    return logits_.middleRows(static_cast<Eigen::Index>(prompt_id) * max_len_, max_len_);
  }

  /// L x V matrix of log-probabilities for one prompt.
  LogitMatrix log_probs(int prompt_id) const;

  PolicyParams with_step_tag(std::uint64_t tag) const;

  void check_prompt(int prompt_id) const;
  void check_response(const ResponseSeq& y) const;

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.num_prompts_ == b.num_prompts_ && a.vocab_size_ == b.vocab_size_ &&
           a.max_len_ == b.max_len_ && a.step_tag_ == b.step_tag_ && a.logits_ == b.logits_;
  }

 private:
  LogitMatrix logits_;
  int num_prompts_ = 0;
  int vocab_size_ = 0;
  int max_len_ = 0;
  std::uint64_t step_tag_ = 0;
};

ResponseSeq sample_response(const PolicyParams& params, int prompt_id, Rng& rng);

/// Σ_t log softmax(logits[prompt][t])[y_t].
double log_prob(const PolicyParams& params, int prompt_id, const ResponseSeq& y);

/// Per-position terms of log_prob.
Eigen::VectorXd token_log_probs(const PolicyParams& params, int prompt_id, const ResponseSeq& y);

/// Sequence-level importance ratio π(y|x) / behavior(y|x).
double ratio(const PolicyParams& current, double behavior_log_prob, int prompt_id,
             const ResponseSeq& y);

/// Per-token importance ratios against stored behavior token log-probs.
Eigen::VectorXd token_ratios(const PolicyParams& current,
                             const Eigen::Ref<const Eigen::VectorXd>& behavior_token_log_probs,
                             int prompt_id, const ResponseSeq& y);

/// KL(p ‖ q) over the whole response space of one prompt.
double exact_kl(const PolicyParams& p, const PolicyParams& q, int prompt_id);

/// Total variation over the whole response space of one prompt (enumerated).
double exact_tv(const PolicyParams& p, const PolicyParams& q, int prompt_id);

/// Sequence entropy of one prompt's response distribution.
double exact_entropy(const PolicyParams& p, int prompt_id);

/// Probability of every response, indexed by sequence_index.
Eigen::VectorXd sequence_probabilities(const PolicyParams& params, int prompt_id);

/// Gradient ascent step. Returns new parameters with the same step tag.
PolicyParams apply_update(const PolicyParams& params, const PolicyGradient& gradient,
                          double learning_rate);

std::string policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const std::string& text);
void save_policy(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace bapo

#endif  // BAPO_POLICY_HPP
