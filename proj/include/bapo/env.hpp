#ifndef BAPO_ENV_HPP
#define BAPO_ENV_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "bapo/policy.hpp"
#include "bapo/random.hpp"

namespace bapo {

/// A synthetic verifiable task: the set of accepted responses.
///
/// `difficulty` is |accepted| / V^L, the solve probability of the uniform
/// policy. Accepted responses are kept sorted by sequence index.
struct PromptSpec {
  int id = 0;
  std::vector<ResponseSeq> accepted;
  double difficulty = 0.0;
};

struct DifficultyBucket {
  double difficulty = 0.0;
  double fraction = 0.0;
};

struct UniverseConfig {
  int num_prompts = 100;
  int vocab_size = 4;
  int max_len = 2;
  std::vector<DifficultyBucket> histogram{{1.0 / 16.0, 1.0}};
  std::uint64_t seed = 0;
};

/// Immutable after generation.
struct PromptUniverse {
  int vocab_size = 0;
  int max_len = 0;
  std::vector<PromptSpec> prompts;
  std::vector<double> weights;
  /// Adjustments made while generating (e.g. unattainable difficulties).
  std::vector<std::string> provenance;

  int size() const { return static_cast<int>(prompts.size()); }
  const PromptSpec& prompt(int id) const;
  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

/// 1 iff y is accepted. Pure.
int verify(const PromptSpec& prompt, const ResponseSeq& y);

/// μ_{π,r}(x) = Σ_{y accepted} π(y|x), exact.
double exact_expected_reward(const PolicyParams& params, const PromptSpec& prompt);

PromptUniverse generate_universe(const UniverseConfig& config);

std::string universe_to_json(const PromptUniverse& universe);
PromptUniverse universe_from_json(const std::string& text);
void save_universe(const PromptUniverse& universe, const std::filesystem::path& path);
PromptUniverse load_universe(const std::filesystem::path& path);

}  // namespace bapo

#endif  // BAPO_ENV_HPP
