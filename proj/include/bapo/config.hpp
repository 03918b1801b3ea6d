#ifndef BAPO_CONFIG_HPP
#define BAPO_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bapo/batch.hpp"
#include "bapo/env.hpp"
#include "bapo/objective.hpp"

namespace bapo {

enum class Algorithm { kBapo, kBapoMini, kGrpo, kGrpoDelayed, kDapo };

Algorithm parse_algorithm(const std::string& s);
std::string to_string(Algorithm a);

enum class KlTarget {
  /// The delayed rollout policy α.
  kRollout,
  /// The initial parameters, frozen.
  kReference,
};

struct TrainerConfig {
  Algorithm algorithm = Algorithm::kBapo;
  int group_size = 8;
  std::size_t batch_size = 64;
  std::size_t rollout_batch = 64;
  std::uint64_t rollout_delay = 5;
  std::uint64_t reeval_every = 5;
  double beta = 0.001;
  double eps_low = 0.2;
  double eps_high = 0.2;
  double eps_smooth = kDefaultSmoothing;
  double learning_rate = 0.05;
  std::uint64_t total_steps = 200;
  std::uint64_t seed = 42;
  FilterMode filter_mode = FilterMode::kRange;
  int dapo_max_resample = 4;
  Thresholds thresholds;
  std::size_t cap_bad = 0;   // 0: training batch size
  std::size_t cap_high = 0;  // 0: training batch size
  std::size_t max_reeval = 128;
  std::uint64_t high_window = kHighRecencyWindow;
  bool use_bad_buffer = true;
  bool use_high_buffer = true;
  bool mini_test = false;
  KlTarget kl_target = KlTarget::kRollout;
  double entropy_coef = 0.001;
  RatioLevel ratio_level = RatioLevel::kToken;
  bool clip_buffer_terms = true;
  LossNormalization normalization = LossNormalization::kBatchCap;
  int minibatches = 1;
  double r_tot_half_life = 0.0;
  double gaussian_mean = 0.5;
  double gaussian_std = 0.2;
  double uniform_keep = 0.6;
  std::size_t track_subset = 100;
  std::uint64_t track_seed = 7;
  std::uint64_t eval_every = 10;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  BatchConfig batch_config() const;
  ObjectiveConfig objective_config() const;
  bool dynamic_sampling() const { return algorithm == Algorithm::kDapo; }
};

/// Algorithm defaults before any explicit key is applied.
TrainerConfig preset(Algorithm algorithm);

/// Where the prompt universe comes from: a saved file or a generator config.
struct UniverseSource {
  std::optional<std::filesystem::path> file;
  UniverseConfig generate;
};

struct ExperimentConfig {
  TrainerConfig trainer;
  UniverseSource universe;
  /// Normalized text the config hash is computed from.
  std::string canonical;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, duplicate
/// keys and malformed values throw ConfigError with the field name.
ExperimentConfig parse_experiment_config(const std::string& text,
                                         std::optional<Algorithm> algorithm_override = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<Algorithm> algorithm_override = {});

/// Raw key-value map after comment stripping; shared with other config kinds.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Real number; also accepts a fraction like "1/8".
double parse_real(const std::string& field, const std::string& value);
std::uint64_t parse_count(const std::string& field, const std::string& value);
bool parse_bool(const std::string& field, const std::string& value);
Range parse_range(const std::string& field, const std::string& value);
std::vector<DifficultyBucket> parse_histogram(const std::string& field, const std::string& value);

/// Sorted `key = value` text of every effective setting.
std::string canonical_text(const ExperimentConfig& c);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& text);

PromptUniverse resolve_universe(const UniverseSource& source);

/// Missing universe file; reported with its own exit code.
class UniverseFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bapo

#endif  // BAPO_CONFIG_HPP
