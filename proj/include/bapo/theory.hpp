#ifndef BAPO_THEORY_HPP
#define BAPO_THEORY_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bapo/env.hpp"
#include "bapo/policy.hpp"

namespace bapo {

/// Stability constants K_i = (1 - sqrt(f_i + ε)) / sqrt(f_i + ε) for the three
/// batch subsets, where f_i is the subset's reward-variance floor.
struct KConstants {
  double K1 = 0.0, K2 = 0.0, K3 = 0.0;
  int group_size = 0;
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;
  double eps_smooth = 0.0;
  std::array<double, 3> floors{};
};

/// K for a single variance floor.
double stability_constant(double floor, double eps_smooth);

/// Throws std::invalid_argument outside G >= 2, c in (0,1), c2 < c3, ε >= 0.
KConstants k_constants(int group_size, double c1, double c2, double c3, double eps_smooth);

/// A prompt admitted to a subset whose reward variance is below the floor.
class FloorViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Enumerable test instance: a universe and the five policies of the bound.
struct BoundInstance {
  PromptUniverse universe;
  PolicyParams current;                 // π_θt
  PolicyParams updated;                 // π_θ
  std::array<PolicyParams, 3> behavior;  // α_1, α_2, α_3
  /// Subset each prompt is a candidate for (0, 1, 2); membership then
  /// depends on the exact μ under the matching behavior policy.
  std::vector<int> candidate;
  int group_size = 8;
  double c1 = 0.125, c2 = 0.25, c3 = 0.5;
  double eps_smooth = 1e-4;
  /// Replaces the computed floors (both in K and in the floor check).
  std::optional<std::array<double, 3>> floor_override;
  /// Decide membership from μ under π_θt instead of under α_i.
  bool membership_from_current = false;
  /// Throw on a floor violation; otherwise count it in the report.
  bool strict_floor = true;
};

struct SubsetTerms {
  std::size_t members = 0;
  double weight = 0.0;           // ρ mass of the subset
  double surrogate = 0.0;        // Σ ρ L_α
  double tv_updated = 0.0;       // Σ ρ TV(π_θ, α)
  double tv_current = 0.0;       // Σ ρ TV(π_θt, α)
  double lower_bound = 0.0;      // Σ ρ (L_α - 2K TV(π_θ,α) - 2 TV(π_θt,α))
};

struct BoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
  /// Same bound with each subset term renormalized by the subset's ρ mass.
  double rhs_renormalized = 0.0;
  double margin_renormalized = 0.0;
  std::array<SubsetTerms, 3> subsets{};
  /// Largest TV(π_θt, α_1) and TV(π_θt, α_3) over members.
  double delta1 = 0.0;
  double delta3 = 0.0;
  int floor_violations = 0;
  KConstants k;
};

/// Exact evaluation of both sides. Throws FloorViolation when a member's
/// variance under its behavior policy is below the floor.
BoundReport improvement_bound_check(const BoundInstance& instance);

/// Membership window for subset `i` (0-based) given the exact behavior mean.
bool in_subset(int subset, double mu, int group_size, double c1, double c2, double c3);

/// |E_p r - E_q r| <= 2 TV(p, q) + tol for ‖r‖∞ <= 1.
bool duality_check(const std::vector<double>& reward, const std::vector<double>& p,
                   const std::vector<double>& q, double tol = 1e-12);

struct VarianceMaximum {
  std::vector<double> argmax;
  double value = 0.0;
};

/// Scans μ in {0, 1/G, ..., 1} for the maximum of μ(1-μ).
VarianceMaximum variance_maximizer_check(int group_size);

struct TheoryConfig {
  int group_size = 8;
  double c1 = 0.125, c2 = 0.25, c3 = 0.5;
  double eps_smooth = 1e-4;
  std::uint64_t seed = 11;
  int prompts = 6;
  int vocab = 3;
  int length = 2;
  int trials = 1000;
  double tv_radius = 0.05;
  int adversarial_restarts = 50;
  int adversarial_iterations = 60;
  int duality_trials = 1000;
  std::vector<double> delta_sweep{0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5};
  int sweep_trials = 200;
  std::vector<int> maximizer_sizes{2, 3, 4, 5, 8, 16};
  std::optional<std::array<double, 3>> floor_override;
};

/// Reads `key = value` text. Throws ConfigError on unknown keys.
TheoryConfig parse_theory_config(const std::string& text);

struct Summary {
  double min = 0.0, mean = 0.0, max = 0.0;
};

struct SweepPoint {
  double delta = 0.0;
  int trials = 0;
  int floor_violations = 0;
  int bound_violations = 0;
  double min_margin = 0.0;
};

struct TheoryReport {
  KConstants k;
  bool k_closed_form_ok = false;
  bool k_monotone_ok = false;
  int trials = 0;
  double min_margin = 0.0;
  double min_margin_renormalized = 0.0;
  int renormalized_violations = 0;
  int adversarial_restarts = 0;
  double adversarial_min_margin = 0.0;
  Summary delta1, delta3;
  std::vector<SweepPoint> sweep;
  int duality_trials = 0;
  bool duality_ok = false;
  std::vector<std::pair<int, VarianceMaximum>> maximizer;
  bool maximizer_ok = false;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

/// Random enumerable instance with every TV(π_θ, α_i) and TV(π_θt, α_i)
/// at most `tv_radius` on every prompt.
BoundInstance random_bound_instance(const TheoryConfig& config, Rng& rng, double tv_radius);

/// Runs every check; failures are listed rather than thrown.
TheoryReport run_theory_suite(const TheoryConfig& config);

std::string theory_report_json(const TheoryReport& report);

}  // namespace bapo

#endif  // BAPO_THEORY_HPP
