#ifndef BAPO_RANDOM_HPP
#define BAPO_RANDOM_HPP

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace bapo {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream.
///
/// Streams are derived from a root seed and a list of integer tags
/// (step, prompt, purpose, ...). Work that consumes a derived stream gives the
/// same result regardless of the order or thread it runs on, so rollouts over
/// an immutable policy snapshot can be fanned out freely.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  /// Uniform double in [0, 1) built from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n). Rejection sampling keeps it exact.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Stream purposes; values are part of the derivation and must stay stable.
enum class Stream : std::uint64_t {
  kPromptSelection = 1,
  kFreshRollout = 2,
  kReevaluation = 3,
  kFilter = 4,
  kFillHigh = 5,
  kTrim = 6,
  kEvaluation = 7,
  kDapoResample = 8,
  kTracking = 9,
  kUniverse = 10,
  kMinibatch = 11,
};

inline Rng stream(std::uint64_t seed, Stream s, std::initializer_list<std::uint64_t> tags = {}) {
  std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(s)));
  for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

}  // namespace bapo

#endif  // BAPO_RANDOM_HPP
