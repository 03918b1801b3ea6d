#include "bapo/batch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace bapo {

namespace {

bool contains(const std::vector<int>& ids, int id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

template <typename T>
void drop_random(std::vector<T>& v, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count && !v.empty(); ++i) {
    v.erase(v.begin() + static_cast<std::ptrdiff_t>(rng.below(v.size())));
  }
}

}  // namespace

FilterMode parse_filter_mode(const std::string& s) {
  if (s == "range") return FilterMode::kRange;
  if (s == "gaussian") return FilterMode::kGaussian;
  if (s == "uniform") return FilterMode::kUniform;
  throw ConfigError("unknown filter mode '" + s + "' (expected range, gaussian or uniform)");
}

std::string to_string(FilterMode mode) {
  switch (mode) {
    case FilterMode::kRange: return "range";
    case FilterMode::kGaussian: return "gaussian";
    case FilterMode::kUniform: return "uniform";
  }
  return "range";
}

const char* to_string(Source s) {
  switch (s) {
    case Source::kFresh: return "fresh";
    case Source::kReevaluated: return "reevaluated";
    case Source::kReused: return "reused";
  }
  return "fresh";
}

void Thresholds::validate() const {
  if (c1 < 0.0 || c1 >= 1.0) throw ConfigError("c1 must lie in [0, 1)");
  for (const Range* r : {&c2_range, &c3_range}) {
    if (r->high < r->low) throw ConfigError("threshold range has high < low");
    if (r->low < 0.0 || r->high > 1.0) throw ConfigError("threshold ranges must lie in [0, 1]");
  }
  // c1 may touch the bottom of the c2 range; high admission then requires μ > c1.
  if (c1 > c2_range.low) throw ConfigError("c1 must not exceed the c2 range");
  // c2(r) <= c3(r) on [0, 1] iff it holds at both endpoints (both are linear).
  if (c2_range.low > c3_range.low || c2_range.high > c3_range.high) {
    throw ConfigError("c2 must not exceed c3 anywhere on the adaptation range");
  }
}

Thresholds adapt_thresholds(const Thresholds& th, double r_tot) {
  if (r_tot < 0.0 || r_tot > 1.0) throw std::invalid_argument("r_tot must lie in [0, 1]");
  if (th.c2_range.high < th.c2_range.low || th.c3_range.high < th.c3_range.low) {
    throw ConfigError("threshold range has high < low");
  }
  Thresholds out = th;
  out.r_tot = r_tot;
  out.c2 = r_tot * (th.c2_range.high - th.c2_range.low) + th.c2_range.low;
  out.c3 = r_tot * (th.c3_range.high - th.c3_range.low) + th.c3_range.low;
  return out;
}

void RewardTracker::observe_step(const std::vector<double>& group_means) {
  if (group_means.empty()) return;
  if (half_life_ <= 0.0) {
    for (double m : group_means) {
      sum_ += m;
      ++count_;
    }
    value_ = sum_ / static_cast<double>(count_);
    return;
  }
  const double step_mean =
      std::accumulate(group_means.begin(), group_means.end(), 0.0) / group_means.size();
  if (!seen_) {
    value_ = step_mean;
    seen_ = true;
  } else {
    const double decay = std::pow(0.5, 1.0 / half_life_);
    value_ = decay * value_ + (1.0 - decay) * step_mean;
  }
}

std::vector<const BatchGroup*> TrainingBatch::all() const {
  std::vector<const BatchGroup*> out;
  for (const auto* part : {&x1, &x2, &x3}) {
    for (const auto& g : *part) out.push_back(&g);
  }
  return out;
}

BatchConfig mini_test_mode(BatchConfig config) {
  config.mini_test = true;
  config.filter_mode = FilterMode::kRange;
  return config;
}

Thresholds mini_test_thresholds() {
  Thresholds th;
  th.c1 = 0.0;
  th.c2_range = {0.5, 0.5};
  th.c3_range = {0.5, 0.5};
  th.c2 = 0.5;
  th.c3 = 0.5;
  return th;
}

double gaussian_acceptance(double mean, double center, double std_dev) {
  const double d = mean - center;
  return std::exp(-d * d / (2.0 * std_dev * std_dev));
}

std::vector<ResponseGroup> filter_fresh(const std::vector<ResponseGroup>& groups,
                                        const BatchConfig& config, Rng& rng) {
  std::vector<ResponseGroup> kept;
  const double G = config.group_size;
  for (const auto& g : groups) {
    bool keep = false;
    switch (config.filter_mode) {
      case FilterMode::kRange:
        keep = g.mean >= 1.0 / G && g.mean <= (G - 1.0) / G;
        break;
      case FilterMode::kGaussian:
        // Draw first so the stream does not depend on the variance outcome.
        keep = rng.bernoulli(gaussian_acceptance(g.mean, config.gaussian_mean, config.gaussian_std));
        keep = keep && !g.zero_variance();
        break;
      case FilterMode::kUniform:
        keep = rng.bernoulli(config.uniform_keep);
        break;
    }
    if (keep) kept.push_back(g);
  }
  return kept;
}

ReevalOutcome reevaluate_bad(const std::vector<BufferEntry>& entries, const PolicyParams& current,
                             const PromptUniverse& universe, double c1, int group_size,
                             double smoothing, std::uint64_t seed, std::uint64_t step,
                             const std::vector<int>& skip) {
  ReevalOutcome out;
  for (const auto& e : entries) {
    const int id = e.prompt_id();
    if (contains(skip, id)) continue;
    Rng rng = stream(seed, Stream::kReevaluation, {step, static_cast<std::uint64_t>(id)});
    ResponseGroup g = rollout_group(current, universe.prompt(id), group_size, smoothing, rng);
    ++out.rollout_groups;
    if (g.mean > c1 && g.mean < 1.0) {
      out.removed.push_back(id);
      out.admitted.push_back(std::move(g));
    } else if (g.mean == 1.0) {
      out.removed.push_back(id);
    }
  }
  return out;
}

std::vector<BufferEntry> fill_high(const FifoBuffer& high, std::size_t batch_size, std::size_t n1,
                                   std::size_t n2, Rng& rng, std::uint64_t step,
                                   const std::vector<int>& exclude, std::uint64_t window) {
  std::vector<const BufferEntry*> pool;
  for (const auto* e : high.eligible(step, window)) {
    if (!contains(exclude, e->prompt_id())) pool.push_back(e);
  }
  const std::size_t room = n1 + n2 >= batch_size ? 0 : batch_size - n1 - n2;
  const std::size_t k = std::min(pool.size(), room);
  std::vector<BufferEntry> out;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(*pool[i]);
  }
  return out;
}

void trim_to_budget(TrainingBatch& batch, Rng& rng) {
  if (batch.size() <= batch.size_cap) return;
  for (auto* tier : {&batch.x3, &batch.x2, &batch.x1}) {
    const std::size_t excess = batch.size() - batch.size_cap;
    drop_random(*tier, std::min(excess, tier->size()), rng);
    if (batch.size() <= batch.size_cap) return;
  }
}

double fresh_variance_floor(int group_size) {
  const double G = group_size;
  return (G - 1.0) / (G * G);
}

double reeval_variance_floor(double c1, int group_size, bool mini_test) {
  return mini_test ? fresh_variance_floor(group_size) : c1 * (1.0 - c1);
}

double reuse_variance_floor(double c2, double c3) {
  return std::min(c2 * (1.0 - c2), c3 * (1.0 - c3));
}

BatchResult construct_batch(const std::vector<ResponseGroup>& fresh, Buffers& buffers,
                            Thresholds& thresholds, RewardTracker& tracker,
                            const BatchConfig& config, const PolicyParams& current,
                            const PromptUniverse& universe, std::uint64_t seed, std::uint64_t step) {
  BatchResult result;
  result.c2_used = thresholds.c2;
  result.c3_used = thresholds.c3;
  TrainingBatch& batch = result.batch;
  batch.size_cap = config.batch_size;

  Rng filter_rng = stream(seed, Stream::kFilter, {step});
  const double floor1 =
      config.filter_mode == FilterMode::kUniform ? 0.0 : fresh_variance_floor(config.group_size);
  for (auto& g : filter_fresh(fresh, config, filter_rng)) {
    batch.x1.push_back({std::move(g), Source::kFresh, floor1});
  }

  std::vector<int> taken;
  for (const auto& b : batch.x1) taken.push_back(b.group.prompt_id);

  if (config.use_bad_buffer && step > 0 && step % config.reeval_every == 0 && !buffers.bad.empty()) {
    const auto entries = drain_for_reeval(buffers.bad, config.max_reeval);
    auto outcome = reevaluate_bad(entries, current, universe, thresholds.c1, config.group_size,
                                  config.smoothing, seed, step, taken);
    result.reeval_groups = outcome.rollout_groups;
    for (int id : outcome.removed) buffers.bad.remove_prompt(id);
    const double floor2 = reeval_variance_floor(thresholds.c1, config.group_size, config.mini_test);
    for (auto& g : outcome.admitted) {
      taken.push_back(g.prompt_id);
      batch.x2.push_back({std::move(g), Source::kReevaluated, floor2});
    }
  }

  if (config.use_high_buffer) {
    buffers.high.purge_stale(step, config.high_window);
    Rng fill_rng = stream(seed, Stream::kFillHigh, {step});
    for (auto& e : fill_high(buffers.high, config.batch_size, batch.x1.size(), batch.x2.size(),
                             fill_rng, step, taken, config.high_window)) {
      const double floor3 = reuse_variance_floor(e.admit_low, e.admit_high);
      batch.x3.push_back({std::move(e.group), Source::kReused, floor3});
    }
  }

  Rng trim_rng = stream(seed, Stream::kTrim, {step});
  trim_to_budget(batch, trim_rng);
  result.skip = batch.empty();

  std::vector<double> means;
  for (const auto& g : fresh) means.push_back(g.mean);
  tracker.observe_step(means);
  thresholds = adapt_thresholds(thresholds, tracker.value());
  return result;
}

}  // namespace bapo
