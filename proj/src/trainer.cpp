#include "bapo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

namespace bapo {

namespace {

std::size_t resolve_capacity(std::size_t configured, std::size_t batch_size) {
  return configured ? configured : capacity_defaults(batch_size).bad;
}

std::string diagnostic_dump(std::uint64_t step, const PolicyParams& params,
                            const TrainingBatch& batch) {
  nlohmann::json j;
  j["step"] = step;
  j["policy"] = nlohmann::json::parse(policy_to_json(params));
  auto& groups = j["batch"] = nlohmann::json::array();
  for (const auto* bg : batch.all()) {
    nlohmann::json g;
    g["prompt"] = bg->group.prompt_id;
    g["source"] = to_string(bg->source);
    g["rewards"] = bg->group.rewards;
    g["advantages"] = bg->group.advantages;
    g["behavior_step"] = bg->group.behavior_step;
    groups.push_back(std::move(g));
  }
  return j.dump();
}

PolicyParams checked_update(const PolicyParams& params, const PolicyGradient& gradient, double lr,
                            std::uint64_t step, const TrainingBatch& batch) {
  try {
    return apply_update(params, gradient, lr);
  } catch (const NonFiniteError& e) {
    throw NonFiniteLoss("update at step " + std::to_string(step) + " failed: " + e.what(),
                        diagnostic_dump(step, params, batch));
  }
}

}  // namespace

Trainer::Trainer(TrainerConfig config, PromptUniverse universe)
    : config_(std::move(config)),
      universe_(std::move(universe)),
      buffers_{FifoBuffer(BufferKind::kBad, resolve_capacity(config_.cap_bad, config_.batch_size)),
               FifoBuffer(BufferKind::kHigh, resolve_capacity(config_.cap_high, config_.batch_size))},
      tracker_(config_.r_tot_half_life),
      ledger_(config_.group_size) {
  config_.validate();
  universe_.validate();
  policy_ = PolicyParams(universe_.size(), universe_.vocab_size, universe_.max_len, 0);
  rollout_ = policy_;
  reference_ = policy_;
  thresholds_ = adapt_thresholds(config_.thresholds, 0.0);

  const auto n = std::min<std::size_t>(config_.track_subset, universe_.size());
  std::vector<int> ids(universe_.size());
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = stream(config_.track_seed, Stream::kTracking);
  for (std::size_t i = 0; i < n; ++i) std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
  tracked_ids_.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(tracked_ids_.begin(), tracked_ids_.end());
}

Trainer::Trainer(TrainerConfig config, PromptUniverse universe, PolicyParams initial)
    : Trainer(std::move(config), std::move(universe)) {
  if (initial.num_prompts() != universe_.size() || initial.vocab_size() != universe_.vocab_size ||
      initial.max_len() != universe_.max_len) {
    throw std::invalid_argument("initial policy shape does not match the universe");
  }
  policy_ = initial.with_step_tag(0);
  rollout_ = policy_;
  reference_ = policy_;
}

std::vector<int> Trainer::select_prompts(Stream s, std::initializer_list<std::uint64_t> tags,
                                         std::size_t count, const std::vector<int>& exclude) const {
  // Weighted sampling without replacement: keep the largest u^(1/w) keys.
  Rng rng = stream(config_.seed, s, tags);
  std::vector<std::pair<double, int>> keyed;
  for (int id = 0; id < universe_.size(); ++id) {
    const double u = rng.uniform();
    const double w = universe_.weights[id];
    if (w <= 0.0 || std::find(exclude.begin(), exclude.end(), id) != exclude.end()) continue;
    keyed.emplace_back(std::log(std::max(u, 1e-300)) / w, id);
  }
  const auto k = std::min(count, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<int> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(keyed[i].second);
  return out;
}

std::vector<ResponseGroup> Trainer::rollout(const std::vector<int>& prompts, Stream s,
                                            std::uint64_t round) {
  std::vector<ResponseGroup> groups;
  groups.reserve(prompts.size());
  for (int id : prompts) {
    Rng rng = stream(config_.seed, s, {step_, round, static_cast<std::uint64_t>(id)});
    groups.push_back(
        rollout_group(rollout_, universe_.prompt(id), config_.group_size, config_.eps_smooth, rng));
  }
  return groups;
}

std::vector<int> Trainer::evaluate_tracked(std::uint64_t label_step) {
  std::vector<int> bins;
  bins.reserve(tracked_ids_.size());
  for (int id : tracked_ids_) {
    Rng rng = stream(config_.seed, Stream::kEvaluation, {label_step, static_cast<std::uint64_t>(id)});
    const auto g =
        rollout_group(policy_, universe_.prompt(id), config_.group_size, config_.eps_smooth, rng);
    bins.push_back(g.correct());
  }
  ledger_.charge(RolloutPurpose::kEvaluation, tracked_ids_.size());
  tracked_bins_[label_step] = bins;
  return bins;
}

MetricsRecord Trainer::step(const std::function<void(const StepTrace&)>& observer) {
  const std::uint64_t t = step_;
  MetricsRecord rec;
  rec.step = t;
  rec.algorithm = to_string(config_.algorithm);

  // sync
  if (t % config_.rollout_delay == 0) {
    rollout_ = policy_;
    rec.synced = true;
    rec.phases.push_back("sync");
  }
  rec.rollout_step_tag = rollout_.step_tag();

  if (t % config_.eval_every == 0) {
    rec.bins = bin_histogram(evaluate_tracked(t), config_.group_size);
  }

  // rollout
  std::vector<int> used = select_prompts(Stream::kPromptSelection, {t}, config_.rollout_batch, {});
  std::vector<ResponseGroup> fresh = rollout(used, Stream::kFreshRollout, 0);
  ledger_.charge(RolloutPurpose::kFresh, fresh.size());
  StepTrace trace;
  trace.fresh_groups = fresh.size();
  trace.dapo_rounds = 1;
  if (config_.dynamic_sampling()) {
    auto valid = [&] {
      return static_cast<std::size_t>(std::count_if(
          fresh.begin(), fresh.end(), [](const ResponseGroup& g) { return !g.zero_variance(); }));
    };
    while (valid() < config_.batch_size && trace.dapo_rounds < config_.dapo_max_resample) {
      const auto round = static_cast<std::uint64_t>(trace.dapo_rounds);
      auto more = select_prompts(Stream::kDapoResample, {t, round}, config_.rollout_batch, used);
      if (more.empty()) break;
      auto groups = rollout(more, Stream::kDapoResample, round);
      ledger_.charge(RolloutPurpose::kDapoResample, groups.size());
      trace.resample_groups += groups.size();
      used.insert(used.end(), more.begin(), more.end());
      for (auto& g : groups) fresh.push_back(std::move(g));
      ++trace.dapo_rounds;
    }
  }
  rec.phases.push_back("rollout");

  rec.fresh_groups = fresh.size();
  double reward_sum = 0.0;
  for (const auto& g : fresh) {
    reward_sum += g.mean;
    if (g.zero_variance()) ++rec.zero_variance_groups;
  }
  rec.mean_reward = fresh.empty() ? 0.0 : reward_sum / static_cast<double>(fresh.size());
  {
    double tv = 0.0;
    for (int id : used) tv += exact_tv(policy_, rollout_, id);
    rec.tv_to_rollout_policy = used.empty() ? 0.0 : tv / static_cast<double>(used.size());
  }

  // admit
  if (config_.use_bad_buffer || config_.use_high_buffer) {
    for (const auto& g : fresh) {
      if (config_.use_bad_buffer) admit_bad(buffers_.bad, g, thresholds_.c1, t);
      // Disjoint buffers: a group at μ = c1 is difficult, not high-quality.
      if (config_.use_high_buffer && g.mean > thresholds_.c1) {
        admit_high(buffers_.high, g, thresholds_.c2, thresholds_.c3, t);
      }
    }
    rec.phases.push_back("admit");
  }

  // construct
  const PolicyParams current = policy_;
  BatchResult built = construct_batch(fresh, buffers_, thresholds_, tracker_, config_.batch_config(),
                                      current, universe_, config_.seed, t);
  ledger_.charge(RolloutPurpose::kReevaluation, built.reeval_groups);
  trace.reeval_groups = built.reeval_groups;
  rec.phases.push_back("construct");
  rec.x1 = built.batch.x1.size();
  rec.x2 = built.batch.x2.size();
  rec.x3 = built.batch.x3.size();
  rec.skipped = built.skip;
  rec.c2 = built.c2_used;
  rec.c3 = built.c3_used;
  rec.r_tot = thresholds_.r_tot;

  // update
  const PolicyParams& kl_target = config_.kl_target == KlTarget::kRollout ? rollout_ : reference_;
  const ObjectiveConfig objective = config_.objective_config();
  if (!built.skip) {
    PolicyParams next = policy_;
    PolicyGradient total = PolicyGradient::Zero(policy_.logits().rows(), policy_.logits().cols());
    if (config_.minibatches <= 1) {
      const auto gr = surrogate_gradient(policy_, built.batch, objective, kl_target);
      rec.surrogate = gr.terms.surrogate;
      rec.kl = gr.terms.kl;
      rec.entropy_bonus = gr.terms.entropy;
      rec.objective = gr.terms.total;
      rec.clip_fraction = gr.terms.clip_fraction;
      total = gr.gradient;
    } else {
      const auto terms = surrogate_objective(policy_, built.batch, objective, kl_target);
      rec.surrogate = terms.surrogate;
      rec.kl = terms.kl;
      rec.entropy_bonus = terms.entropy;
      rec.objective = terms.total;
      rec.clip_fraction = terms.clip_fraction;
      // Split groups into contiguous chunks of a shuffled order; sources kept.
      std::vector<std::pair<int, std::size_t>> order;
      for (std::size_t i = 0; i < built.batch.x1.size(); ++i) order.emplace_back(1, i);
      for (std::size_t i = 0; i < built.batch.x2.size(); ++i) order.emplace_back(2, i);
      for (std::size_t i = 0; i < built.batch.x3.size(); ++i) order.emplace_back(3, i);
      Rng rng = stream(config_.seed, Stream::kMinibatch, {t});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      const auto k = static_cast<std::size_t>(config_.minibatches);
      const std::size_t chunk = (order.size() + k - 1) / k;
      for (std::size_t start = 0; start < order.size(); start += chunk) {
        TrainingBatch part;
        part.size_cap = (built.batch.size_cap + k - 1) / k;
        for (std::size_t i = start; i < std::min(order.size(), start + chunk); ++i) {
          const auto [tier, idx] = order[i];
          if (tier == 1) part.x1.push_back(built.batch.x1[idx]);
          if (tier == 2) part.x2.push_back(built.batch.x2[idx]);
          if (tier == 3) part.x3.push_back(built.batch.x3[idx]);
        }
        const auto gr = surrogate_gradient(next, part, objective, kl_target);
        if (!gr.gradient.allFinite()) {
          throw NonFiniteLoss("non-finite gradient at step " + std::to_string(t),
                              diagnostic_dump(t, next, part));
        }
        total += gr.gradient;
        next = checked_update(next, gr.gradient, config_.learning_rate, t, part);
      }
    }
    if (!std::isfinite(rec.objective) || !total.allFinite()) {
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(t),
                          diagnostic_dump(t, policy_, built.batch));
    }
    rec.grad_norm = total.norm();
    if (config_.minibatches <= 1) {
      next = checked_update(policy_, total, config_.learning_rate, t, built.batch);
    }
    policy_ = next.with_step_tag(t + 1);
    rec.phases.push_back("update");
  } else {
    policy_ = policy_.with_step_tag(t + 1);
  }

  double entropy = 0.0;
  for (int id = 0; id < universe_.size(); ++id) entropy += exact_entropy(policy_, id);
  rec.policy_entropy = entropy / universe_.size();

  rec.ledger_fresh = ledger_.groups(RolloutPurpose::kFresh);
  rec.ledger_reevaluation = ledger_.groups(RolloutPurpose::kReevaluation);
  rec.ledger_dapo_resample = ledger_.groups(RolloutPurpose::kDapoResample);
  rec.ledger_evaluation = ledger_.groups(RolloutPurpose::kEvaluation);
  rec.cumulative_groups = ledger_.cumulative_groups();
  rec.cumulative_responses = ledger_.cumulative_responses();
  rec.buffer_bad = buffers_.bad.size();
  rec.buffer_high = buffers_.high.size();

  if (observer) {
    trace.step = t;
    trace.fresh = &fresh;
    trace.batch = &built;
    trace.current = &current;
    trace.rollout = &rollout_;
    trace.record = &rec;
    trace.buffers = &buffers_;
    observer(trace);
  }
  ++step_;
  return rec;
}

RunResult Trainer::run(const std::function<void(const MetricsRecord&)>& on_record,
                       const std::function<void(const StepTrace&)>& observer) {
  RunResult result;
  while (step_ < config_.total_steps) {
    auto rec = step(observer);
    if (on_record) on_record(rec);
    result.records.push_back(std::move(rec));
  }
  evaluate_tracked(config_.total_steps);
  result.final_policy = policy_;
  result.ledger = ledger_;
  result.tracked_ids = tracked_ids_;
  result.tracked_bins = tracked_bins_;
  return result;
}

RunResult run_training(const TrainerConfig& config, const PromptUniverse& universe,
                       const std::function<void(const MetricsRecord&)>& on_record,
                       const std::function<void(const StepTrace&)>& observer) {
  Trainer trainer(config, universe);
  return trainer.run(on_record, observer);
}

}  // namespace bapo
