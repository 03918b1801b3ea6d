#include "bapo/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bapo/config.hpp"

namespace bapo {

namespace {

constexpr double kMarginTolerance = 1e-9;

double bernoulli_variance(double mu) { return mu * (1.0 - mu); }

std::array<double, 3> subset_floors(int G, double c1, double c2, double c3) {
  const double g = static_cast<double>(G);
  return {(g - 1.0) / (g * g), bernoulli_variance(c1),
          std::min(bernoulli_variance(c2), bernoulli_variance(c3))};
}

// Random universe whose prompts each accept between 1 and V^L - 1 responses.
PromptUniverse random_universe(int prompts, int vocab, int length, Rng& rng) {
  const auto space = response_space_size(vocab, length);
  PromptUniverse u;
  u.vocab_size = vocab;
  u.max_len = length;
  std::vector<std::uint64_t> idx(space);
  for (int p = 0; p < prompts; ++p) {
    std::iota(idx.begin(), idx.end(), 0);
    const auto k = 1 + rng.below(space - 1);
    for (std::uint64_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(space - i)]);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    PromptSpec spec;
    spec.id = p;
    for (std::uint64_t i = 0; i < k; ++i) spec.accepted.push_back(sequence_from_index(idx[i], vocab, length));
    spec.difficulty = static_cast<double>(k) / static_cast<double>(space);
    u.prompts.push_back(std::move(spec));
  }
  u.weights.assign(prompts, 1.0 / prompts);
  return u;
}

LogitMatrix random_logits(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  LogitMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

// Per prompt, halves the noise until TV to every anchor is within `limit[p]`.
PolicyParams perturb(const PolicyParams& base, const std::vector<const PolicyParams*>& anchors,
                     const std::vector<double>& limit, Rng& rng) {
  const LogitMatrix noise = random_logits(base.logits().rows(), base.logits().cols(), 1.0, rng);
  LogitMatrix out = base.logits();
  const int L = base.max_len();
  for (int p = 0; p < base.num_prompts(); ++p) {
    double scale = 1.0;
    for (int tries = 0; tries < 60; ++tries) {
      out.middleRows(p * L, L) = base.logits().middleRows(p * L, L) + scale * noise.middleRows(p * L, L);
      PolicyParams candidate(out, base.num_prompts(), base.vocab_size(), L);
      bool ok = true;
      for (const auto* a : anchors) ok = ok && exact_tv(candidate, *a, p) <= limit[p];
      if (ok) break;
      scale *= 0.5;
      if (tries == 59) out.middleRows(p * L, L) = base.logits().middleRows(p * L, L);
    }
  }
  return PolicyParams(out, base.num_prompts(), base.vocab_size(), L);
}

std::vector<double> tv_limits(int prompts, double radius, Rng& rng, bool randomize) {
  std::vector<double> lim(prompts, radius);
  if (randomize) {
    for (auto& l : lim) l = radius * (0.05 + 0.95 * rng.uniform());
  }
  return lim;
}

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  return s;
}

std::vector<double> parse_real_list(const std::string& field, const std::string& value) {
  std::vector<double> out;
  std::istringstream in(value);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t");
    const auto e = cell.find_last_not_of(" \t");
    out.push_back(parse_real(field, b == std::string::npos ? "" : cell.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError(field + ": empty list");
  return out;
}

BoundInstance instance_with_limits(const TheoryConfig& config, Rng& rng,
                                   const std::vector<double>& current_limit,
                                   const std::vector<double>& updated_limit) {
  BoundInstance inst;
  inst.universe = random_universe(config.prompts, config.vocab, config.length, rng);
  inst.group_size = config.group_size;
  inst.c1 = config.c1;
  inst.c2 = config.c2;
  inst.c3 = config.c3;
  inst.eps_smooth = config.eps_smooth;
  inst.floor_override = config.floor_override;
  inst.current = PolicyParams(
      random_logits(static_cast<Eigen::Index>(config.prompts) * config.length, config.vocab, 1.5, rng),
      config.prompts, config.vocab, config.length);
  for (auto& b : inst.behavior) b = perturb(inst.current, {&inst.current}, current_limit, rng);
  inst.updated = perturb(inst.current, {&inst.behavior[0], &inst.behavior[1], &inst.behavior[2]},
                         updated_limit, rng);
  for (int p = 0; p < config.prompts; ++p) inst.candidate.push_back(static_cast<int>(rng.below(3)));
  return inst;
}

}  // namespace

double stability_constant(double floor, double eps_smooth) {
  const double s = std::sqrt(floor + eps_smooth);
  return (1.0 - s) / s;
}

KConstants k_constants(int group_size, double c1, double c2, double c3, double eps_smooth) {
  if (group_size < 2) throw std::invalid_argument("k_constants: group size must be >= 2");
  for (double c : {c1, c2, c3}) {
    if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("k_constants: thresholds must lie in (0, 1)");
  }
  if (!(c2 < c3)) throw std::invalid_argument("k_constants: need c2 < c3");
  if (!(eps_smooth >= 0.0)) throw std::invalid_argument("k_constants: eps_smooth must be >= 0");
  KConstants k;
  k.group_size = group_size;
  k.c1 = c1;
  k.c2 = c2;
  k.c3 = c3;
  k.eps_smooth = eps_smooth;
  k.floors = subset_floors(group_size, c1, c2, c3);
  k.K1 = stability_constant(k.floors[0], eps_smooth);
  k.K2 = stability_constant(k.floors[1], eps_smooth);
  k.K3 = stability_constant(k.floors[2], eps_smooth);
  return k;
}

bool in_subset(int subset, double mu, int group_size, double c1, double c2, double c3) {
  constexpr double tol = 1e-12;
  const double g = static_cast<double>(group_size);
  switch (subset) {
    case 0: return mu >= 1.0 / g - tol && mu <= (g - 1.0) / g + tol;
    // An upper bound of 1 would let the variance vanish; 1 - c1 keeps the floor.
    case 1: return mu > c1 && mu <= 1.0 - c1 + tol;
    case 2: return mu >= c2 - tol && mu <= c3 + tol;
    default: throw std::invalid_argument("subset index must be 0, 1 or 2");
  }
}

BoundReport improvement_bound_check(const BoundInstance& inst) {
  BoundReport rep;
  // K always comes from the thresholds; an override replaces the floors.
  rep.k = k_constants(inst.group_size, inst.c1, inst.c2, inst.c3, inst.eps_smooth);
  if (inst.floor_override) {
    rep.k.floors = *inst.floor_override;
    rep.k.K1 = stability_constant(rep.k.floors[0], inst.eps_smooth);
    rep.k.K2 = stability_constant(rep.k.floors[1], inst.eps_smooth);
    rep.k.K3 = stability_constant(rep.k.floors[2], inst.eps_smooth);
  }
  const std::array<double, 3> K{rep.k.K1, rep.k.K2, rep.k.K3};
  const auto& u = inst.universe;
  if (static_cast<int>(inst.candidate.size()) != u.size()) {
    throw std::invalid_argument("candidate list does not match the universe");
  }
  for (int x = 0; x < u.size(); ++x) {
    const int i = inst.candidate[x];
    const auto& alpha = inst.behavior.at(i);
    const auto& prompt = u.prompt(x);
    const double mu_alpha = exact_expected_reward(alpha, prompt);
    const double mu_member =
        inst.membership_from_current ? exact_expected_reward(inst.current, prompt) : mu_alpha;
    if (!in_subset(i, mu_member, inst.group_size, inst.c1, inst.c2, inst.c3)) continue;
    const double var = bernoulli_variance(mu_alpha);
    if (var < rep.k.floors[i] - 1e-15) {
      if (inst.strict_floor) {
        std::ostringstream msg;
        msg << "prompt " << x << " in subset " << i + 1 << " has variance " << var
            << " below floor " << rep.k.floors[i];
        throw FloorViolation(msg.str());
      }
      ++rep.floor_violations;
    }
    const double rho = u.weights[x];
    const double sigma = std::sqrt(var + inst.eps_smooth);
    const double j_new = exact_expected_reward(inst.updated, prompt);
    const double j_cur = exact_expected_reward(inst.current, prompt);
    const double surrogate = (j_new - mu_alpha) / sigma;
    const double tv_new = exact_tv(inst.updated, alpha, x);
    const double tv_cur = exact_tv(inst.current, alpha, x);
    auto& s = rep.subsets[i];
    ++s.members;
    s.weight += rho;
    s.surrogate += rho * surrogate;
    s.tv_updated += rho * tv_new;
    s.tv_current += rho * tv_cur;
    s.lower_bound += rho * (surrogate - 2.0 * K[i] * tv_new - 2.0 * tv_cur);
    rep.lhs += rho * (j_new - j_cur);
    if (i == 0) rep.delta1 = std::max(rep.delta1, tv_cur);
    if (i == 2) rep.delta3 = std::max(rep.delta3, tv_cur);
  }
  for (const auto& s : rep.subsets) {
    rep.rhs += s.lower_bound;
    if (s.weight > 0.0) rep.rhs_renormalized += s.lower_bound / s.weight;
  }
  rep.margin = rep.lhs - rep.rhs;
  rep.margin_renormalized = rep.lhs - rep.rhs_renormalized;
  return rep;
}

bool duality_check(const std::vector<double>& reward, const std::vector<double>& p,
                   const std::vector<double>& q, double tol) {
  if (reward.size() != p.size() || p.size() != q.size()) {
    throw std::invalid_argument("duality_check: size mismatch");
  }
  double ep = 0.0, eq = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (std::abs(reward[i]) > 1.0) throw std::invalid_argument("duality_check: |r| > 1");
    ep += p[i] * reward[i];
    eq += q[i] * reward[i];
    l1 += std::abs(p[i] - q[i]);
  }
  return std::abs(ep - eq) <= 2.0 * (0.5 * l1) + tol;
}

VarianceMaximum variance_maximizer_check(int group_size) {
  if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
  VarianceMaximum best;
  best.value = -1.0;
  for (int k = 0; k <= group_size; ++k) {
    const double mu = static_cast<double>(k) / group_size;
    const double v = bernoulli_variance(mu);
    if (v > best.value + 1e-15) {
      best.value = v;
      best.argmax = {mu};
    } else if (std::abs(v - best.value) <= 1e-15) {
      best.argmax.push_back(mu);
    }
  }
  return best;
}

TheoryConfig parse_theory_config(const std::string& text) {
  TheoryConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "group_size") c.group_size = static_cast<int>(parse_count(key, value));
    else if (key == "c1") c.c1 = parse_real(key, value);
    else if (key == "c2") c.c2 = parse_real(key, value);
    else if (key == "c3") c.c3 = parse_real(key, value);
    else if (key == "eps_smooth") c.eps_smooth = parse_real(key, value);
    else if (key == "seed") c.seed = parse_count(key, value);
    else if (key == "prompts") c.prompts = static_cast<int>(parse_count(key, value));
    else if (key == "vocab") c.vocab = static_cast<int>(parse_count(key, value));
    else if (key == "length") c.length = static_cast<int>(parse_count(key, value));
    else if (key == "trials") c.trials = static_cast<int>(parse_count(key, value));
    else if (key == "tv_radius") c.tv_radius = parse_real(key, value);
    else if (key == "adversarial_restarts") c.adversarial_restarts = static_cast<int>(parse_count(key, value));
    else if (key == "adversarial_iterations") c.adversarial_iterations = static_cast<int>(parse_count(key, value));
    else if (key == "duality_trials") c.duality_trials = static_cast<int>(parse_count(key, value));
    else if (key == "delta_sweep") c.delta_sweep = parse_real_list(key, value);
    else if (key == "sweep_trials") c.sweep_trials = static_cast<int>(parse_count(key, value));
    else if (key == "maximizer_sizes") {
      c.maximizer_sizes.clear();
      for (double g : parse_real_list(key, value)) c.maximizer_sizes.push_back(static_cast<int>(g));
    } else if (key == "floor_override") {
      const auto f = parse_real_list(key, value);
      if (f.size() != 3) throw ConfigError("floor_override: expected three comma-separated floors");
      c.floor_override = std::array<double, 3>{f[0], f[1], f[2]};
    } else {
      throw ConfigError("unknown theory config key '" + key + "'");
    }
  }
  if (c.group_size < 2) throw ConfigError("group_size: must be >= 2");
  if (c.prompts < 1 || c.vocab < 2 || c.length < 1) {
    throw ConfigError("prompts/vocab/length: instance is degenerate");
  }
  response_space_size(c.vocab, c.length);
  return c;
}

BoundInstance random_bound_instance(const TheoryConfig& config, Rng& rng, double tv_radius) {
  return instance_with_limits(config, rng, tv_limits(config.prompts, tv_radius, rng, true),
                              std::vector<double>(config.prompts, tv_radius));
}

TheoryReport run_theory_suite(const TheoryConfig& config) {
  TheoryReport rep;

  // K constants against the equivalent 1/sqrt(f + ε) - 1 form on a grid.
  rep.k_closed_form_ok = true;
  for (int G : {2, 4, 8, 16, 32}) {
    for (double c1 : {0.0625, 0.125, 0.25}) {
      for (auto [c2, c3] : {std::pair{0.25, 0.5}, std::pair{0.125, 0.375}, std::pair{0.5, 0.625}}) {
        for (double eps : {0.0, 1e-4}) {
          const auto k = k_constants(G, c1, c2, c3, eps);
          const double g = G;
          const double f3 = std::min(c2 * (1 - c2), c3 * (1 - c3));
          const double e1 = 1.0 / std::sqrt((g - 1) / (g * g) + eps) - 1.0;
          const double e2 = 1.0 / std::sqrt(c1 * (1 - c1) + eps) - 1.0;
          const double e3 = 1.0 / std::sqrt(f3 + eps) - 1.0;
          if (std::abs(k.K1 - e1) > 1e-12 || std::abs(k.K2 - e2) > 1e-12 ||
              std::abs(k.K3 - e3) > 1e-12) {
            rep.k_closed_form_ok = false;
          }
        }
      }
    }
  }
  if (!rep.k_closed_form_ok) rep.failures.push_back("K constants disagree with the closed form");
  rep.k_monotone_ok = true;
  for (double eps : {0.0, 1e-4}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 1; i <= 25; ++i) {
      const double k = stability_constant(0.01 * i, eps);
      if (!(k < prev) || !std::isfinite(k) || k < 0.0) rep.k_monotone_ok = false;
      prev = k;
    }
  }
  if (!rep.k_monotone_ok) rep.failures.push_back("K is not decreasing in the variance floor");

  try {
    rep.k = k_constants(config.group_size, config.c1, config.c2, config.c3, config.eps_smooth);
  } catch (const std::invalid_argument& e) {
    rep.failures.push_back(std::string("invalid thresholds: ") + e.what());
    return rep;
  }
  if (config.floor_override) rep.k.floors = *config.floor_override;

  // Randomized trials.
  rep.min_margin = std::numeric_limits<double>::infinity();
  rep.min_margin_renormalized = std::numeric_limits<double>::infinity();
  std::vector<double> d1, d3;
  try {
    for (int t = 0; t < config.trials; ++t) {
      Rng rng = stream(config.seed, Stream::kEvaluation, {1, static_cast<std::uint64_t>(t)});
      const auto inst = random_bound_instance(config, rng, config.tv_radius);
      const auto r = improvement_bound_check(inst);
      ++rep.trials;
      rep.min_margin = std::min(rep.min_margin, r.margin);
      rep.min_margin_renormalized = std::min(rep.min_margin_renormalized, r.margin_renormalized);
      if (r.margin_renormalized < -kMarginTolerance) ++rep.renormalized_violations;
      if (r.subsets[0].members) d1.push_back(r.delta1);
      if (r.subsets[2].members) d3.push_back(r.delta3);
    }
  } catch (const FloorViolation& e) {
    rep.failures.push_back(std::string("floor violation: ") + e.what());
  }
  rep.delta1 = summarize(d1);
  rep.delta3 = summarize(d3);
  if (rep.min_margin < -kMarginTolerance) rep.failures.push_back("improvement bound violated");

  // Adversarial probe: descend the margin over π_θ on two-prompt instances,
  // staying inside the TV ball around every α_i.
  rep.adversarial_min_margin = std::numeric_limits<double>::infinity();
  if (rep.passed()) {
    TheoryConfig small = config;
    small.prompts = 2;
    for (int r = 0; r < config.adversarial_restarts; ++r) {
      Rng rng = stream(config.seed, Stream::kEvaluation, {2, static_cast<std::uint64_t>(r)});
      BoundInstance inst = random_bound_instance(small, rng, config.tv_radius);
      for (int tries = 0; tries < 50; ++tries) {
        const auto probe = improvement_bound_check(inst);
        if (probe.subsets[0].members + probe.subsets[1].members + probe.subsets[2].members > 0) break;
        inst = random_bound_instance(small, rng, config.tv_radius);
      }
      auto feasible = [&](const PolicyParams& p) {
        for (int x = 0; x < small.prompts; ++x) {
          for (const auto& a : inst.behavior) {
            if (exact_tv(p, a, x) > config.tv_radius) return false;
          }
        }
        return true;
      };
      auto margin_of = [&](const LogitMatrix& z) {
        BoundInstance probe = inst;
        probe.updated = PolicyParams(z, small.prompts, small.vocab, small.length);
        return improvement_bound_check(probe).margin;
      };
      LogitMatrix z = inst.updated.logits();
      double m = margin_of(z);
      rep.adversarial_min_margin = std::min(rep.adversarial_min_margin, m);
      ++rep.adversarial_restarts;
      constexpr double h = 1e-6;
      for (int it = 0; it < config.adversarial_iterations; ++it) {
        LogitMatrix grad(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
          LogitMatrix zp = z, zm = z;
          zp.data()[i] += h;
          zm.data()[i] -= h;
          grad.data()[i] = (margin_of(zp) - margin_of(zm)) / (2 * h);
        }
        if (grad.norm() == 0.0) break;
        LogitMatrix step = -grad / grad.norm();
        double eta = 0.5;
        bool moved = false;
        for (int b = 0; b < 20 && !moved; ++b, eta *= 0.5) {
          LogitMatrix cand = z + eta * step;
          if (feasible(PolicyParams(cand, small.prompts, small.vocab, small.length))) {
            const double mc = margin_of(cand);
            if (mc < m) {
              z = cand;
              m = mc;
              moved = true;
            }
          }
        }
        rep.adversarial_min_margin = std::min(rep.adversarial_min_margin, m);
        if (!moved) break;
      }
    }
    if (rep.adversarial_min_margin < -kMarginTolerance) {
      rep.failures.push_back("adversarial probe found a bound violation");
    }
  }

  // δ sweep: membership decided under π_θt, so large drift can break floors.
  for (double delta : config.delta_sweep) {
    SweepPoint pt;
    pt.delta = delta;
    pt.min_margin = std::numeric_limits<double>::infinity();
    for (int t = 0; t < config.sweep_trials; ++t) {
      Rng rng = stream(config.seed, Stream::kEvaluation,
                       {3, static_cast<std::uint64_t>(delta * 1e6), static_cast<std::uint64_t>(t)});
      BoundInstance inst = random_bound_instance(config, rng, delta);
      inst.membership_from_current = true;
      inst.strict_floor = false;
      inst.floor_override.reset();
      const auto r = improvement_bound_check(inst);
      ++pt.trials;
      pt.floor_violations += r.floor_violations > 0;
      pt.bound_violations += r.margin < -kMarginTolerance;
      pt.min_margin = std::min(pt.min_margin, r.margin);
    }
    rep.sweep.push_back(pt);
  }

  // Duality bound on random triples plus the trivial cases.
  rep.duality_ok = true;
  for (int t = 0; t < config.duality_trials; ++t) {
    Rng rng = stream(config.seed, Stream::kEvaluation, {4, static_cast<std::uint64_t>(t)});
    const auto n = 2 + rng.below(30);
    std::vector<double> r(n), p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = 2.0 * rng.uniform() - 1.0;
      p[i] = -std::log(1.0 - rng.uniform());
      q[i] = -std::log(1.0 - rng.uniform());
      sp += p[i];
      sq += q[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    const bool ok = duality_check(r, p, q) && duality_check(r, p, p) &&
                    duality_check(std::vector<double>(n, 1.0), p, q);
    rep.duality_ok = rep.duality_ok && ok;
    ++rep.duality_trials;
  }
  if (!rep.duality_ok) rep.failures.push_back("duality bound violated");

  rep.maximizer_ok = true;
  for (int G : config.maximizer_sizes) {
    const auto vm = variance_maximizer_check(G);
    rep.maximizer.emplace_back(G, vm);
    const double g = G;
    std::vector<double> expect =
        G % 2 == 0 ? std::vector<double>{0.5}
                   : std::vector<double>{(g - 1) / (2 * g), (g + 1) / (2 * g)};
    const double value = G % 2 == 0 ? 0.25 : (g * g - 1) / (4 * g * g);
    bool ok = vm.argmax.size() == expect.size() && std::abs(vm.value - value) <= 1e-15;
    for (std::size_t i = 0; ok && i < expect.size(); ++i) ok = std::abs(vm.argmax[i] - expect[i]) <= 1e-15;
    rep.maximizer_ok = rep.maximizer_ok && ok;
  }
  if (!rep.maximizer_ok) rep.failures.push_back("variance maximizer mismatch");
  return rep;
}

std::string theory_report_json(const TheoryReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = "bapo.theory/1";
  j["passed"] = r.passed();
  j["failures"] = r.failures;
  j["k_constants"] = {{"group_size", r.k.group_size}, {"c1", r.k.c1},
                      {"c2", r.k.c2},                 {"c3", r.k.c3},
                      {"eps_smooth", r.k.eps_smooth}, {"floors", r.k.floors},
                      {"K1", r.k.K1},                 {"K2", r.k.K2},
                      {"K3", r.k.K3}};
  j["k_closed_form_ok"] = r.k_closed_form_ok;
  j["k_monotone_ok"] = r.k_monotone_ok;
  auto finite_or_null = [](double x) -> nlohmann::ordered_json {
    if (std::isfinite(x)) return x;
    return nullptr;
  };
  j["improvement_bound"] = {
      {"trials", r.trials},
      {"min_margin", finite_or_null(r.min_margin)},
      {"min_margin_renormalized", finite_or_null(r.min_margin_renormalized)},
      {"renormalized_violations", r.renormalized_violations},
      {"delta1", {{"min", r.delta1.min}, {"mean", r.delta1.mean}, {"max", r.delta1.max}}},
      {"delta3", {{"min", r.delta3.min}, {"mean", r.delta3.mean}, {"max", r.delta3.max}}}};
  j["adversarial"] = {{"restarts", r.adversarial_restarts},
                      {"min_margin", finite_or_null(r.adversarial_min_margin)},
                      {"note", "no violation found is evidence, not proof"}};
  auto& sweep = j["delta_sweep"] = nlohmann::ordered_json::array();
  for (const auto& p : r.sweep) {
    sweep.push_back({{"delta", p.delta},
                     {"trials", p.trials},
                     {"floor_violations", p.floor_violations},
                     {"bound_violations", p.bound_violations},
                     {"min_margin", finite_or_null(p.min_margin)}});
  }
  j["duality"] = {{"trials", r.duality_trials}, {"ok", r.duality_ok}};
  auto& prop = j["variance_maximizer"] = nlohmann::ordered_json::array();
  for (const auto& [G, vm] : r.maximizer) {
    prop.push_back({{"group_size", G}, {"argmax", vm.argmax}, {"value", vm.value}});
  }
  j["variance_maximizer_ok"] = r.maximizer_ok;
  return j.dump(2);
}

}  // namespace bapo
