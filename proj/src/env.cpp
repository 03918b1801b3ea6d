#include "bapo/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bapo {

namespace {

constexpr const char* kUniverseSchema = "bapo.universe/1";

// Largest-remainder apportionment: counts sum to total, each within 1 of its
// exact share.
std::vector<int> apportion(const std::vector<DifficultyBucket>& buckets, int total) {
  double mass = 0.0;
  for (const auto& b : buckets) mass += b.fraction;
  std::vector<int> counts(buckets.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const double share = total * buckets[i].fraction / mass;
    counts[i] = static_cast<int>(std::floor(share));
    assigned += counts[i];
    remainders.emplace_back(share - counts[i], i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k].second];
  return counts;
}

}  // namespace

const PromptSpec& PromptUniverse::prompt(int id) const {
  if (id < 0 || id >= size() || prompts[id].id != id) {
    throw std::out_of_range("prompt id " + std::to_string(id) + " not in universe");
  }
  return prompts[id];
}

void PromptUniverse::validate() const {
  if (weights.size() != prompts.size()) throw std::invalid_argument("weights/prompts size mismatch");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("prompt weights must sum to 1");
  const double space = static_cast<double>(response_space_size(vocab_size, max_len));
  for (int i = 0; i < size(); ++i) {
    const auto& p = prompts[i];
    if (p.id != i) throw std::invalid_argument("prompt ids must be 0..n-1 in order");
    if (p.accepted.empty()) throw std::invalid_argument("accepted set must be non-empty");
    for (const auto& y : p.accepted) {
      if (static_cast<int>(y.size()) != max_len) throw std::invalid_argument("bad response length");
      for (int tok : y.tokens) {
        if (tok < 0 || tok >= vocab_size) throw std::invalid_argument("token out of range");
      }
    }
    if (p.difficulty != static_cast<double>(p.accepted.size()) / space) {
      throw std::invalid_argument("difficulty label must equal |accepted| / V^L");
    }
  }
}

int verify(const PromptSpec& prompt, const ResponseSeq& y) {
  return std::binary_search(prompt.accepted.begin(), prompt.accepted.end(), y) ? 1 : 0;
}

double exact_expected_reward(const PolicyParams& params, const PromptSpec& prompt) {
  double total = 0.0;
  for (const auto& y : prompt.accepted) total += std::exp(log_prob(params, prompt.id, y));
  return std::clamp(total, 0.0, 1.0);
}

PromptUniverse generate_universe(const UniverseConfig& config) {
  if (config.num_prompts < 1) throw std::invalid_argument("universe needs at least one prompt");
  if (config.histogram.empty()) throw std::invalid_argument("difficulty histogram is empty");
  for (const auto& b : config.histogram) {
    if (b.fraction < 0.0 || b.difficulty < 0.0 || b.difficulty > 1.0) {
      throw std::invalid_argument("histogram entries need difficulty in [0,1], fraction >= 0");
    }
  }
  const std::uint64_t space = response_space_size(config.vocab_size, config.max_len);

  PromptUniverse u;
  u.vocab_size = config.vocab_size;
  u.max_len = config.max_len;

  const auto counts = apportion(config.histogram, config.num_prompts);
  std::vector<std::uint64_t> sizes;
  for (std::size_t b = 0; b < config.histogram.size(); ++b) {
    const double want = config.histogram[b].difficulty * static_cast<double>(space);
    auto k = static_cast<std::uint64_t>(std::llround(want));
    k = std::clamp<std::uint64_t>(k, 1, space);
    if (static_cast<double>(k) != want) {
      std::ostringstream msg;
      msg << "difficulty " << config.histogram[b].difficulty << " unattainable with V^L=" << space
          << "; using " << k << "/" << space;
      u.provenance.push_back(msg.str());
    }
    for (int i = 0; i < counts[b]; ++i) sizes.push_back(k);
  }

  // Decorrelate difficulty from prompt id.
  Rng rng = stream(config.seed, Stream::kUniverse);
  for (std::size_t i = sizes.size(); i > 1; --i) std::swap(sizes[i - 1], sizes[rng.below(i)]);

  std::vector<std::uint64_t> pool(space);
  for (int id = 0; id < config.num_prompts; ++id) {
    std::iota(pool.begin(), pool.end(), 0);
    const std::uint64_t k = sizes[id];
    // Partial Fisher-Yates: first k slots are a uniform k-subset.
    for (std::uint64_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(space - i)]);
    std::vector<std::uint64_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    PromptSpec p;
    p.id = id;
    for (auto idx : chosen) p.accepted.push_back(sequence_from_index(idx, config.vocab_size, config.max_len));
    p.difficulty = static_cast<double>(k) / static_cast<double>(space);
    u.prompts.push_back(std::move(p));
  }
  u.weights.assign(config.num_prompts, 1.0 / config.num_prompts);
  // Absorb rounding so the weights sum to one.
  const double head = std::accumulate(u.weights.begin(), u.weights.end() - 1, 0.0);
  u.weights.back() = 1.0 - head;
  return u;
}

std::string universe_to_json(const PromptUniverse& universe) {
  nlohmann::json j;
  j["schema"] = kUniverseSchema;
  j["vocab"] = universe.vocab_size;
  j["length"] = universe.max_len;
  auto& prompts = j["prompts"] = nlohmann::json::array();
  for (const auto& p : universe.prompts) {
    nlohmann::json e;
    e["id"] = p.id;
    e["difficulty"] = p.difficulty;
    auto& acc = e["accepted"] = nlohmann::json::array();
    for (const auto& y : p.accepted) acc.push_back(y.tokens);
    prompts.push_back(std::move(e));
  }
  j["weights"] = universe.weights;
  j["provenance"] = universe.provenance;
  return j.dump();
}

PromptUniverse universe_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("schema").get<std::string>() != kUniverseSchema) {
    throw std::runtime_error("unsupported universe schema");
  }
  PromptUniverse u;
  u.vocab_size = j.at("vocab").get<int>();
  u.max_len = j.at("length").get<int>();
  for (const auto& e : j.at("prompts")) {
    PromptSpec p;
    p.id = e.at("id").get<int>();
    p.difficulty = e.at("difficulty").get<double>();
    for (const auto& toks : e.at("accepted")) p.accepted.push_back(ResponseSeq{toks.get<std::vector<int>>()});
    std::sort(p.accepted.begin(), p.accepted.end());
    u.prompts.push_back(std::move(p));
  }
  u.weights = j.at("weights").get<std::vector<double>>();
  if (j.contains("provenance")) u.provenance = j.at("provenance").get<std::vector<std::string>>();
  u.validate();
  return u;
}

void save_universe(const PromptUniverse& universe, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << universe_to_json(universe) << '\n';
}

PromptUniverse load_universe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return universe_from_json(ss.str());
}

}  // namespace bapo
