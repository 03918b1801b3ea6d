#include "bapo/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace bapo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& field, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"algorithm", [](ExperimentConfig&, const std::string&, const std::string&) {}},
      {"group_size",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.group_size = static_cast<int>(parse_count(f, v));
       }},
      {"batch_size",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.batch_size = parse_count(f, v);
       }},
      {"rollout_batch",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.rollout_batch = parse_count(f, v);
       }},
      {"rollout_delay",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.rollout_delay = parse_count(f, v);
       }},
      {"reeval_every",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.reeval_every = parse_count(f, v);
       }},
      {"beta",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.beta = parse_real(f, v);
       }},
      {"eps_clip",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.eps_low = c.trainer.eps_high = parse_real(f, v);
       }},
      {"eps_low",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.eps_low = parse_real(f, v);
       }},
      {"eps_high",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.eps_high = parse_real(f, v);
       }},
      {"eps_smooth",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.eps_smooth = parse_real(f, v);
       }},
      {"learning_rate",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.learning_rate = parse_real(f, v);
       }},
      {"total_steps",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.total_steps = parse_count(f, v);
       }},
      {"seed",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.seed = parse_count(f, v);
       }},
      {"filter_mode",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         try {
           c.trainer.filter_mode = parse_filter_mode(v);
         } catch (const ConfigError& e) {
           throw ConfigError("field '" + f + "': " + e.what());
         }
       }},
      {"dapo_max_resample",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.dapo_max_resample = static_cast<int>(parse_count(f, v));
       }},
      {"c1",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.thresholds.c1 = parse_real(f, v);
       }},
      {"c2_range",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.thresholds.c2_range = parse_range(f, v);
       }},
      {"c3_range",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.thresholds.c3_range = parse_range(f, v);
       }},
      {"cap_bad",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.cap_bad = parse_count(f, v);
       }},
      {"cap_high",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.cap_high = parse_count(f, v);
       }},
      {"max_reeval",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.max_reeval = parse_count(f, v);
       }},
      {"high_window",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.high_window = parse_count(f, v);
       }},
      {"use_bad_buffer",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.use_bad_buffer = parse_bool(f, v);
       }},
      {"use_high_buffer",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.use_high_buffer = parse_bool(f, v);
       }},
      {"kl_target",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         if (v == "rollout") {
           c.trainer.kl_target = KlTarget::kRollout;
         } else if (v == "reference") {
           c.trainer.kl_target = KlTarget::kReference;
         } else {
           throw ConfigError("field '" + f + "': expected rollout or reference");
         }
       }},
      {"entropy_coef",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.entropy_coef = parse_real(f, v);
       }},
      {"ratio_level",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         if (v == "token") {
           c.trainer.ratio_level = RatioLevel::kToken;
         } else if (v == "sequence") {
           c.trainer.ratio_level = RatioLevel::kSequence;
         } else {
           throw ConfigError("field '" + f + "': expected token or sequence");
         }
       }},
      {"clip_buffer_terms",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.clip_buffer_terms = parse_bool(f, v);
       }},
      {"loss_normalization",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         if (v == "batch_cap") {
           c.trainer.normalization = LossNormalization::kBatchCap;
         } else if (v == "realized") {
           c.trainer.normalization = LossNormalization::kRealized;
         } else {
           throw ConfigError("field '" + f + "': expected batch_cap or realized");
         }
       }},
      {"minibatches",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.minibatches = static_cast<int>(parse_count(f, v));
       }},
      {"r_tot_half_life",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.r_tot_half_life = parse_real(f, v);
       }},
      {"gaussian_mean",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.gaussian_mean = parse_real(f, v);
       }},
      {"gaussian_std",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.gaussian_std = parse_real(f, v);
       }},
      {"uniform_keep",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.uniform_keep = parse_real(f, v);
       }},
      {"track_subset",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.track_subset = parse_count(f, v);
       }},
      {"track_seed",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.track_seed = parse_count(f, v);
       }},
      {"eval_every",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.trainer.eval_every = parse_count(f, v);
       }},
      {"universe_file",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.universe.file = std::filesystem::path(v);
       }},
      {"universe_prompts",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.universe.generate.num_prompts = static_cast<int>(parse_count(f, v));
       }},
      {"universe_vocab",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.universe.generate.vocab_size = static_cast<int>(parse_count(f, v));
       }},
      {"universe_length",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.universe.generate.max_len = static_cast<int>(parse_count(f, v));
       }},
      {"universe_histogram",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.universe.generate.histogram = parse_histogram(f, v);
       }},
      {"universe_seed",
       [](ExperimentConfig& c, const std::string& f, const std::string& v) {
         c.universe.generate.seed = parse_count(f, v);
       }},
  };
  return table;
}

}  // namespace

Algorithm parse_algorithm(const std::string& s) {
  if (s == "bapo") return Algorithm::kBapo;
  if (s == "bapo_mini") return Algorithm::kBapoMini;
  if (s == "grpo") return Algorithm::kGrpo;
  if (s == "grpo_delayed") return Algorithm::kGrpoDelayed;
  if (s == "dapo") return Algorithm::kDapo;
  throw ConfigError("field 'algorithm': unknown algorithm '" + s +
                    "' (expected bapo, bapo_mini, grpo, grpo_delayed or dapo)");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kBapo: return "bapo";
    case Algorithm::kBapoMini: return "bapo_mini";
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kGrpoDelayed: return "grpo_delayed";
    case Algorithm::kDapo: return "dapo";
  }
  return "bapo";
}

TrainerConfig preset(Algorithm algorithm) {
  TrainerConfig c;
  c.algorithm = algorithm;
  switch (algorithm) {
    case Algorithm::kGrpo:
    case Algorithm::kGrpoDelayed:
    case Algorithm::kDapo:
      c.rollout_delay = algorithm == Algorithm::kGrpoDelayed ? 5 : 1;
      c.use_bad_buffer = false;
      c.use_high_buffer = false;
      c.kl_target = KlTarget::kReference;
      c.filter_mode = FilterMode::kRange;
      if (algorithm == Algorithm::kDapo) c.eps_high = 0.28;
      break;
    case Algorithm::kBapo:
      break;
    case Algorithm::kBapoMini:
      c.mini_test = true;
      c.thresholds = mini_test_thresholds();
      break;
  }
  return c;
}

void TrainerConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("field '" + field + "': " + why);
  };
  if (group_size < 2) fail("group_size", "must be at least 2");
  if (batch_size < 1) fail("batch_size", "must be positive");
  if (rollout_batch < 1) fail("rollout_batch", "must be positive");
  if (rollout_delay < 1) fail("rollout_delay", "must be at least 1");
  if (reeval_every < 1) fail("reeval_every", "must be at least 1");
  if (!(eps_low > 0.0 && eps_low < 1.0)) fail("eps_low", "must lie in (0, 1)");
  if (!(eps_high > 0.0 && eps_high < 1.0)) fail("eps_high", "must lie in (0, 1)");
  if (!(eps_smooth > 0.0)) fail("eps_smooth", "must be positive");
  if (beta < 0.0) fail("beta", "must be non-negative");
  if (entropy_coef < 0.0) fail("entropy_coef", "must be non-negative");
  if (!(learning_rate >= 0.0)) fail("learning_rate", "must be non-negative");
  if (dapo_max_resample < 1) fail("dapo_max_resample", "must be at least 1");
  if (max_reeval < 1) fail("max_reeval", "must be at least 1");
  if (minibatches < 1) fail("minibatches", "must be at least 1");
  if (r_tot_half_life < 0.0) fail("r_tot_half_life", "must be non-negative");
  if (!(gaussian_std > 0.0)) fail("gaussian_std", "must be positive");
  if (uniform_keep < 0.0 || uniform_keep > 1.0) fail("uniform_keep", "must lie in [0, 1]");
  if (eval_every < 1) fail("eval_every", "must be at least 1");
  if (!mini_test && !(thresholds.c1 > 0.0)) fail("c1", "must lie in (0, 1)");
  try {
    thresholds.validate();
  } catch (const ConfigError& e) {
    fail("c1/c2_range/c3_range", e.what());
  }
}

BatchConfig TrainerConfig::batch_config() const {
  BatchConfig b;
  b.group_size = group_size;
  b.batch_size = batch_size;
  b.filter_mode = filter_mode;
  b.gaussian_mean = gaussian_mean;
  b.gaussian_std = gaussian_std;
  b.uniform_keep = uniform_keep;
  b.reeval_every = reeval_every;
  b.max_reeval = max_reeval;
  b.use_bad_buffer = use_bad_buffer;
  b.use_high_buffer = use_high_buffer;
  b.smoothing = eps_smooth;
  b.high_window = high_window;
  return mini_test ? mini_test_mode(b) : b;
}

ObjectiveConfig TrainerConfig::objective_config() const {
  ObjectiveConfig o;
  o.eps_low = eps_low;
  o.eps_high = eps_high;
  o.beta = beta;
  o.entropy_coef = entropy_coef;
  o.ratio_level = ratio_level;
  o.clip_buffer_terms = clip_buffer_terms;
  o.normalization = normalization;
  return o;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError("field '" + key + "': set twice");
  }
  return kv;
}

double parse_real(const std::string& field, const std::string& value) {
  auto parse_one = [&](const std::string& s) {
    double x = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, x);
    if (ec != std::errc() || ptr != end || s.empty()) {
      throw ConfigError("field '" + field + "': '" + value + "' is not a number");
    }
    return x;
  };
  if (const auto slash = value.find('/'); slash != std::string::npos) {
    const double den = parse_one(trim(value.substr(slash + 1)));
    if (den == 0.0) throw ConfigError("field '" + field + "': zero denominator");
    return parse_one(trim(value.substr(0, slash))) / den;
  }
  return parse_one(value);
}

std::uint64_t parse_count(const std::string& field, const std::string& value) {
  std::uint64_t x = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, x);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("field '" + field + "': '" + value + "' is not a non-negative integer");
  }
  return x;
}

bool parse_bool(const std::string& field, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw ConfigError("field '" + field + "': '" + value + "' is not a boolean");
}

Range parse_range(const std::string& field, const std::string& value) {
  const auto parts = split(value, ',');
  if (parts.size() != 2) throw ConfigError("field '" + field + "': expected 'low, high'");
  return {parse_real(field, parts[0]), parse_real(field, parts[1])};
}

std::vector<DifficultyBucket> parse_histogram(const std::string& field, const std::string& value) {
  std::vector<DifficultyBucket> out;
  for (const auto& item : split(value, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("field '" + field + "': expected 'difficulty:fraction' items");
    }
    out.push_back({parse_real(field, trim(item.substr(0, colon))),
                   parse_real(field, trim(item.substr(colon + 1)))});
  }
  if (out.empty()) throw ConfigError("field '" + field + "': empty histogram");
  return out;
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         std::optional<Algorithm> algorithm_override) {
  const auto kv = parse_key_values(text);
  Algorithm algo = Algorithm::kBapo;
  if (const auto it = kv.find("algorithm"); it != kv.end()) algo = parse_algorithm(it->second);
  if (algorithm_override) algo = *algorithm_override;

  ExperimentConfig c;
  c.trainer = preset(algo);
  const auto& table = setters();
  for (const auto& [key, value] : kv) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("field '" + key + "': unknown key");
    it->second(c, key, value);
  }
  if (c.trainer.mini_test) {
    // Mini-test is parameter-free: its thresholds are fixed.
    c.trainer.thresholds = mini_test_thresholds();
    c.trainer.filter_mode = FilterMode::kRange;
  }
  c.trainer.thresholds = adapt_thresholds(c.trainer.thresholds, 0.0);
  c.trainer.validate();
  c.canonical = canonical_text(c);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<Algorithm> algorithm_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto c = parse_experiment_config(ss.str(), algorithm_override);
  if (c.universe.file && c.universe.file->is_relative()) {
    c.universe.file = path.parent_path() / *c.universe.file;
  }
  return c;
}

std::string canonical_text(const ExperimentConfig& c) {
  const auto& t = c.trainer;
  std::map<std::string, std::string> kv;
  kv["algorithm"] = to_string(t.algorithm);
  kv["group_size"] = std::to_string(t.group_size);
  kv["batch_size"] = std::to_string(t.batch_size);
  kv["rollout_batch"] = std::to_string(t.rollout_batch);
  kv["rollout_delay"] = std::to_string(t.rollout_delay);
  kv["reeval_every"] = std::to_string(t.reeval_every);
  kv["beta"] = fmt_real(t.beta);
  kv["eps_low"] = fmt_real(t.eps_low);
  kv["eps_high"] = fmt_real(t.eps_high);
  kv["eps_smooth"] = fmt_real(t.eps_smooth);
  kv["learning_rate"] = fmt_real(t.learning_rate);
  kv["total_steps"] = std::to_string(t.total_steps);
  kv["seed"] = std::to_string(t.seed);
  kv["filter_mode"] = to_string(t.filter_mode);
  kv["dapo_max_resample"] = std::to_string(t.dapo_max_resample);
  kv["c1"] = fmt_real(t.thresholds.c1);
  kv["c2_range"] = fmt_real(t.thresholds.c2_range.low) + "," + fmt_real(t.thresholds.c2_range.high);
  kv["c3_range"] = fmt_real(t.thresholds.c3_range.low) + "," + fmt_real(t.thresholds.c3_range.high);
  kv["cap_bad"] = std::to_string(t.cap_bad);
  kv["cap_high"] = std::to_string(t.cap_high);
  kv["max_reeval"] = std::to_string(t.max_reeval);
  kv["high_window"] = std::to_string(t.high_window);
  kv["use_bad_buffer"] = t.use_bad_buffer ? "true" : "false";
  kv["use_high_buffer"] = t.use_high_buffer ? "true" : "false";
  kv["mini_test"] = t.mini_test ? "true" : "false";
  kv["kl_target"] = t.kl_target == KlTarget::kRollout ? "rollout" : "reference";
  kv["entropy_coef"] = fmt_real(t.entropy_coef);
  kv["ratio_level"] = t.ratio_level == RatioLevel::kToken ? "token" : "sequence";
  kv["clip_buffer_terms"] = t.clip_buffer_terms ? "true" : "false";
  kv["loss_normalization"] =
      t.normalization == LossNormalization::kBatchCap ? "batch_cap" : "realized";
  kv["minibatches"] = std::to_string(t.minibatches);
  kv["r_tot_half_life"] = fmt_real(t.r_tot_half_life);
  kv["gaussian_mean"] = fmt_real(t.gaussian_mean);
  kv["gaussian_std"] = fmt_real(t.gaussian_std);
  kv["uniform_keep"] = fmt_real(t.uniform_keep);
  kv["track_subset"] = std::to_string(t.track_subset);
  kv["track_seed"] = std::to_string(t.track_seed);
  kv["eval_every"] = std::to_string(t.eval_every);
  if (c.universe.file) {
    kv["universe_file"] = c.universe.file->string();
  } else {
    const auto& g = c.universe.generate;
    kv["universe_prompts"] = std::to_string(g.num_prompts);
    kv["universe_vocab"] = std::to_string(g.vocab_size);
    kv["universe_length"] = std::to_string(g.max_len);
    kv["universe_seed"] = std::to_string(g.seed);
    std::string h;
    for (const auto& b : g.histogram) {
      if (!h.empty()) h += ",";
      h += fmt_real(b.difficulty) + ":" + fmt_real(b.fraction);
    }
    kv["universe_histogram"] = h;
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PromptUniverse resolve_universe(const UniverseSource& source) {
  if (source.file) {
    if (!std::filesystem::exists(*source.file)) {
      throw UniverseFileError("universe file not found: " + source.file->string());
    }
    return load_universe(*source.file);
  }
  return generate_universe(source.generate);
}

}  // namespace bapo
