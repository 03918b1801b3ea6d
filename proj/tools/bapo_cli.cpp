// Command-line front end: training runs, comparisons, migration matrices and
// the theory suite.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bapo/config.hpp"
#include "bapo/theory.hpp"
#include "bapo/trainer.hpp"

namespace fs = std::filesystem;
using namespace bapo;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kUniverseMissing = 3,
  kNonFinite = 4,
  kIoError = 5,
};

fs::path default_out_root() {
  if (const char* env = std::getenv("BAPO_OUT_ROOT"); env && *env) return env;
  return "runs";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed(double x, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

struct Overrides {
  std::optional<std::string> algorithm;
  std::optional<std::uint64_t> steps;
  std::optional<std::size_t> track_subset;
};

ExperimentConfig load_with_overrides(const fs::path& path, const Overrides& o) {
  std::optional<Algorithm> algo;
  if (o.algorithm) algo = parse_algorithm(*o.algorithm);
  auto c = load_experiment_config(path, algo);
  if (o.steps) c.trainer.total_steps = *o.steps;
  if (o.track_subset) c.trainer.track_subset = *o.track_subset;
  c.trainer.validate();
  c.canonical = canonical_text(c);
  return c;
}

std::string manifest_json(const ExperimentConfig& c, const std::string& universe_json) {
  nlohmann::ordered_json j;
  j["schema"] = "bapo.manifest/1";
  j["version"] = kVersion;
  j["algorithm"] = to_string(c.trainer.algorithm);
  j["seed"] = c.trainer.seed;
  j["group_size"] = c.trainer.group_size;
  j["total_steps"] = c.trainer.total_steps;
  j["config_hash"] = fnv1a_hex(c.canonical);
  j["universe_hash"] = fnv1a_hex(universe_json);
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  j["config"] = c.canonical;
  return j.dump(2) + "\n";
}

// One complete run written to `dir`.
RunResult train_into(const ExperimentConfig& c, const PromptUniverse& universe, const fs::path& dir) {
  fs::create_directories(dir);
  const auto universe_json = universe_to_json(universe);
  write_text(dir / "universe.json", universe_json);
  write_text(dir / "manifest.json", manifest_json(c, universe_json));
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  metrics << metrics_header_line() << '\n';
  Trainer trainer(c.trainer, universe);
  RunResult result;
  try {
    result = trainer.run([&](const MetricsRecord& r) { metrics << to_json_line(r) << '\n'; });
  } catch (const NonFiniteLoss& e) {
    write_text(dir / "nonfinite_dump.json", e.dump + "\n");
    throw;
  }
  save_policy(result.final_policy, dir / "policy.json");
  std::ofstream bins(dir / "tracked_bins.csv", std::ios::binary);
  write_tracked_bins(result.tracked_bins, result.tracked_ids, bins);
  std::ofstream bad(dir / "buffer_bad.jsonl", std::ios::binary);
  trainer.buffers().bad.dump_jsonl(bad);
  std::ofstream high(dir / "buffer_high.jsonl", std::ios::binary);
  trainer.buffers().high.dump_jsonl(high);
  return result;
}

std::vector<std::uint64_t> seeds_or(const std::vector<std::uint64_t>& seeds, std::uint64_t fallback) {
  return seeds.empty() ? std::vector<std::uint64_t>{fallback} : seeds;
}

int cmd_train(const fs::path& config_path, std::optional<fs::path> out,
              const std::vector<std::uint64_t>& seeds, const Overrides& o) {
  auto c = load_with_overrides(config_path, o);
  const auto universe = resolve_universe(c.universe);
  const fs::path root = out ? *out : default_out_root() / config_path.stem();
  const auto run_seeds = seeds_or(seeds, c.trainer.seed);
  for (auto seed : run_seeds) {
    auto run = c;
    run.trainer.seed = seed;
    run.canonical = canonical_text(run);
    const fs::path dir = run_seeds.size() == 1 ? root : root / ("seed_" + std::to_string(seed));
    const auto result = train_into(run, universe, dir);
    std::cout << dir.string() << ": " << result.records.size() << " steps, "
              << result.ledger.cumulative_responses() << " training rollouts\n";
  }
  return kOk;
}

struct CompareRun {
  std::string label;
  std::uint64_t seed = 0;
  RunResult result;
};

int cmd_compare(const std::vector<fs::path>& configs, std::optional<fs::path> out,
                const std::vector<std::uint64_t>& seed_list, const Overrides& o) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configs");
  std::vector<ExperimentConfig> loaded;
  std::vector<std::string> labels;
  std::optional<std::string> universe_json;
  PromptUniverse universe;
  for (const auto& path : configs) {
    loaded.push_back(load_with_overrides(path, o));
    labels.push_back(path.stem().string());
    auto u = resolve_universe(loaded.back().universe);
    auto text = universe_to_json(u);
    if (universe_json && *universe_json != text) {
      throw ConfigError("configs " + labels.front() + " and " + labels.back() +
                        " use different prompt universes");
    }
    if (!universe_json) {
      universe_json = text;
      universe = std::move(u);
    }
  }
  for (std::size_t i = 1; i < loaded.size(); ++i) {
    if (loaded[i].trainer.group_size != loaded[0].trainer.group_size) {
      throw ConfigError("configs disagree on group_size");
    }
  }
  const auto seeds = seed_list.empty() ? std::vector<std::uint64_t>{1, 2, 3, 4, 5} : seed_list;
  const fs::path root = out ? *out : default_out_root() / "compare";
  fs::create_directories(root);

  std::vector<std::future<CompareRun>> jobs;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    for (auto seed : seeds) {
      auto run = loaded[i];
      run.trainer.seed = seed;
      run.canonical = canonical_text(run);
      const fs::path dir = root / labels[i] / ("seed_" + std::to_string(seed));
      jobs.push_back(std::async(std::launch::async, [run, dir, seed, &universe, label = labels[i]] {
        return CompareRun{label, seed, train_into(run, universe, dir)};
      }));
    }
  }
  std::vector<CompareRun> runs;
  for (auto& j : jobs) runs.push_back(j.get());

  const int G = loaded[0].trainer.group_size;
  // Reward curves: mean and population std across seeds per step.
  std::ostringstream curve;
  curve << "# bapo.compare.reward/1\nstep";
  for (const auto& l : labels) curve << ',' << l << "_mean," << l << "_std";
  curve << '\n';
  std::uint64_t steps = 0;
  for (const auto& r : runs) steps = std::max<std::uint64_t>(steps, r.result.records.size());
  for (std::uint64_t t = 0; t < steps; ++t) {
    curve << t;
    for (const auto& l : labels) {
      std::vector<double> xs;
      for (const auto& r : runs) {
        if (r.label == l && t < r.result.records.size()) xs.push_back(r.result.records[t].mean_reward);
      }
      double mean = 0.0, var = 0.0;
      for (double x : xs) mean += x;
      mean /= std::max<std::size_t>(xs.size(), 1);
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= std::max<std::size_t>(xs.size(), 1);
      curve << ',' << fixed(mean) << ',' << fixed(std::sqrt(var));
    }
    curve << '\n';
  }
  write_text(root / "reward_curve.csv", curve.str());

  std::ostringstream unlocked;
  unlocked << "# bapo.compare.unlocked/1\nconfig,seed,initial_bin0,unlocked_fraction\n";
  std::map<std::string, std::vector<double>> per_label;
  for (const auto& r : runs) {
    const auto& bins = r.result.tracked_bins;
    const auto& first = bins.begin()->second;
    const auto& last = bins.rbegin()->second;
    const auto frac = unlocked_fraction(first, last);
    std::size_t zero = 0;
    for (int b : first) zero += b == 0;
    unlocked << r.label << ',' << r.seed << ',' << zero << ','
             << (frac ? fixed(*frac) : std::string("nan")) << '\n';
    if (frac) per_label[r.label].push_back(*frac);
  }
  for (const auto& l : labels) {
    double m = 0.0;
    for (double x : per_label[l]) m += x;
    if (!per_label[l].empty()) m /= per_label[l].size();
    unlocked << l << ",mean,," << fixed(m) << '\n';
  }
  write_text(root / "unlocked.csv", unlocked.str());

  std::ostringstream ledger;
  ledger << "# bapo.compare.ledger/1\n"
            "config,seed,fresh,reevaluation,dapo_resample,evaluation,training_responses\n";
  for (const auto& r : runs) {
    const auto rep = ledger_report(r.result.ledger);
    ledger << r.label << ',' << r.seed << ',' << rep.fresh_responses << ','
           << rep.reevaluation_responses << ',' << rep.dapo_resample_responses << ','
           << rep.evaluation_responses << ',' << rep.total_responses << '\n';
  }
  write_text(root / "ledger.csv", ledger.str());

  // Step-0 census of the tracked subset against the analytic expectation.
  std::ostringstream census;
  census << "# bapo.compare.census/1\nbin,observed,expected,std\n";
  const auto& first = runs.front();
  const auto& observed = first.result.tracked_bins.begin()->second;
  PolicyParams uniform(universe.size(), universe.vocab_size, universe.max_len);
  std::vector<double> expected(G + 1, 0.0), variance(G + 1, 0.0);
  for (int id : first.result.tracked_ids) {
    const double p = exact_expected_reward(uniform, universe.prompt(id));
    for (int k = 0; k <= G; ++k) {
      const double q = std::exp(std::lgamma(G + 1.0) - std::lgamma(k + 1.0) - std::lgamma(G - k + 1.0) +
                                k * std::log(std::max(p, 1e-300)) +
                                (G - k) * std::log(std::max(1.0 - p, 1e-300)));
      expected[k] += q;
      variance[k] += q * (1.0 - q);
    }
  }
  const auto hist = bin_histogram(observed, G);
  for (int k = 0; k <= G; ++k) {
    census << k << ',' << hist[k] << ',' << fixed(expected[k]) << ',' << fixed(std::sqrt(variance[k]))
           << '\n';
  }
  write_text(root / "initial_census.csv", census.str());

  std::cout << "config,unlocked_mean\n";
  for (const auto& l : labels) {
    double m = 0.0;
    for (double x : per_label[l]) m += x;
    if (!per_label[l].empty()) m /= per_label[l].size();
    std::cout << l << ',' << fixed(m) << '\n';
  }
  return kOk;
}

int cmd_migration(const fs::path& run_dir, std::vector<std::uint64_t> checkpoints,
                  std::uint64_t reference, double alarm) {
  std::ifstream in(run_dir / "tracked_bins.csv", std::ios::binary);
  if (!in) throw std::runtime_error("no tracked_bins.csv in " + run_dir.string());
  std::vector<int> ids;
  const auto bins = read_tracked_bins(in, &ids);
  const auto manifest = nlohmann::json::parse(read_text(run_dir / "manifest.json"));
  const int G = manifest.at("group_size");
  if (checkpoints.empty()) checkpoints.push_back(bins.rbegin()->first);

  nlohmann::ordered_json out;
  out["schema"] = "bapo.migration/1";
  out["reference_step"] = reference;
  out["alarm_threshold"] = alarm;
  auto& list = out["matrices"] = nlohmann::ordered_json::array();
  bool alarmed = false;
  for (auto step : checkpoints) {
    const auto m = migration_matrix(bins, G, reference, step);
    const double reg = m.regression_fraction();
    alarmed = alarmed || reg >= alarm;
    list.push_back({{"query_step", step},
                    {"counts", m.counts},
                    {"regression_fraction", reg},
                    {"below_alarm", reg < alarm}});
  }
  const auto text = out.dump(2) + "\n";
  write_text(run_dir / "migration.json", text);
  std::cout << text;
  return alarmed ? kCheckFailed : kOk;
}

int cmd_verify_theory(std::optional<fs::path> config_path, std::optional<fs::path> out) {
  TheoryConfig cfg;
  if (config_path) cfg = parse_theory_config(read_text(*config_path));
  const auto report = run_theory_suite(cfg);
  const auto text = theory_report_json(report) + "\n";
  if (out) {
    fs::create_directories(*out);
    write_text(*out / "theory_report.json", text);
  }
  std::cout << text;
  return report.passed() ? kOk : kCheckFailed;
}

int cmd_dump_universe(const fs::path& config_path, std::optional<fs::path> out) {
  const auto c = load_experiment_config(config_path);
  const auto universe = resolve_universe(c.universe);
  const auto text = universe_to_json(universe);
  if (out) {
    fs::create_directories(out->parent_path().empty() ? "." : out->parent_path());
    write_text(*out, text);
  } else {
    std::cout << text << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy RLVR laboratory with adaptive training batches"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> configs;
  std::string out;
  std::vector<std::uint64_t> seeds;
  Overrides o;
  std::uint64_t steps = 0;
  std::size_t track = 0;
  std::string algorithm;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');
    sub->add_option("--steps", steps, "Override total_steps");
    sub->add_option("--track-subset", track, "Override the tracked subset size");
    sub->add_option("--algorithm", algorithm, "Override the algorithm preset");
  };

  auto* train = app.add_subcommand("train", "Run training and write metrics and snapshots");
  train->add_option("--config", config, "Experiment config")->required();
  add_common(train);

  auto* compare = app.add_subcommand("compare", "Run several configs over seeds and summarize");
  compare->add_option("--config", configs, "Experiment configs (at least two)")->required();
  add_common(compare);

  std::string run_dir;
  std::vector<std::uint64_t> checkpoints;
  std::uint64_t reference = 0;
  double alarm = 0.1;
  auto* migration = app.add_subcommand("migration", "Accuracy-bin migration matrices of a run");
  migration->add_option("--run", run_dir, "Run directory")->required();
  migration->add_option("--checkpoints", checkpoints, "Query steps")->delimiter(',');
  migration->add_option("--reference", reference, "Reference step");
  migration->add_option("--alarm", alarm, "Regression-fraction alarm threshold");

  auto* theory = app.add_subcommand("verify-theory", "Numerical checks of the improvement bound");
  theory->add_option("--config", config, "Theory config");
  theory->add_option("--out", out, "Directory for theory_report.json");

  auto* dump = app.add_subcommand("dump-universe", "Write the prompt universe of a config");
  dump->add_option("--config", config, "Experiment config")->required();
  dump->add_option("--out", out, "Output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  if (steps) o.steps = steps;
  if (track) o.track_subset = track;
  if (!algorithm.empty()) o.algorithm = algorithm;
  std::optional<fs::path> out_path;
  if (!out.empty()) out_path = out;

  try {
    if (train->parsed()) return cmd_train(config, out_path, seeds, o);
    if (compare->parsed()) {
      std::vector<fs::path> paths(configs.begin(), configs.end());
      return cmd_compare(paths, out_path, seeds, o);
    }
    if (migration->parsed()) return cmd_migration(run_dir, checkpoints, reference, alarm);
    if (theory->parsed()) {
      std::optional<fs::path> cfg;
      if (!config.empty()) cfg = config;
      return cmd_verify_theory(cfg, out_path);
    }
    if (dump->parsed()) return cmd_dump_universe(config, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const UniverseFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUniverseMissing;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNonFinite;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kOk;
}
