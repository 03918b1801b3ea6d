#include "bapo/metrics.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bapo {

void RolloutLedger::charge(RolloutPurpose purpose, std::uint64_t groups) {
  switch (purpose) {
    case RolloutPurpose::kFresh: fresh_ += groups; break;
    case RolloutPurpose::kReevaluation: reeval_ += groups; break;
    case RolloutPurpose::kDapoResample: dapo_ += groups; break;
    case RolloutPurpose::kEvaluation: eval_ += groups; break;
  }
}

std::uint64_t RolloutLedger::groups(RolloutPurpose purpose) const {
  switch (purpose) {
    case RolloutPurpose::kFresh: return fresh_;
    case RolloutPurpose::kReevaluation: return reeval_;
    case RolloutPurpose::kDapoResample: return dapo_;
    case RolloutPurpose::kEvaluation: return eval_;
  }
  return 0;
}

LedgerReport ledger_report(const RolloutLedger& ledger) {
  const auto G = static_cast<std::uint64_t>(ledger.group_size());
  LedgerReport r;
  r.fresh_responses = ledger.groups(RolloutPurpose::kFresh) * G;
  r.reevaluation_responses = ledger.groups(RolloutPurpose::kReevaluation) * G;
  r.dapo_resample_responses = ledger.groups(RolloutPurpose::kDapoResample) * G;
  r.evaluation_responses = ledger.groups(RolloutPurpose::kEvaluation) * G;
  r.total_groups = ledger.cumulative_groups();
  r.total_responses = ledger.cumulative_responses();
  return r;
}

std::string metrics_header_line() {
  nlohmann::json j;
  j["schema"] = kMetricsSchema;
  return j.dump();
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["algorithm"] = r.algorithm;
  j["phases"] = r.phases;
  j["synced"] = r.synced;
  j["rollout_step_tag"] = r.rollout_step_tag;
  j["mean_reward"] = r.mean_reward;
  j["fresh_groups"] = r.fresh_groups;
  j["zero_variance_groups"] = r.zero_variance_groups;
  j["composition"] = {{"x1", r.x1}, {"x2", r.x2}, {"x3", r.x3}};
  j["skipped"] = r.skipped;
  j["loss"] = {{"surrogate", r.surrogate},
               {"kl", r.kl},
               {"entropy", r.entropy_bonus},
               {"objective", r.objective},
               {"clip_fraction", r.clip_fraction}};
  j["grad_norm"] = r.grad_norm;
  j["tv_to_rollout_policy"] = r.tv_to_rollout_policy;
  j["policy_entropy"] = r.policy_entropy;
  j["ledger"] = {{"fresh", r.ledger_fresh},
                 {"reevaluation", r.ledger_reevaluation},
                 {"dapo_resample", r.ledger_dapo_resample},
                 {"evaluation", r.ledger_evaluation},
                 {"cumulative_groups", r.cumulative_groups},
                 {"cumulative_responses", r.cumulative_responses}};
  j["c2"] = r.c2;
  j["c3"] = r.c3;
  j["r_tot"] = r.r_tot;
  j["buffers"] = {{"bad", r.buffer_bad}, {"high", r.buffer_high}};
  if (r.bins.empty()) {
    j["bins"] = nullptr;
  } else {
    j["bins"] = r.bins;
  }
  return j.dump();
}

MetricsRecord metrics_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.step = j.at("step");
  r.algorithm = j.at("algorithm");
  r.phases = j.at("phases").get<std::vector<std::string>>();
  r.synced = j.at("synced");
  r.rollout_step_tag = j.at("rollout_step_tag");
  r.mean_reward = j.at("mean_reward");
  r.fresh_groups = j.at("fresh_groups");
  r.zero_variance_groups = j.at("zero_variance_groups");
  r.x1 = j.at("composition").at("x1");
  r.x2 = j.at("composition").at("x2");
  r.x3 = j.at("composition").at("x3");
  r.skipped = j.at("skipped");
  const auto& loss = j.at("loss");
  r.surrogate = loss.at("surrogate");
  r.kl = loss.at("kl");
  r.entropy_bonus = loss.at("entropy");
  r.objective = loss.at("objective");
  r.clip_fraction = loss.at("clip_fraction");
  r.grad_norm = j.at("grad_norm");
  r.tv_to_rollout_policy = j.at("tv_to_rollout_policy");
  r.policy_entropy = j.at("policy_entropy");
  const auto& ledger = j.at("ledger");
  r.ledger_fresh = ledger.at("fresh");
  r.ledger_reevaluation = ledger.at("reevaluation");
  r.ledger_dapo_resample = ledger.at("dapo_resample");
  r.ledger_evaluation = ledger.at("evaluation");
  r.cumulative_groups = ledger.at("cumulative_groups");
  r.cumulative_responses = ledger.at("cumulative_responses");
  r.c2 = j.at("c2");
  r.c3 = j.at("c3");
  r.r_tot = j.at("r_tot");
  r.buffer_bad = j.at("buffers").at("bad");
  r.buffer_high = j.at("buffers").at("high");
  if (!j.at("bins").is_null()) r.bins = j.at("bins").get<std::vector<std::uint64_t>>();
  return r;
}

std::map<std::string, double> numeric_fields(const MetricsRecord& r) {
  std::map<std::string, double> f;
  auto d = [](auto x) { return static_cast<double>(x); };
  f["step"] = d(r.step);
  f["mean_reward"] = r.mean_reward;
  f["fresh_groups"] = d(r.fresh_groups);
  f["zero_variance_groups"] = d(r.zero_variance_groups);
  f["x1"] = d(r.x1);
  f["x2"] = d(r.x2);
  f["x3"] = d(r.x3);
  f["skipped"] = d(r.skipped);
  f["synced"] = d(r.synced);
  f["rollout_step_tag"] = d(r.rollout_step_tag);
  f["surrogate"] = r.surrogate;
  f["kl"] = r.kl;
  f["entropy_bonus"] = r.entropy_bonus;
  f["objective"] = r.objective;
  f["clip_fraction"] = r.clip_fraction;
  f["grad_norm"] = r.grad_norm;
  f["tv_to_rollout_policy"] = r.tv_to_rollout_policy;
  f["policy_entropy"] = r.policy_entropy;
  f["ledger_fresh"] = d(r.ledger_fresh);
  f["ledger_reevaluation"] = d(r.ledger_reevaluation);
  f["ledger_dapo_resample"] = d(r.ledger_dapo_resample);
  f["ledger_evaluation"] = d(r.ledger_evaluation);
  f["cumulative_groups"] = d(r.cumulative_groups);
  f["cumulative_responses"] = d(r.cumulative_responses);
  f["c2"] = r.c2;
  f["c3"] = r.c3;
  f["r_tot"] = r.r_tot;
  f["buffer_bad"] = d(r.buffer_bad);
  f["buffer_high"] = d(r.buffer_high);
  for (std::size_t k = 0; k < r.bins.size(); ++k) f["bin_" + std::to_string(k)] = d(r.bins[k]);
  return f;
}

std::uint64_t MigrationMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::uint64_t MigrationMatrix::row_sum(int row) const {
  std::uint64_t t = 0;
  for (auto c : counts.at(row)) t += c;
  return t;
}

double MigrationMatrix::regression_fraction() const {
  const auto t = total();
  if (t == 0) return 0.0;
  std::uint64_t below = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) below += counts[i][j];
  }
  return static_cast<double>(below) / static_cast<double>(t);
}

MigrationMatrix migration_matrix(const TrackedBins& bins, int group_size,
                                 std::uint64_t reference_step, std::uint64_t query_step) {
  for (auto s : {reference_step, query_step}) {
    if (!bins.count(s)) {
      std::string avail;
      for (const auto& [step, _] : bins) avail += (avail.empty() ? "" : ",") + std::to_string(step);
      throw std::out_of_range("step " + std::to_string(s) + " not recorded; available: " + avail);
    }
  }
  const auto& ref = bins.at(reference_step);
  const auto& qry = bins.at(query_step);
  if (ref.size() != qry.size()) throw std::invalid_argument("tracked subset size changed");
  MigrationMatrix m;
  m.reference_step = reference_step;
  m.query_step = query_step;
  m.group_size = group_size;
  m.counts.assign(group_size + 1, std::vector<std::uint64_t>(group_size + 1, 0));
  for (std::size_t i = 0; i < ref.size(); ++i) ++m.counts.at(ref[i]).at(qry[i]);
  return m;
}

std::vector<std::uint64_t> bin_histogram(const std::vector<int>& bins, int group_size) {
  std::vector<std::uint64_t> h(group_size + 1, 0);
  for (int b : bins) ++h.at(b);
  return h;
}

std::optional<double> unlocked_fraction(const std::vector<int>& initial,
                                        const std::vector<int>& final_bins) {
  if (initial.size() != final_bins.size()) throw std::invalid_argument("bin vectors differ in size");
  std::size_t start = 0;
  std::size_t unlocked = 0;
  for (std::size_t i = 0; i < initial.size(); ++i) {
    if (initial[i] != 0) continue;
    ++start;
    if (final_bins[i] >= 1) ++unlocked;
  }
  if (start == 0) return std::nullopt;
  return static_cast<double>(unlocked) / static_cast<double>(start);
}

void write_tracked_bins(const TrackedBins& bins, const std::vector<int>& tracked_ids,
                        std::ostream& out) {
  out << "# " << kTrackedBinsSchema << '\n';
  out << "step";
  for (int id : tracked_ids) out << ",p" << id;
  out << '\n';
  for (const auto& [step, row] : bins) {
    out << step;
    for (int b : row) out << ',' << b;
    out << '\n';
  }
}

TrackedBins read_tracked_bins(std::istream& in, std::vector<int>* tracked_ids) {
  std::string line;
  if (!std::getline(in, line) || line != std::string("# ") + kTrackedBinsSchema) {
    throw std::runtime_error("tracked bins file has an unknown schema");
  }
  if (!std::getline(in, line)) throw std::runtime_error("tracked bins file has no header");
  if (tracked_ids) {
    tracked_ids->clear();
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    while (std::getline(hs, cell, ',')) tracked_ids->push_back(std::stoi(cell.substr(1)));
  }
  TrackedBins bins;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    const auto step = std::stoull(cell);
    std::vector<int> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stoi(cell));
    bins[step] = std::move(row);
  }
  return bins;
}

}  // namespace bapo
