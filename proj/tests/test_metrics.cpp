#include <doctest.h>

#include <sstream>

#include "bapo/metrics.hpp"
#include "bapo/random.hpp"

using namespace bapo;

TEST_SUITE("metrics") {

TEST_CASE("metrics records round-trip through JSON lines") {
  MetricsRecord r;
  r.step = 17;
  r.algorithm = "bapo";
  r.mean_reward = 0.3125;
  r.fresh_groups = 64;
  r.zero_variance_groups = 12;
  r.x1 = 40;
  r.x2 = 5;
  r.x3 = 19;
  r.synced = true;
  r.rollout_step_tag = 15;
  r.phases = {"sync", "rollout", "construct"};
  r.surrogate = 0.1;
  r.kl = 1e-3;
  r.objective = 0.099;
  r.grad_norm = 2.5;
  r.tv_to_rollout_policy = 0.01;
  r.ledger_fresh = 1088;
  r.cumulative_groups = 1100;
  r.cumulative_responses = 8800;
  r.c2 = 0.2;
  r.c3 = 0.35;
  r.r_tot = 0.6;
  r.buffer_bad = 7;
  r.bins = {3, 0, 1, 0, 0, 0, 0, 0, 4};
  const auto line = to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = metrics_from_json(line);
  CHECK(to_json_line(back) == line);
  CHECK(numeric_fields(back) == numeric_fields(r));
  CHECK(back.phases == r.phases);
  CHECK(back.algorithm == "bapo");
  CHECK(metrics_header_line().find(kMetricsSchema) != std::string::npos);
  CHECK_THROWS(metrics_from_json("{not json"));
}

TEST_CASE("ledger arithmetic") {
  RolloutLedger l(8);
  l.charge(RolloutPurpose::kFresh, 64);
  l.charge(RolloutPurpose::kReevaluation, 5);
  l.charge(RolloutPurpose::kDapoResample, 3);
  l.charge(RolloutPurpose::kEvaluation, 100);
  CHECK(l.cumulative_groups() == 72);
  CHECK(l.cumulative_responses() == 576);
  CHECK(l.evaluation_groups() == 100);
  const auto rep = ledger_report(l);
  CHECK(rep.fresh_responses == 512);
  CHECK(rep.reevaluation_responses == 40);
  CHECK(rep.dapo_resample_responses == 24);
  CHECK(rep.evaluation_responses == 800);
  CHECK(rep.total_responses == 576);
}

TEST_CASE("migration of identical snapshots is diagonal") {
  TrackedBins bins{{0, {0, 1, 8, 8, 3}}, {10, {0, 1, 8, 8, 3}}};
  const auto m = migration_matrix(bins, 8, 0, 10);
  CHECK(m.total() == 5);
  CHECK(m.counts[8][8] == 2);
  CHECK(m.regression_fraction() == 0.0);
  for (int i = 0; i <= 8; ++i) {
    for (int j = 0; j <= 8; ++j) {
      if (i != j) CHECK(m.counts[i][j] == 0);
    }
  }
}

TEST_CASE("migration conserves mass and rows match the reference histogram") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(60));
    std::vector<int> a(n), b(n);
    for (auto& x : a) x = static_cast<int>(rng.below(9));
    for (auto& x : b) x = static_cast<int>(rng.below(9));
    const auto m = migration_matrix({{0, a}, {5, b}}, 8, 0, 5);
    CHECK(m.total() == static_cast<std::uint64_t>(n));
    const auto h = bin_histogram(a, 8);
    for (int i = 0; i <= 8; ++i) CHECK(m.row_sum(i) == h[i]);
    std::uint64_t below = 0;
    for (int i = 0; i < n; ++i) below += b[i] < a[i];
    CHECK(m.regression_fraction() == doctest::Approx(static_cast<double>(below) / n));
  }
}

TEST_CASE("missing checkpoint lists the available steps") {
  TrackedBins bins{{0, {1}}, {10, {2}}};
  try {
    migration_matrix(bins, 8, 0, 7);
    FAIL("expected out_of_range");
  } catch (const std::out_of_range& e) {
    CHECK(std::string(e.what()).find("0,10") != std::string::npos);
  }
  CHECK_THROWS_AS(migration_matrix({{0, {1, 2}}, {1, {1}}}, 8, 0, 1), std::invalid_argument);
}

TEST_CASE("unlocked fraction") {
  CHECK(*unlocked_fraction({0, 0, 0, 0, 3}, {0, 1, 2, 0, 0}) == 0.5);
  CHECK_FALSE(unlocked_fraction({1, 2}, {0, 0}).has_value());
  CHECK_THROWS(unlocked_fraction({0}, {0, 1}));
}

TEST_CASE("tracked bins CSV round-trip") {
  TrackedBins bins{{0, {0, 1, 2}}, {10, {3, 4, 8}}, {20, {8, 8, 8}}};
  const std::vector<int> ids{4, 9, 11};
  std::stringstream ss;
  write_tracked_bins(bins, ids, ss);
  std::vector<int> ids_back;
  CHECK(read_tracked_bins(ss, &ids_back) == bins);
  CHECK(ids_back == ids);
  std::stringstream bad("step,p1\n0,1\n");
  CHECK_THROWS(read_tracked_bins(bad));
}

}  // TEST_SUITE
