#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "helpers.hpp"

using namespace bapo;

namespace {

ResponseGroup fake_group(int prompt, int correct, int G = 8) {
  static const PolicyParams behavior(64, 2, 1);
  Rng rng(static_cast<std::uint64_t>(prompt) * 131 + correct);
  return testing::group_with_mean(prompt, correct, G, behavior, rng);
}

std::vector<int> prompts_of(const FifoBuffer& b) {
  std::vector<int> out;
  for (const auto& e : b.entries()) out.push_back(e.prompt_id());
  return out;
}

}  // namespace

TEST_SUITE("replay_buffer") {

TEST_CASE("bad-buffer admission is inclusive at c1") {
  FifoBuffer b(BufferKind::kBad, 8);
  CHECK(admit_bad(b, fake_group(0, 0), 0.125, 0));
  CHECK_FALSE(admit_bad(b, fake_group(1, 2), 0.125, 0));
  CHECK(admit_bad(b, fake_group(2, 1), 0.125, 0));
  CHECK(prompts_of(b) == std::vector<int>{0, 2});
}

TEST_CASE("high-buffer admission window") {
  FifoBuffer b(BufferKind::kHigh, 8);
  CHECK(admit_high(b, fake_group(0, 3), 0.25, 0.5, 0));
  CHECK_FALSE(admit_high(b, fake_group(1, 5), 0.25, 0.5, 0));
  CHECK(admit_high(b, fake_group(2, 2), 0.25, 0.5, 0));
  CHECK(admit_high(b, fake_group(3, 4), 0.25, 0.5, 0));
  CHECK_THROWS(admit_high(b, fake_group(4, 4), 0.5, 0.25, 0));
}

TEST_CASE("recency window: eligible for three steps after insertion") {
  FifoBuffer b(BufferKind::kHigh, 8);
  admit_high(b, fake_group(0, 3), 0.25, 0.5, 10);
  CHECK(b.eligible(10).empty());
  for (std::uint64_t s : {11, 12, 13}) CHECK(b.eligible(s).size() == 1);
  CHECK(b.eligible(14).empty());
  CHECK(b.purge_stale(13) == 0);
  CHECK(b.purge_stale(14) == 1);
  CHECK(b.empty());
}

TEST_CASE("capacity defaults and FIFO eviction") {
  CHECK(capacity_defaults(256).bad == 256);
  CHECK(capacity_defaults(256).high == 256);
  CHECK(capacity_defaults(8).bad == 8);
  CHECK(capacity_defaults(8).high == 8);
  FifoBuffer b(BufferKind::kBad, 2);
  for (int p : {0, 1, 2}) admit_bad(b, fake_group(p, 0), 0.125, 0);
  CHECK(prompts_of(b) == std::vector<int>{1, 2});
  CHECK_FALSE(b.contains_prompt(0));
}

TEST_CASE("re-inserting a prompt replaces its older entry") {
  FifoBuffer b(BufferKind::kBad, 4);
  admit_bad(b, fake_group(0, 0), 0.125, 0);
  admit_bad(b, fake_group(1, 0), 0.125, 1);
  admit_bad(b, fake_group(0, 1), 0.125, 2);
  CHECK(prompts_of(b) == std::vector<int>{1, 0});
  CHECK(b.entries().back().insert_step == 2);
}

TEST_CASE("drain for re-evaluation takes the oldest entries") {
  FifoBuffer small(BufferKind::kBad, 256);
  CHECK(drain_for_reeval(small, 128).empty());
  for (int p = 0; p < 5; ++p) admit_bad(small, fake_group(p, 0), 0.125, p);
  const auto five = drain_for_reeval(small, 128);
  REQUIRE(five.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(five[i].prompt_id() == i);

  FifoBuffer big(BufferKind::kBad, 256);
  for (int p = 0; p < 200; ++p) {
    static const PolicyParams behavior(200, 2, 1);
    Rng rng(p);
    admit_bad(big, testing::group_with_mean(p, 0, 8, behavior, rng), 0.125, 0);
  }
  const auto first = drain_for_reeval(big, 128);
  REQUIRE(first.size() == 128);
  for (int i = 0; i < 128; ++i) CHECK(first[i].prompt_id() == i);
  CHECK(big.size() == 200);
}

TEST_CASE("random operation sequences obey the buffer laws") {
  struct Live {
    int prompt;
    std::uint64_t step;
    double mean;
  };
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const std::size_t cap = 1 + rng.below(12);
    FifoBuffer bad(BufferKind::kBad, cap), high(BufferKind::kHigh, cap);
    // Oracle: every insertion still alive (not superseded, removed or purged)
    // in insertion order, per buffer.
    std::vector<Live> live_bad, live_high;
    std::uint64_t step = 0;
    for (int op = 0; op < 300; ++op) {
      const auto kind = rng.below(10);
      if (kind < 6) {
        const int prompt = static_cast<int>(rng.below(20));
        const int correct = static_cast<int>(rng.below(9));
        const auto g = fake_group(prompt, correct);
        const double c1 = 0.125, c2 = 0.25, c3 = 0.5;
        const bool in_bad = admit_bad(bad, g, c1, step);
        CHECK(in_bad == (g.mean <= c1));
        const bool in_high = g.mean > c1 && admit_high(high, g, c2, c3, step);
        CHECK(in_high == (g.mean > c1 && g.mean >= c2 && g.mean <= c3));
        CHECK_FALSE((in_bad && in_high));
        auto note = [&](std::vector<Live>& live, bool admitted) {
          if (!admitted) return;
          std::erase_if(live, [&](const Live& l) { return l.prompt == prompt; });
          live.push_back({prompt, step, g.mean});
        };
        note(live_bad, in_bad);
        note(live_high, in_high);
      } else if (kind < 8) {
        ++step;
      } else if (kind < 9) {
        const int prompt = static_cast<int>(rng.below(20));
        const bool had = bad.contains_prompt(prompt);
        CHECK(bad.remove_prompt(prompt) == had);
        std::erase_if(live_bad, [&](const Live& l) { return l.prompt == prompt; });
      } else {
        high.purge_stale(step);
        std::erase_if(live_high, [&](const Live& l) { return step > l.step && step - l.step > 3; });
        for (const auto& e : high.entries()) CHECK(step - std::min(step, e.insert_step) <= 3);
      }
      for (auto* pair : {&bad, &high}) {
        CHECK(pair->size() <= cap);
        const auto& entries = pair->entries();
        for (std::size_t i = 1; i < entries.size(); ++i) {
          CHECK(entries[i - 1].sequence < entries[i].sequence);
        }
      }
      // Suffix law: the buffer holds the newest min(cap, |live|) live entries
      // that have not been evicted.
      auto suffix = [](const FifoBuffer& b, const std::vector<Live>& live) {
        std::vector<int> held = prompts_of(b);
        if (held.size() > live.size()) return false;
        const auto offset = live.size() - held.size();
        for (std::size_t i = 0; i < held.size(); ++i) {
          if (held[i] != live[offset + i].prompt) return false;
        }
        return true;
      };
      CHECK(suffix(bad, live_bad));
      CHECK(suffix(high, live_high));
      // Evicted entries never come back.
      auto trim = [&](std::vector<Live>& live, const FifoBuffer& b) {
        live.erase(live.begin(), live.end() - static_cast<std::ptrdiff_t>(b.size()));
      };
      trim(live_bad, bad);
      trim(live_high, high);
      for (const auto& e : bad.entries()) CHECK(e.mean_at_insert <= e.admit_high);
      for (const auto& e : high.entries()) {
        CHECK(e.mean_at_insert >= e.admit_low);
        CHECK(e.mean_at_insert <= e.admit_high);
      }
    }
  }
}

TEST_CASE("buffer contents are reproducible from the operation sequence") {
  auto build = [] {
    FifoBuffer b(BufferKind::kBad, 5);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) admit_bad(b, fake_group(static_cast<int>(rng.below(10)), 0), 0.125, i);
    std::ostringstream os;
    b.dump_jsonl(os);
    return os.str();
  };
  const auto a = build();
  CHECK(a == build());
  CHECK(std::count(a.begin(), a.end(), '\n') == 5);
}

TEST_CASE("zero capacity is rejected") {
  CHECK_THROWS(FifoBuffer(BufferKind::kBad, 0));
  CHECK_THROWS(drain_for_reeval(FifoBuffer(BufferKind::kBad, 1), 0));
}

}  // TEST_SUITE
