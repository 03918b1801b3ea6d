#ifndef BAPO_REPLAY_BUFFER_HPP
#define BAPO_REPLAY_BUFFER_HPP

#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "bapo/group_stats.hpp"

namespace bapo {

/// High-quality entries are only reusable for this many steps after insertion.
inline constexpr std::uint64_t kHighRecencyWindow = 3;

/// One stored rollout group plus the admission context it was stored under.
struct BufferEntry {
  ResponseGroup group;
  double mean_at_insert = 0.0;
  std::uint64_t insert_step = 0;
  /// Admission interval in force at insertion: [0, c1] for bad, [c2, c3] for high.
  double admit_low = 0.0;
  double admit_high = 0.0;
  /// Monotone insertion counter, unique per buffer.
  std::uint64_t sequence = 0;

  int prompt_id() const { return group.prompt_id; }
};

enum class BufferKind { kBad, kHigh };

/// Bounded FIFO store with per-prompt replacement.
///
/// Re-inserting a prompt drops its older entry; overflow evicts the oldest.
class FifoBuffer {
 public:
  FifoBuffer(BufferKind kind, std::size_t capacity);

  BufferKind kind() const { return kind_; }
  const char* name() const { return kind_ == BufferKind::kBad ? "bad" : "high"; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<BufferEntry>& entries() const { return entries_; }

  void insert(BufferEntry entry);
  bool contains_prompt(int prompt_id) const;
  bool remove_prompt(int prompt_id);

  /// Drops entries older than the recency window. Returns the number purged.
  std::size_t purge_stale(std::uint64_t current_step, std::uint64_t window = kHighRecencyWindow);

  /// Entries inserted 1..window steps before `current_step`, oldest first.
  std::vector<const BufferEntry*> eligible(std::uint64_t current_step,
                                           std::uint64_t window = kHighRecencyWindow) const;

  /// JSONL, one entry per line.
  void dump_jsonl(std::ostream& out) const;

 private:
  BufferKind kind_;
  std::size_t capacity_;
  std::deque<BufferEntry> entries_;
  std::uint64_t next_sequence_ = 0;
};

/// Stores the group iff μ <= c1.
bool admit_bad(FifoBuffer& buffer, const ResponseGroup& group, double c1, std::uint64_t step);

/// Stores the group iff c2 <= μ <= c3. Throws std::invalid_argument when c2 > c3.
bool admit_high(FifoBuffer& buffer, const ResponseGroup& group, double c2, double c3,
                std::uint64_t step);

struct BufferCapacities {
  std::size_t bad = 0;
  std::size_t high = 0;
};

/// Both buffers default to the training batch size.
BufferCapacities capacity_defaults(std::size_t train_batch_size);

/// Up to `max_prompts` oldest entries, copied; the buffer is not modified.
std::vector<BufferEntry> drain_for_reeval(const FifoBuffer& buffer, std::size_t max_prompts);

}  // namespace bapo

#endif  // BAPO_REPLAY_BUFFER_HPP
