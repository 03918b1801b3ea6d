#include "bapo/replay_buffer.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace bapo {

FifoBuffer::FifoBuffer(BufferKind kind, std::size_t capacity) : kind_(kind), capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
}

void FifoBuffer::insert(BufferEntry entry) {
  remove_prompt(entry.prompt_id());
  entry.sequence = next_sequence_++;
  entries_.push_back(std::move(entry));
  while (entries_.size() > capacity_) entries_.pop_front();
}

bool FifoBuffer::contains_prompt(int prompt_id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const BufferEntry& e) { return e.prompt_id() == prompt_id; });
}

bool FifoBuffer::remove_prompt(int prompt_id) {
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const BufferEntry& e) { return e.prompt_id() == prompt_id; });
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

std::size_t FifoBuffer::purge_stale(std::uint64_t current_step, std::uint64_t window) {
  const auto before = entries_.size();
  std::erase_if(entries_, [&](const BufferEntry& e) {
    return current_step > e.insert_step && current_step - e.insert_step > window;
  });
  return before - entries_.size();
}

std::vector<const BufferEntry*> FifoBuffer::eligible(std::uint64_t current_step,
                                                     std::uint64_t window) const {
  std::vector<const BufferEntry*> out;
  for (const auto& e : entries_) {
    if (current_step > e.insert_step && current_step - e.insert_step <= window) out.push_back(&e);
  }
  return out;
}

void FifoBuffer::dump_jsonl(std::ostream& out) const {
  for (const auto& e : entries_) {
    nlohmann::json j;
    j["buffer"] = name();
    j["u"] = e.prompt_id();
    auto& responses = j["responses"] = nlohmann::json::array();
    for (const auto& y : e.group.responses) responses.push_back(y.tokens);
    j["rewards"] = e.group.rewards;
    std::vector<double> lps;
    for (int i = 0; i < e.group.size(); ++i) lps.push_back(e.group.behavior_log_prob(i));
    j["behavior_log_probs"] = lps;
    j["behavior_step"] = e.group.behavior_step;
    j["mean_at_insert"] = e.mean_at_insert;
    j["insert_step"] = e.insert_step;
    out << j.dump() << '\n';
  }
}

bool admit_bad(FifoBuffer& buffer, const ResponseGroup& group, double c1, std::uint64_t step) {
  if (group.mean > c1) return false;
  buffer.insert(BufferEntry{group, group.mean, step, 0.0, c1, 0});
  return true;
}

bool admit_high(FifoBuffer& buffer, const ResponseGroup& group, double c2, double c3,
                std::uint64_t step) {
  if (c2 > c3) throw std::invalid_argument("c2 must not exceed c3");
  if (group.mean < c2 || group.mean > c3) return false;
  buffer.insert(BufferEntry{group, group.mean, step, c2, c3, 0});
  return true;
}

BufferCapacities capacity_defaults(std::size_t train_batch_size) {
  if (train_batch_size < 1) throw std::invalid_argument("batch size must be positive");
  return {train_batch_size, train_batch_size};
}

std::vector<BufferEntry> drain_for_reeval(const FifoBuffer& buffer, std::size_t max_prompts) {
  if (max_prompts < 1) throw std::invalid_argument("max_prompts must be positive");
  const auto n = std::min(max_prompts, buffer.size());
  return {buffer.entries().begin(), buffer.entries().begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace bapo
