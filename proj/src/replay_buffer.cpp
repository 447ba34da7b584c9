#include "tpl/replay_buffer.hpp"

#include <algorithm>
#include <numeric>

#include "tpl/error.hpp"

namespace tpl {

std::size_t ReplayBuffer::size() const noexcept {
  std::size_t n = 0;
  for (const auto& [label, entries] : by_class_) n += entries.size();
  return n;
}

std::size_t ReplayBuffer::count(int label) const noexcept {
  const auto it = by_class_.find(label);
  return it == by_class_.end() ? 0 : it->second.size();
}

bool ReplayBuffer::contains_task(std::size_t task_index) const noexcept {
  for (const auto& [label, entries] : by_class_) {
    for (const BufferEntry& e : entries) {
      if (e.task_index == task_index) return true;
    }
  }
  return false;
}

std::vector<const BufferEntry*> ReplayBuffer::entries() const {
  std::vector<const BufferEntry*> out;
  for (int label : class_order_) {
    for (const BufferEntry& e : by_class_.at(label)) out.push_back(&e);
  }
  return out;
}

std::vector<const BufferEntry*> ReplayBuffer::view_excluding_task(std::size_t task_index) const {
  std::vector<const BufferEntry*> out;
  for (const BufferEntry* e : entries()) {
    if (e->task_index != task_index) out.push_back(e);
  }
  return out;
}

std::vector<const BufferEntry*> ReplayBuffer::view_of_task(std::size_t task_index) const {
  std::vector<const BufferEntry*> out;
  for (const BufferEntry* e : entries()) {
    if (e->task_index == task_index) out.push_back(e);
  }
  return out;
}

namespace {

// Keeps `keep` randomly chosen entries, preserving their relative order.
void subsample(std::vector<BufferEntry>& entries, std::size_t keep, Rng& rng) {
  if (entries.size() <= keep) return;
  std::vector<std::size_t> idx(entries.size());
  std::iota(idx.begin(), idx.end(), 0);
  shuffle(std::span<std::size_t>(idx), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<BufferEntry> kept;
  kept.reserve(keep);
  for (std::size_t i : idx) kept.push_back(std::move(entries[i]));
  entries = std::move(kept);
}

}  // namespace

void ReplayBuffer::update(const TaskDataset& task, std::size_t task_index, Rng& rng) {
  for (int label : task.class_list) {
    if (by_class_.count(label)) {
      throw Error(Errc::invalid_argument,
                  "class " + std::to_string(label) + " is already in the replay buffer");
    }
  }
  std::vector<int> order = class_order_;
  order.insert(order.end(), task.class_list.begin(), task.class_list.end());
  const std::size_t total = order.size();
  const std::size_t base = capacity_ / total;
  const std::size_t remainder = capacity_ % total;
  auto quota = [&](std::size_t position) { return base + (position < remainder ? 1 : 0); };

  Rng trim_rng = rng.split("trim");
  for (std::size_t p = 0; p < class_order_.size(); ++p) {
    subsample(by_class_[class_order_[p]], quota(p), trim_rng);
  }
  Rng fill_rng = rng.split("fill");
  for (std::size_t c = 0; c < task.class_list.size(); ++c) {
    const int label = task.class_list[c];
    std::vector<BufferEntry> candidates;
    for (const Sample& s : task.train) {
      if (s.label == label) candidates.push_back(BufferEntry{s, task_index});
    }
    subsample(candidates, quota(class_order_.size() + c), fill_rng);
    by_class_[label] = std::move(candidates);
  }
  class_order_ = std::move(order);
}

void ReplayBuffer::restore(BufferEntry entry) {
  const int label = entry.sample.label;
  if (!by_class_.count(label)) class_order_.push_back(label);
  by_class_[label].push_back(std::move(entry));
  if (size() > capacity_) throw Error(Errc::invalid_argument, "restored buffer exceeds capacity");
}

bool operator==(const BufferEntry& a, const BufferEntry& b) {
  return a.task_index == b.task_index && a.sample.label == b.sample.label &&
         a.sample.features == b.sample.features;
}

bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
  return a.capacity_ == b.capacity_ && a.class_order_ == b.class_order_ &&
         a.by_class_ == b.by_class_;
}

ReplayBuffer update_buffer(ReplayBuffer buffer, const TaskDataset& task, std::size_t task_index,
                           Rng& rng) {
  buffer.update(task, task_index, rng);
  return buffer;
}

}  // namespace tpl
