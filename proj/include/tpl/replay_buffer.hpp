#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "tpl/data.hpp"
#include "tpl/rng.hpp"

namespace tpl {

struct BufferEntry {
  Sample sample;
  std::size_t task_index = 0;
};

// Class-balanced replay memory with a fixed total budget.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept;
  bool empty() const noexcept { return size() == 0; }

  // Stored classes in the order they were first added.
  const std::vector<int>& classes() const noexcept { return class_order_; }
  std::size_t count(int label) const noexcept;
  bool contains_task(std::size_t task_index) const noexcept;

  std::vector<const BufferEntry*> entries() const;
  // Buf_{t^c}: everything not belonging to task `task_index`.
  std::vector<const BufferEntry*> view_excluding_task(std::size_t task_index) const;
  std::vector<const BufferEntry*> view_of_task(std::size_t task_index) const;

  // Rebalances to floor(capacity / classes) per class (remainder to the
  // earliest classes): old classes are randomly subsampled and the new task's
  // classes are sampled without replacement from its training split.
  void update(const TaskDataset& task, std::size_t task_index, Rng& rng);

  // Appends an entry verbatim (used when loading a run directory).
  void restore(BufferEntry entry);

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&);

 private:
  std::size_t capacity_;
  std::vector<int> class_order_;
  std::map<int, std::vector<BufferEntry>> by_class_;
};

bool operator==(const BufferEntry& a, const BufferEntry& b);

ReplayBuffer update_buffer(ReplayBuffer buffer, const TaskDataset& task, std::size_t task_index,
                           Rng& rng);

}  // namespace tpl
