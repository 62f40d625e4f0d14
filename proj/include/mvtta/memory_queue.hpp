#pragma once

#include <cstdint>
#include <deque>
#include <string>

#include "mvtta/vecmath.hpp"

namespace mvtta {

struct QueueEntry {
  Vec embedding;  // unit L2 norm
  Vec probs;      // sums to 1
  std::uint64_t insertion_counter = 0;
};

// Fixed-capacity FIFO store of (embedding, probability) pairs. Insertion
// counters start at 1 and increase monotonically, surviving evictions, so
// they double as a global age order.
class MemoryQueue {
 public:
  explicit MemoryQueue(std::size_t capacity);

  void push(Vec embedding, Vec probs);
  void clear();

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<QueueEntry>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<QueueEntry> entries_;
  std::uint64_t next_counter_ = 1;
};

// 1 - (a.b) / (|a||b|), range [0, 2]. Throws InputError on zero vectors.
double cosine_distance(const Vec& a, const Vec& b);

struct Refined {
  Vec probs;
  int pseudo_label = 0;
};

// Soft k-nearest-neighbour vote: mean of the probs of the K entries closest
// to `embedding` by cosine distance (ties broken toward older entries),
// argmax with ties toward the lowest class. With fewer than K entries the
// fallback probabilities are returned unchanged.
Refined knn_refine(const MemoryQueue& queue, const Vec& embedding,
                   const Vec& fallback_probs, int k);

// JSON text of the queue contents, for debugging dumps.
std::string queue_to_json(const MemoryQueue& queue);

}  // namespace mvtta
