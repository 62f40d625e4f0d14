#include "mvtta/memory_queue.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "mvtta/errors.hpp"
#include "mvtta/jsonio.hpp"

namespace mvtta {

MemoryQueue::MemoryQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) {
    throw ConfigError("memory queue: capacity must be >= 1");
  }
}

void MemoryQueue::push(Vec embedding, Vec probs) {
  const double norm = l2_norm(embedding);
  if (std::abs(norm - 1.0) > 1e-9) {
    throw InputError("memory queue: embedding norm " + std::to_string(norm) +
                     " is not 1");
  }
  require_probability(probs, 1e-9, "memory queue");
  if (!entries_.empty()) {
    if (embedding.size() != entries_.front().embedding.size() ||
        probs.size() != entries_.front().probs.size()) {
      throw InputError("memory queue: entry dimensions changed");
    }
  }
  QueueEntry entry;
  entry.embedding = std::move(embedding);
  entry.probs = std::move(probs);
  entry.insertion_counter = next_counter_++;
  entries_.push_back(std::move(entry));
  if (entries_.size() > capacity_) {
    entries_.pop_front();
  }
}

void MemoryQueue::clear() { entries_.clear(); }

double cosine_distance(const Vec& a, const Vec& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw InputError("cosine_distance: zero vector");
  }
  return 1.0 - dot(a, b) / (na * nb);
}

Refined knn_refine(const MemoryQueue& queue, const Vec& embedding,
                   const Vec& fallback_probs, int k) {
  if (k < 1) {
    throw InputError("knn_refine: K must be >= 1");
  }
  if (queue.size() < static_cast<std::size_t>(k)) {
    Refined out;
    out.probs = fallback_probs;
    out.pseudo_label = argmax_lowest(fallback_probs);
    return out;
  }
  struct Candidate {
    double distance;
    std::uint64_t counter;
    const Vec* probs;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(queue.size());
  for (const QueueEntry& e : queue.entries()) {
    candidates.push_back(
        {cosine_distance(embedding, e.embedding), e.insertion_counter, &e.probs});
  }
  const auto by_distance_then_age = [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) {
      return a.distance < b.distance;
    }
    return a.counter < b.counter;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + k,
                    candidates.end(), by_distance_then_age);

  Refined out;
  out.probs.assign(candidates[0].probs->size(), 0.0);
  for (int j = 0; j < k; ++j) {
    const Vec& p = *candidates[static_cast<std::size_t>(j)].probs;
    for (std::size_t c = 0; c < p.size(); ++c) {
      out.probs[c] += p[c];
    }
  }
  for (double& p : out.probs) {
    p /= k;
  }
  out.pseudo_label = argmax_lowest(out.probs);
  return out;
}

std::string queue_to_json(const MemoryQueue& queue) {
  std::ostringstream out;
  out << "{\n  \"capacity\": " << queue.capacity()
      << ",\n  \"size\": " << queue.size() << ",\n  \"entries\": [\n";
  std::size_t i = 0;
  for (const QueueEntry& e : queue.entries()) {
    out << "    {\"insertion_counter\": " << e.insertion_counter
        << ", \"embedding\": [";
    for (std::size_t j = 0; j < e.embedding.size(); ++j) {
      if (j) out << ", ";
      out << format_double(e.embedding[j]);
    }
    out << "], \"probs\": [";
    for (std::size_t j = 0; j < e.probs.size(); ++j) {
      if (j) out << ", ";
      out << format_double(e.probs[j]);
    }
    out << "]}";
    out << (++i < queue.size() ? ",\n" : "\n");
  }
  out << "  ]\n}\n";
  return out.str();
}

}  // namespace mvtta
