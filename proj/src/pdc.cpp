#include "mvtta/pdc.hpp"

#include <algorithm>
#include <limits>

#include "mvtta/errors.hpp"

namespace mvtta::pdc {

std::vector<int> PseudoLabeledSet::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (const PseudoLabeledItem& item : items) {
    ++counts[static_cast<std::size_t>(item.pseudo_label)];
  }
  return counts;
}

PseudoLabeledSet pseudo_label(const Model& model,
                              const std::vector<data::ViewSample>& samples) {
  PseudoLabeledSet out;
  out.classes = model.arch().classes;
  out.items.reserve(samples.size());
  for (const data::ViewSample& s : samples) {
    PseudoLabeledItem item;
    item.sample = s;
    item.pseudo_label = argmax_lowest(model.predict_proba(s.features));
    out.items.push_back(std::move(item));
  }
  return out;
}

PseudoLabeledSet balanced_undersample(const PseudoLabeledSet& set, Rng& rng) {
  if (set.classes < 1) {
    throw InputError("balanced_undersample: set has no classes");
  }
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(set.classes));
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    by_class[static_cast<std::size_t>(set.items[i].pseudo_label)].push_back(i);
  }
  std::size_t min_count = std::numeric_limits<std::size_t>::max();
  for (int c = 0; c < set.classes; ++c) {
    const std::size_t n = by_class[static_cast<std::size_t>(c)].size();
    if (n == 0) {
      throw CalibrationError(
          "balanced_undersample: no pseudo-labeled samples for class " +
          std::to_string(c));
    }
    min_count = std::min(min_count, n);
  }

  // Keep a uniform random subset of size min_count from each class, then
  // emit everything in original input order so the result is independent of
  // class iteration order.
  std::vector<bool> keep(set.items.size(), false);
  for (int c = 0; c < set.classes; ++c) {
    std::vector<std::size_t>& indices = by_class[static_cast<std::size_t>(c)];
    rng.shuffle(indices);
    for (std::size_t j = 0; j < min_count; ++j) {
      keep[indices[j]] = true;
    }
  }
  PseudoLabeledSet out;
  out.classes = set.classes;
  out.items.reserve(min_count * static_cast<std::size_t>(set.classes));
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    if (keep[i]) {
      out.items.push_back(set.items[i]);
    }
  }
  return out;
}

}  // namespace mvtta::pdc
