#pragma once

#include <vector>

#include "mvtta/datagen.hpp"
#include "mvtta/model.hpp"
#include "mvtta/rng.hpp"

namespace mvtta::pdc {

struct PseudoLabeledItem {
  data::ViewSample sample;
  int pseudo_label = 0;
};

struct PseudoLabeledSet {
  std::vector<PseudoLabeledItem> items;
  int classes = 0;

  std::vector<int> class_counts() const;
};

// Tags every sample with the model's argmax class on the un-augmented input.
// Ties break toward the lowest class index. Ground-truth labels are never
// read.
PseudoLabeledSet pseudo_label(const Model& model,
                              const std::vector<data::ViewSample>& samples);

// Random undersampling to a class-balanced subset: every class keeps exactly
// N_m items, where N_m is the smallest per-class count. Items come back in
// their original input order. Throws CalibrationError naming the first class
// with no pseudo-labeled members.
PseudoLabeledSet balanced_undersample(const PseudoLabeledSet& set, Rng& rng);

}  // namespace mvtta::pdc
