#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mvtta/datagen.hpp"
#include "mvtta/memory_queue.hpp"
#include "mvtta/model.hpp"
#include "mvtta/vecmath.hpp"

namespace mvtta::mvlce {

struct PatientPrediction {
  std::string patient_id;
  Vec patient_probs;  // cross-view soft vote, or the primary view's
                      // distribution when multi-view inference is disabled
  int predicted_class = 0;
  std::vector<int> view_ids;
  std::vector<Vec> view_probs;        // per-view distributions before voting
  std::vector<int> view_predictions;  // argmax of each view's distribution
  std::optional<int> label;           // echoed from the record when present
};

// Unweighted componentwise mean over views. Throws InputError on an empty
// list or mismatched lengths.
Vec multiview_ensemble(const std::vector<Vec>& view_probs);

// Post-adaptation inference: per view, an un-augmented forward pass through
// the given model, neighbour refinement against the queue, then cross-view
// soft voting. Deterministic; mutates nothing.
std::vector<PatientPrediction> predict_offline(
    const Model& model, const MemoryQueue& queue,
    const std::vector<data::PatientRecord>& patients, int k);

// Single-view baseline inference: raw model probabilities per view for
// per-image scoring, with the patient scored by its lowest-numbered view
// alone (no refinement, no voting).
std::vector<PatientPrediction> predict_raw(
    const Model& model, const std::vector<data::PatientRecord>& patients);

// Streaming inference with a frozen model: each patient's views are refined
// against the queue built from strictly earlier patients only (raw fallback
// while the queue holds fewer than k entries), the prediction is emitted,
// and only then are this patient's entries pushed.
std::vector<PatientPrediction> predict_online(
    const Model& source, MemoryQueue& queue,
    const std::vector<data::PatientRecord>& patients, int k);

}  // namespace mvtta::mvlce
