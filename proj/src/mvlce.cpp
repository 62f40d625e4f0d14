#include "mvtta/mvlce.hpp"

#include <utility>

#include "mvtta/errors.hpp"

namespace mvtta::mvlce {

namespace {

void require_views(const data::PatientRecord& patient) {
  if (patient.views.empty()) {
    throw InputError("patient " + patient.patient_id + " has no views");
  }
}

PatientPrediction finish(const data::PatientRecord& patient,
                         std::vector<int> view_ids,
                         std::vector<Vec> view_probs, Vec patient_probs) {
  PatientPrediction pred;
  pred.patient_id = patient.patient_id;
  pred.label = patient.label;
  pred.patient_probs = std::move(patient_probs);
  pred.predicted_class = argmax_lowest(pred.patient_probs);
  pred.view_predictions.reserve(view_probs.size());
  for (const Vec& p : view_probs) {
    pred.view_predictions.push_back(argmax_lowest(p));
  }
  pred.view_ids = std::move(view_ids);
  pred.view_probs = std::move(view_probs);
  return pred;
}

// Index of the lowest view id: the patient-level score of the single-view
// baseline, independent of the order views were stored in.
std::size_t primary_view_index(const std::vector<int>& view_ids) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < view_ids.size(); ++i) {
    if (view_ids[i] < view_ids[best]) {
      best = i;
    }
  }
  return best;
}

}  // namespace

Vec multiview_ensemble(const std::vector<Vec>& view_probs) {
  if (view_probs.empty()) {
    throw InputError("multiview_ensemble: no views");
  }
  Vec mean(view_probs[0].size(), 0.0);
  for (const Vec& p : view_probs) {
    if (p.size() != mean.size()) {
      throw InputError("multiview_ensemble: class count mismatch");
    }
    for (std::size_t c = 0; c < p.size(); ++c) {
      mean[c] += p[c];
    }
  }
  for (double& m : mean) {
    m /= static_cast<double>(view_probs.size());
  }
  return mean;
}

std::vector<PatientPrediction> predict_offline(
    const Model& model, const MemoryQueue& queue,
    const std::vector<data::PatientRecord>& patients, int k) {
  std::vector<PatientPrediction> out;
  out.reserve(patients.size());
  for (const data::PatientRecord& patient : patients) {
    require_views(patient);
    std::vector<int> view_ids;
    std::vector<Vec> view_probs;
    for (const data::ViewSample& view : patient.views) {
      const ForwardTrace tr = model.forward(view.features);
      const Vec embedding = l2_normalized(tr.embedding);
      const Vec probs = stable_softmax(tr.logit_values);
      view_ids.push_back(view.view_id);
      view_probs.push_back(knn_refine(queue, embedding, probs, k).probs);
    }
    Vec voted = multiview_ensemble(view_probs);
    out.push_back(finish(patient, std::move(view_ids), std::move(view_probs),
                         std::move(voted)));
  }
  return out;
}

std::vector<PatientPrediction> predict_raw(
    const Model& model, const std::vector<data::PatientRecord>& patients) {
  std::vector<PatientPrediction> out;
  out.reserve(patients.size());
  for (const data::PatientRecord& patient : patients) {
    require_views(patient);
    std::vector<int> view_ids;
    std::vector<Vec> view_probs;
    for (const data::ViewSample& view : patient.views) {
      view_ids.push_back(view.view_id);
      view_probs.push_back(model.predict_proba(view.features));
    }
    Vec primary = view_probs[primary_view_index(view_ids)];
    out.push_back(finish(patient, std::move(view_ids), std::move(view_probs),
                         std::move(primary)));
  }
  return out;
}

std::vector<PatientPrediction> predict_online(
    const Model& source, MemoryQueue& queue,
    const std::vector<data::PatientRecord>& patients, int k) {
  std::vector<PatientPrediction> out;
  out.reserve(patients.size());
  for (const data::PatientRecord& patient : patients) {
    require_views(patient);
    std::vector<int> view_ids;
    std::vector<Vec> view_probs;
    // (embedding, raw probs) pairs pushed only after this patient's
    // prediction is final, so no patient ever votes on itself.
    std::vector<std::pair<Vec, Vec>> entries;
    for (const data::ViewSample& view : patient.views) {
      const ForwardTrace tr = source.forward(view.features);
      Vec embedding = l2_normalized(tr.embedding);
      Vec probs = stable_softmax(tr.logit_values);
      view_ids.push_back(view.view_id);
      view_probs.push_back(knn_refine(queue, embedding, probs, k).probs);
      entries.emplace_back(std::move(embedding), std::move(probs));
    }
    Vec voted = multiview_ensemble(view_probs);
    out.push_back(finish(patient, std::move(view_ids), std::move(view_probs),
                         std::move(voted)));
    for (std::pair<Vec, Vec>& entry : entries) {
      queue.push(std::move(entry.first), std::move(entry.second));
    }
  }
  return out;
}

}  // namespace mvtta::mvlce
