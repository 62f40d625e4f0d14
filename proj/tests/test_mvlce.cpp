#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "mvtta/datagen.hpp"
#include "mvtta/errors.hpp"
#include "mvtta/memory_queue.hpp"
#include "mvtta/model.hpp"
#include "mvtta/mvlce.hpp"
#include "mvtta/rng.hpp"
#include "mvtta/vecmath.hpp"

using mvtta::Architecture;
using mvtta::MemoryQueue;
using mvtta::Model;
using mvtta::Rng;
using mvtta::Vec;
namespace data = mvtta::data;
namespace mvlce = mvtta::mvlce;

namespace {

// Two-feature, two-class model: identity encoder, configurable linear head.
Model linear_model(const mvtta::Matrix& head_weight) {
  Architecture arch;
  arch.input_dim = 2;
  arch.hidden_dims = {};
  arch.embed_dim = 2;
  arch.classes = 2;
  mvtta::Params params = Model::random_init(arch, 0).params();
  mvtta::LayerParams& encoder = params.layers[0];
  std::fill(encoder.weight.data.begin(), encoder.weight.data.end(), 0.0);
  encoder.weight.at(0, 0) = 1.0;
  encoder.weight.at(1, 1) = 1.0;
  std::fill(encoder.bias.begin(), encoder.bias.end(), 0.0);
  params.layers[1].weight = head_weight;
  std::fill(params.layers[1].bias.begin(), params.layers[1].bias.end(), 0.0);
  return Model(arch, params);
}

mvtta::Matrix zero_head() { return mvtta::Matrix(2, 2); }

mvtta::Matrix identity_head() {
  mvtta::Matrix m(2, 2);
  m.at(0, 0) = 1.0;
  m.at(1, 1) = 1.0;
  return m;
}

data::PatientRecord make_patient(const std::string& id,
                                 const std::vector<Vec>& view_features,
                                 std::optional<int> label = std::nullopt) {
  data::PatientRecord record;
  record.patient_id = id;
  record.domain_id = "target";
  record.label = label;
  int vid = 1;
  for (const Vec& f : view_features) {
    data::ViewSample v;
    v.patient_id = id;
    v.view_id = vid++;
    v.domain_id = "target";
    v.features = f;
    v.label = label;
    record.views.push_back(std::move(v));
  }
  return record;
}

bool predictions_equal(const mvlce::PatientPrediction& a,
                       const mvlce::PatientPrediction& b) {
  return a.patient_id == b.patient_id &&
         a.patient_probs == b.patient_probs &&
         a.predicted_class == b.predicted_class && a.view_ids == b.view_ids &&
         a.view_probs == b.view_probs &&
         a.view_predictions == b.view_predictions && a.label == b.label;
}

}  // namespace

TEST_CASE("soft voting averages view distributions") {
  const Vec mean = mvlce::multiview_ensemble({{0.9, 0.1}, {0.5, 0.5}});
  CHECK(mean[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(mean[1] == doctest::Approx(0.3).epsilon(1e-12));

  CHECK(mvlce::multiview_ensemble({{0.2, 0.8}}) == Vec{0.2, 0.8});

  const Vec same = mvlce::multiview_ensemble({{0.25, 0.75}, {0.25, 0.75}});
  CHECK(same[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(same[1] == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS((void)mvlce::multiview_ensemble({}), mvtta::InputError);
  CHECK_THROWS_AS((void)mvlce::multiview_ensemble({{0.5, 0.5}, {1.0}}),
                  mvtta::InputError);
}

TEST_CASE("raw prediction scores a patient by its lowest-numbered view") {
  const Model model = linear_model(identity_head());
  const data::PatientRecord patient =
      make_patient("p0", {{1.0, 0.0}, {0.0, 1.0}}, 1);
  const auto preds = mvlce::predict_raw(model, {patient});
  REQUIRE(preds.size() == 1);
  const mvlce::PatientPrediction& p = preds[0];
  CHECK(p.patient_id == "p0");
  CHECK(p.label == 1);
  CHECK(p.view_ids == std::vector<int>{1, 2});
  REQUIRE(p.view_probs.size() == 2);
  CHECK(p.view_probs[0] == model.predict_proba({1.0, 0.0}));
  CHECK(p.view_probs[1] == model.predict_proba({0.0, 1.0}));
  CHECK(p.view_predictions == std::vector<int>{0, 1});
  // No voting in the baseline path: view 1 alone decides the patient.
  CHECK(p.patient_probs == p.view_probs[0]);
  CHECK(p.predicted_class == 0);
}

TEST_CASE("neighbour refinement replaces raw view probabilities") {
  const Model model = linear_model(zero_head());  // raw output is uniform
  MemoryQueue queue(8);
  queue.push(mvtta::l2_normalized({1.0, 0.0}), {0.9, 0.1});
  queue.push(mvtta::l2_normalized({0.0, 1.0}), {0.2, 0.8});

  const data::PatientRecord patient =
      make_patient("p0", {{2.0, 0.0}, {0.0, 3.0}});
  const auto preds = mvlce::predict_offline(model, queue, {patient}, 1);
  REQUIRE(preds.size() == 1);
  const mvlce::PatientPrediction& p = preds[0];
  CHECK(p.view_probs[0] == Vec{0.9, 0.1});
  CHECK(p.view_probs[1] == Vec{0.2, 0.8});
  CHECK(p.patient_probs[0] == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(p.patient_probs[1] == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(p.predicted_class == 0);
  CHECK_FALSE(p.label.has_value());

  // The raw path ignores the queue entirely.
  const auto raw = mvlce::predict_raw(model, {patient});
  CHECK(raw[0].view_probs[0] == Vec{0.5, 0.5});
  CHECK(raw[0].view_probs[1] == Vec{0.5, 0.5});

  CHECK_THROWS_AS((void)mvlce::predict_offline(model, queue, {patient}, 0),
                  mvtta::InputError);
}

TEST_CASE("a patient without views is rejected") {
  const Model model = linear_model(zero_head());
  MemoryQueue queue(8);
  data::PatientRecord empty;
  empty.patient_id = "bare";
  empty.domain_id = "target";
  CHECK_THROWS_WITH_AS((void)mvlce::predict_offline(model, queue, {empty}, 1),
                       doctest::Contains("bare"), mvtta::InputError);
  CHECK_THROWS_AS((void)mvlce::predict_raw(model, {empty}), mvtta::InputError);
}

TEST_CASE("view order only permutes the per-view fields of voted predictions") {
  Rng rng = Rng::stream(3, mvtta::StreamKind::Test);
  Architecture arch;
  arch.input_dim = 4;
  arch.hidden_dims = {6};
  arch.embed_dim = 3;
  arch.classes = 3;
  const Model model = Model::random_init(arch, 5);

  MemoryQueue queue(8);
  queue.push(mvtta::l2_normalized({1.0, 0.0, 0.0}), {0.7, 0.2, 0.1});
  queue.push(mvtta::l2_normalized({0.0, 1.0, 0.0}), {0.1, 0.6, 0.3});
  queue.push(mvtta::l2_normalized({0.0, 0.0, 1.0}), {0.3, 0.3, 0.4});

  const Vec f1 = testutil::random_vec(4, rng);
  const Vec f2 = testutil::random_vec(4, rng);
  const Vec f3 = testutil::random_vec(4, rng);
  const auto fwd = mvlce::predict_offline(
      model, queue, {make_patient("p", {f1, f2, f3})}, 2);
  const auto rev = mvlce::predict_offline(
      model, queue, {make_patient("p", {f3, f2, f1})}, 2);
  REQUIRE(fwd.size() == 1);
  REQUIRE(rev.size() == 1);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(fwd[0].patient_probs[c] ==
          doctest::Approx(rev[0].patient_probs[c]).epsilon(1e-12));
  }
  CHECK(fwd[0].predicted_class == rev[0].predicted_class);
  CHECK(fwd[0].view_probs[0] == rev[0].view_probs[2]);
  CHECK(fwd[0].view_probs[2] == rev[0].view_probs[0]);

  // The single-view baseline instead follows the lowest view id, which the
  // reversed record assigns to the other feature vector.
  const auto raw_fwd =
      mvlce::predict_raw(model, {make_patient("p", {f1, f2, f3})});
  const auto raw_rev =
      mvlce::predict_raw(model, {make_patient("p", {f3, f2, f1})});
  CHECK(raw_fwd[0].patient_probs == model.predict_proba(f1));
  CHECK(raw_rev[0].patient_probs == model.predict_proba(f3));
}

TEST_CASE("streaming prediction falls back to raw output until the queue fills") {
  const Model model = linear_model(identity_head());
  MemoryQueue queue(64);
  const data::PatientRecord p1 = make_patient("p1", {{1.0, 0.0}});
  const data::PatientRecord p2 = make_patient("p2", {{0.0, 1.0}});

  const auto preds = mvlce::predict_online(model, queue, {p1, p2}, 1);
  REQUIRE(preds.size() == 2);

  // First patient: nothing stored yet, so the raw distribution comes through.
  const Vec raw1 = model.predict_proba({1.0, 0.0});
  CHECK(preds[0].patient_probs == raw1);

  // Second patient: its only neighbour is the first patient's entry.
  CHECK(preds[1].patient_probs == raw1);
  CHECK(preds[1].view_probs[0] == raw1);

  CHECK(queue.size() == 2);  // one entry per processed view
}

TEST_CASE("streaming prediction is causal") {
  data::SynthConfig config;
  config.input_dim = 6;
  config.classes = 3;
  config.views = 3;
  config.source_domains = 1;
  config.samples_per_domain = 10;
  config.target_patients = 10;
  config.class_mix = {0.4, 0.35, 0.25};
  config.seed = 19;
  const data::SynthDataset dataset = data::generate(config);

  Architecture arch;
  arch.input_dim = 6;
  arch.hidden_dims = {8};
  arch.embed_dim = 4;
  arch.classes = 3;
  const Model model = Model::random_init(arch, 23);

  MemoryQueue full_queue(256);
  const auto full = mvlce::predict_online(model, full_queue, dataset.target, 3);
  REQUIRE(full.size() == 10);

  const std::vector<data::PatientRecord> prefix(dataset.target.begin(),
                                                dataset.target.begin() + 4);
  MemoryQueue prefix_queue(256);
  const auto head = mvlce::predict_online(model, prefix_queue, prefix, 3);
  REQUIRE(head.size() == 4);
  for (std::size_t i = 0; i < head.size(); ++i) {
    CHECK(predictions_equal(full[i], head[i]));
  }
  CHECK(prefix_queue.size() == 4 * 3);
  CHECK(full_queue.size() == 10 * 3);

  // Repeat runs are byte-for-byte identical.
  MemoryQueue again_queue(256);
  const auto again = mvlce::predict_online(model, again_queue, dataset.target, 3);
  for (std::size_t i = 0; i < full.size(); ++i) {
    CHECK(predictions_equal(full[i], again[i]));
  }

  MemoryQueue empty_queue(8);
  CHECK(mvlce::predict_online(model, empty_queue, {}, 3).empty());
}

TEST_CASE("offline prediction never mutates the queue") {
  const Model model = linear_model(identity_head());
  MemoryQueue queue(8);
  queue.push(mvtta::l2_normalized({1.0, 1.0}), {0.6, 0.4});
  const data::PatientRecord patient = make_patient("p", {{1.0, 2.0}});
  (void)mvlce::predict_offline(model, queue, {patient}, 1);
  CHECK(queue.size() == 1);
  CHECK(queue.entries()[0].probs == Vec{0.6, 0.4});
}
