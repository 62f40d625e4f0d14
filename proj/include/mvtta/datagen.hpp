#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvtta/vecmath.hpp"

namespace mvtta::data {

// One feature vector for one view of one patient (or one single-view source
// sample).
struct ViewSample {
  std::string patient_id;
  int view_id = 1;
  std::string domain_id;
  Vec features;
  std::optional<int> label;

  bool operator==(const ViewSample&) const = default;
};

// A target patient with all of its views. Views share the record's
// patient_id, domain_id, and label; their view_ids are distinct and cover
// 1..M.
struct PatientRecord {
  std::string patient_id;
  std::string domain_id;
  std::optional<int> label;
  std::vector<ViewSample> views;

  bool operator==(const PatientRecord&) const = default;
};

struct SynthConfig {
  int input_dim = 16;
  int classes = 3;
  int views = 4;
  int source_domains = 3;
  int samples_per_domain = 2000;
  int target_patients = 500;
  Vec class_mix{0.5, 0.3, 0.2};
  double domain_shift_scale = 1.0;
  double view_transform_scale = 0.5;
  double noise_sigma = 0.6;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& config);

struct SynthDataset {
  // One labeled single-view sample list per source domain.
  std::vector<std::vector<ViewSample>> sources;
  // Multi-view target patients; labels retained for evaluation only.
  std::vector<PatientRecord> target;
};

// Seeded synthetic benchmark: class means sit on a spread simplex in latent
// space, each domain applies its own random affine map, each target view a
// further mild affine map, and gaussian noise is added on top. Deterministic
// for a fixed config.
SynthDataset generate(const SynthConfig& config);

void save_view_samples_jsonl(const std::vector<ViewSample>& samples,
                             const std::string& path);
std::vector<ViewSample> load_view_samples_jsonl(const std::string& path);

void save_patient_records_jsonl(const std::vector<PatientRecord>& records,
                                const std::string& path);
std::vector<PatientRecord> load_patient_records_jsonl(const std::string& path);

}  // namespace mvtta::data
