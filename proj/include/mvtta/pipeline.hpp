#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvtta/datagen.hpp"
#include "mvtta/jsonio.hpp"
#include "mvtta/metrics.hpp"
#include "mvtta/tsd.hpp"

namespace mvtta::pipeline {

struct SourceTrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double val_fraction = 0.1;
};

// One JSON document drives every run; CLI flags override individual fields.
struct RunConfig {
  std::uint64_t seed = 7;
  data::SynthConfig synth;
  std::string data_dir;    // directory holding source_<n>.jsonl + target.jsonl
  std::string checkpoint;  // model checkpoint path for adapt/ablate runs
  std::vector<int> hidden_dims{64};
  int embed_dim = 32;
  SourceTrainConfig source_train;
  tsd::AdaptConfig adapt;
  bool use_pdc = true;
  bool use_tsd = true;
  bool use_mvlce = true;
  bool dump_queue = false;
};

// Strict parse: unknown keys anywhere raise ConfigError naming the key. The
// run seed is copied into the synthetic-data and adaptation seeds.
RunConfig parse_run_config(const json& doc);
RunConfig load_run_config(const std::string& path);

// Sets the run seed and the dependent synthetic-data and adaptation seeds.
void set_run_seed(RunConfig& config, std::uint64_t seed);

// Full echo of the effective configuration, written to every run directory.
json run_config_to_json(const RunConfig& config);

// Results of scoring one prediction set at both granularities.
struct ScoredRun {
  metrics::MetricsReport per_image;
  metrics::MetricsReport per_patient;
};

void run_gen_data(const RunConfig& config, const std::string& out_dir);

metrics::MetricsReport run_train_source(const RunConfig& config,
                                        const std::string& out_dir);

ScoredRun run_adapt_offline(const RunConfig& config,
                            const std::string& out_dir);

ScoredRun run_adapt_online(const RunConfig& config, const std::string& out_dir);

struct AblationRow {
  std::string name;
  bool use_tsd = false;
  bool use_mvlce = false;
  ScoredRun scores;
};

// The four-row component matrix {none, tsd, mvlce, tsd_mvlce}; each row runs
// the offline pipeline into out_dir/rows/<name>.
std::vector<AblationRow> run_ablate(const RunConfig& config,
                                    const std::string& out_dir);

// Re-scores a prediction CSV against the dataset it was produced from. When
// a sibling view_predictions.csv exists, per-image metrics are recomputed
// too (reports[0]); the per-patient report is always last. Writes
// metrics.json/metrics.txt into out_dir when it is non-empty.
std::vector<metrics::MetricsReport> run_evaluate(
    const std::string& predictions_csv, const std::string& dataset_jsonl,
    const std::string& out_dir);

}  // namespace mvtta::pipeline
