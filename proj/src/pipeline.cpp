#include "mvtta/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

#include "mvtta/errors.hpp"
#include "mvtta/memory_queue.hpp"
#include "mvtta/model.hpp"
#include "mvtta/mvlce.hpp"
#include "mvtta/pdc.hpp"
#include "mvtta/rng.hpp"

namespace mvtta::pipeline {

namespace {

namespace fs = std::filesystem;

std::string path_join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------------------
// Config parsing

void expect_object(const json& node, const std::string& what) {
  if (!node.is_object()) {
    throw ConfigError("config: " + what + " must be a JSON object");
  }
}

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::vector<std::string>& allowed) {
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError("config: unknown key \"" + item.key() + "\" in " +
                        section);
    }
  }
}

int get_int(const json& obj, const char* key, int fallback) {
  if (!obj.contains(key)) {
    return fallback;
  }
  const json& node = obj.at(key);
  if (!node.is_number_integer()) {
    throw ConfigError(std::string("config: ") + key + " must be an integer");
  }
  return node.get<int>();
}

double get_double(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) {
    return fallback;
  }
  const json& node = obj.at(key);
  if (!node.is_number()) {
    throw ConfigError(std::string("config: ") + key + " must be a number");
  }
  return node.get<double>();
}

bool get_bool(const json& obj, const char* key, bool fallback) {
  if (!obj.contains(key)) {
    return fallback;
  }
  const json& node = obj.at(key);
  if (!node.is_boolean()) {
    throw ConfigError(std::string("config: ") + key + " must be a boolean");
  }
  return node.get<bool>();
}

std::string get_string(const json& obj, const char* key,
                       const std::string& fallback) {
  if (!obj.contains(key)) {
    return fallback;
  }
  const json& node = obj.at(key);
  if (!node.is_string()) {
    throw ConfigError(std::string("config: ") + key + " must be a string");
  }
  return node.get<std::string>();
}

data::SynthConfig parse_synth(const json& obj) {
  expect_object(obj, "data.synth");
  reject_unknown_keys(obj, "data.synth",
                      {"input_dim", "classes", "views", "source_domains",
                       "samples_per_domain", "target_patients", "class_mix",
                       "domain_shift_scale", "view_transform_scale",
                       "noise_sigma"});
  data::SynthConfig synth;
  synth.input_dim = get_int(obj, "input_dim", synth.input_dim);
  synth.classes = get_int(obj, "classes", synth.classes);
  synth.views = get_int(obj, "views", synth.views);
  synth.source_domains = get_int(obj, "source_domains", synth.source_domains);
  synth.samples_per_domain =
      get_int(obj, "samples_per_domain", synth.samples_per_domain);
  synth.target_patients =
      get_int(obj, "target_patients", synth.target_patients);
  if (obj.contains("class_mix")) {
    const json& node = obj.at("class_mix");
    if (!node.is_array()) {
      throw ConfigError("config: class_mix must be an array of numbers");
    }
    synth.class_mix.clear();
    for (const json& x : node) {
      if (!x.is_number()) {
        throw ConfigError("config: class_mix must be an array of numbers");
      }
      synth.class_mix.push_back(x.get<double>());
    }
  } else if (obj.contains("classes") &&
             synth.classes != static_cast<int>(synth.class_mix.size())) {
    // A custom class count without an explicit mix falls back to uniform.
    synth.class_mix.assign(static_cast<std::size_t>(synth.classes),
                           1.0 / synth.classes);
  }
  synth.domain_shift_scale =
      get_double(obj, "domain_shift_scale", synth.domain_shift_scale);
  synth.view_transform_scale =
      get_double(obj, "view_transform_scale", synth.view_transform_scale);
  synth.noise_sigma = get_double(obj, "noise_sigma", synth.noise_sigma);
  return synth;
}

SourceTrainConfig parse_source_train(const json& obj) {
  expect_object(obj, "source_train");
  reject_unknown_keys(obj, "source_train",
                      {"epochs", "batch_size", "lr", "momentum",
                       "val_fraction"});
  SourceTrainConfig cfg;
  cfg.epochs = get_int(obj, "epochs", cfg.epochs);
  cfg.batch_size = get_int(obj, "batch_size", cfg.batch_size);
  cfg.lr = get_double(obj, "lr", cfg.lr);
  cfg.momentum = get_double(obj, "momentum", cfg.momentum);
  cfg.val_fraction = get_double(obj, "val_fraction", cfg.val_fraction);
  return cfg;
}

tsd::AdaptConfig parse_adapt(const json& obj) {
  expect_object(obj, "adapt");
  reject_unknown_keys(obj, "adapt",
                      {"epochs", "batch_size", "lr", "momentum", "ema_m",
                       "label_smoothing", "k_neighbors", "queue_capacity",
                       "queue_aug", "aug"});
  tsd::AdaptConfig cfg;
  cfg.epochs = get_int(obj, "epochs", cfg.epochs);
  cfg.batch_size = get_int(obj, "batch_size", cfg.batch_size);
  cfg.lr = get_double(obj, "lr", cfg.lr);
  cfg.momentum = get_double(obj, "momentum", cfg.momentum);
  cfg.ema_m = get_double(obj, "ema_m", cfg.ema_m);
  cfg.label_smoothing = get_double(obj, "label_smoothing", cfg.label_smoothing);
  cfg.k_neighbors = get_int(obj, "k_neighbors", cfg.k_neighbors);
  cfg.queue_capacity = get_int(obj, "queue_capacity", cfg.queue_capacity);
  const std::string queue_aug = get_string(obj, "queue_aug", "weak");
  if (queue_aug == "weak") {
    cfg.queue_aug = tsd::QueueAug::weak;
  } else if (queue_aug == "strong") {
    cfg.queue_aug = tsd::QueueAug::strong;
  } else {
    throw ConfigError("config: queue_aug must be \"weak\" or \"strong\"");
  }
  if (obj.contains("aug")) {
    const json& ja = obj.at("aug");
    expect_object(ja, "adapt.aug");
    reject_unknown_keys(ja, "adapt.aug",
                        {"weak_sigma", "strong_sigma", "mask_prob"});
    cfg.augment.weak_sigma = get_double(ja, "weak_sigma", cfg.augment.weak_sigma);
    cfg.augment.strong_sigma =
        get_double(ja, "strong_sigma", cfg.augment.strong_sigma);
    cfg.augment.mask_prob = get_double(ja, "mask_prob", cfg.augment.mask_prob);
  }
  return cfg;
}

void validate_source_train(const SourceTrainConfig& cfg) {
  if (cfg.epochs < 0) {
    throw ConfigError("source_train: epochs must be >= 0");
  }
  if (cfg.batch_size < 1) {
    throw ConfigError("source_train: batch_size must be >= 1");
  }
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) {
    throw ConfigError("source_train: lr must be finite and >= 0");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw ConfigError("source_train: momentum must lie in [0, 1)");
  }
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) {
    throw ConfigError("source_train: val_fraction must lie in [0, 1)");
  }
}

// ---------------------------------------------------------------------------
// CSV output

void require_csv_safe(const std::string& id) {
  if (id.find_first_of(",\"\r\n") != std::string::npos) {
    throw InputError("patient id \"" + id +
                     "\" contains CSV metacharacters");
  }
}

std::string csv_header(int classes, bool with_view) {
  std::ostringstream out;
  out << "patient_id,";
  if (with_view) {
    out << "view_id,";
  }
  out << "pred";
  for (int c = 0; c < classes; ++c) {
    out << ",prob_" << c;
  }
  out << ",label\n";
  return out.str();
}

std::string predictions_csv(const std::vector<mvlce::PatientPrediction>& preds,
                            int classes) {
  std::ostringstream out;
  out << csv_header(classes, false);
  for (const mvlce::PatientPrediction& p : preds) {
    require_csv_safe(p.patient_id);
    out << p.patient_id << "," << p.predicted_class;
    for (double prob : p.patient_probs) {
      out << "," << format_double(prob);
    }
    out << ",";
    if (p.label) {
      out << *p.label;
    }
    out << "\n";
  }
  return out.str();
}

std::string view_predictions_csv(
    const std::vector<mvlce::PatientPrediction>& preds, int classes) {
  std::ostringstream out;
  out << csv_header(classes, true);
  for (const mvlce::PatientPrediction& p : preds) {
    require_csv_safe(p.patient_id);
    for (std::size_t v = 0; v < p.view_probs.size(); ++v) {
      out << p.patient_id << "," << p.view_ids[v] << ","
          << p.view_predictions[v];
      for (double prob : p.view_probs[v]) {
        out << "," << format_double(prob);
      }
      out << ",";
      if (p.label) {
        out << *p.label;
      }
      out << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Scoring

ScoredRun score_predictions(const std::vector<mvlce::PatientPrediction>& preds,
                            int classes) {
  std::vector<int> p_pred;
  std::vector<Vec> p_probs;
  std::vector<int> p_label;
  std::vector<int> v_pred;
  std::vector<Vec> v_probs;
  std::vector<int> v_label;
  for (const mvlce::PatientPrediction& p : preds) {
    if (!p.label) {
      continue;
    }
    p_pred.push_back(p.predicted_class);
    p_probs.push_back(p.patient_probs);
    p_label.push_back(*p.label);
    for (std::size_t v = 0; v < p.view_probs.size(); ++v) {
      v_pred.push_back(p.view_predictions[v]);
      v_probs.push_back(p.view_probs[v]);
      v_label.push_back(*p.label);
    }
  }
  if (p_pred.empty()) {
    throw MetricError("no labeled predictions to score");
  }
  ScoredRun out;
  out.per_image = metrics::compute("per_image", v_pred, v_probs, v_label, classes);
  out.per_patient =
      metrics::compute("per_patient", p_pred, p_probs, p_label, classes);
  return out;
}

json scored_to_json(const ScoredRun& scored) {
  return json{{"per_image", metrics::to_json(scored.per_image)},
              {"per_patient", metrics::to_json(scored.per_patient)}};
}

void write_scored(const ScoredRun& scored, const std::string& out_dir) {
  write_json_file(path_join(out_dir, "metrics.json"), scored_to_json(scored));
  write_text_file(path_join(out_dir, "metrics.txt"),
                  metrics::format_table({scored.per_image, scored.per_patient}));
}

// ---------------------------------------------------------------------------
// Data loading helpers

std::vector<std::pair<int, std::string>> find_source_files(
    const std::string& data_dir) {
  if (data_dir.empty()) {
    throw ConfigError("data directory not set (flag --data or config data.dir)");
  }
  if (!fs::is_directory(data_dir)) {
    throw InputError("data directory does not exist: " + data_dir);
  }
  std::vector<std::pair<int, std::string>> files;
  for (const fs::directory_entry& entry : fs::directory_iterator(data_dir)) {
    const std::string name = entry.path().filename().string();
    constexpr const char* prefix = "source_";
    constexpr const char* suffix = ".jsonl";
    if (name.size() <= 7 + 6 || name.rfind(prefix, 0) != 0 ||
        name.substr(name.size() - 6) != suffix) {
      continue;
    }
    const std::string digits = name.substr(7, name.size() - 7 - 6);
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos) {
      continue;
    }
    files.emplace_back(std::atoi(digits.c_str()), entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw InputError("no source_<n>.jsonl files found in " + data_dir);
  }
  return files;
}

std::vector<data::PatientRecord> load_target(const std::string& data_dir) {
  if (data_dir.empty()) {
    throw ConfigError("data directory not set (flag --data or config data.dir)");
  }
  return data::load_patient_records_jsonl(path_join(data_dir, "target.jsonl"));
}

std::vector<data::ViewSample> flatten_views(
    const std::vector<data::PatientRecord>& patients) {
  std::vector<data::ViewSample> views;
  for (const data::PatientRecord& p : patients) {
    views.insert(views.end(), p.views.begin(), p.views.end());
  }
  return views;
}

std::string loss_trace_header() { return "epoch,step,ce,div,total\n"; }

// ---------------------------------------------------------------------------
// Prediction CSV parsing (for evaluate)

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

int parse_csv_int(const std::string& cell, const std::string& path,
                  std::size_t line_no) {
  char* end = nullptr;
  const long value = std::strtol(cell.c_str(), &end, 10);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw DataError(path + " line " + std::to_string(line_no) +
                    ": expected integer, got \"" + cell + "\"");
  }
  return static_cast<int>(value);
}

double parse_csv_double(const std::string& cell, const std::string& path,
                        std::size_t line_no) {
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size() ||
      !std::isfinite(value)) {
    throw DataError(path + " line " + std::to_string(line_no) +
                    ": expected finite number, got \"" + cell + "\"");
  }
  return value;
}

struct PredRow {
  std::string patient_id;
  int view_id = 0;  // only in view files
  int pred = 0;
  Vec probs;
  std::optional<int> label;
};

struct PredFile {
  int classes = 0;
  std::vector<PredRow> rows;
};

PredFile parse_prediction_csv(const std::string& path, bool with_view) {
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  if (lines.empty()) {
    throw DataError(path + ": missing CSV header");
  }
  const std::vector<std::string> header = split_csv(lines[0]);
  const std::size_t fixed = with_view ? 3 : 2;  // id [view] pred
  if (header.size() < fixed + 2 || header[0] != "patient_id" ||
      (with_view && header[1] != "view_id") ||
      header[fixed - 1] != "pred" || header.back() != "label") {
    throw DataError(path + ": unrecognized prediction CSV header");
  }
  const int classes = static_cast<int>(header.size() - fixed - 1);
  for (int c = 0; c < classes; ++c) {
    if (header[fixed + static_cast<std::size_t>(c)] !=
        "prob_" + std::to_string(c)) {
      throw DataError(path + ": unrecognized prediction CSV header");
    }
  }

  PredFile out;
  out.classes = classes;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    const std::vector<std::string> cells = split_csv(lines[li]);
    if (cells.size() != header.size()) {
      throw DataError(path + " line " + std::to_string(line_no) + ": has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    PredRow row;
    row.patient_id = cells[0];
    if (with_view) {
      row.view_id = parse_csv_int(cells[1], path, line_no);
    }
    row.pred = parse_csv_int(cells[fixed - 1], path, line_no);
    if (row.pred < 0 || row.pred >= classes) {
      throw DataError(path + " line " + std::to_string(line_no) +
                      ": predicted class out of range");
    }
    for (int c = 0; c < classes; ++c) {
      row.probs.push_back(
          parse_csv_double(cells[fixed + static_cast<std::size_t>(c)], path,
                           line_no));
    }
    if (!cells.back().empty()) {
      row.label = parse_csv_int(cells.back(), path, line_no);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig parse_run_config(const json& doc) {
  expect_object(doc, "document root");
  reject_unknown_keys(doc, "document root",
                      {"seed", "data", "model", "source_train", "adapt",
                       "checkpoint", "use_pdc", "use_tsd", "use_mvlce",
                       "dump_queue"});
  RunConfig config;
  if (doc.contains("seed")) {
    const json& node = doc.at("seed");
    if (!node.is_number_unsigned() && !node.is_number_integer()) {
      throw ConfigError("config: seed must be a non-negative integer");
    }
    if (node.is_number_integer() && node.get<std::int64_t>() < 0) {
      throw ConfigError("config: seed must be a non-negative integer");
    }
    config.seed = node.get<std::uint64_t>();
  }
  if (doc.contains("data")) {
    const json& jd = doc.at("data");
    expect_object(jd, "data");
    reject_unknown_keys(jd, "data", {"dir", "synth"});
    config.data_dir = get_string(jd, "dir", "");
    if (jd.contains("synth")) {
      config.synth = parse_synth(jd.at("synth"));
    }
  }
  if (doc.contains("model")) {
    const json& jm = doc.at("model");
    expect_object(jm, "model");
    reject_unknown_keys(jm, "model", {"hidden_dims", "embed_dim"});
    if (jm.contains("hidden_dims")) {
      const json& node = jm.at("hidden_dims");
      if (!node.is_array()) {
        throw ConfigError("config: hidden_dims must be an array of integers");
      }
      config.hidden_dims.clear();
      for (const json& x : node) {
        if (!x.is_number_integer()) {
          throw ConfigError(
              "config: hidden_dims must be an array of integers");
        }
        config.hidden_dims.push_back(x.get<int>());
      }
    }
    config.embed_dim = get_int(jm, "embed_dim", config.embed_dim);
  }
  if (doc.contains("source_train")) {
    config.source_train = parse_source_train(doc.at("source_train"));
  }
  if (doc.contains("adapt")) {
    config.adapt = parse_adapt(doc.at("adapt"));
  }
  config.checkpoint = get_string(doc, "checkpoint", "");
  config.use_pdc = get_bool(doc, "use_pdc", true);
  config.use_tsd = get_bool(doc, "use_tsd", true);
  config.use_mvlce = get_bool(doc, "use_mvlce", true);
  config.dump_queue = get_bool(doc, "dump_queue", false);
  set_run_seed(config, config.seed);
  return config;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(parse_json_file(path));
}

void set_run_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.synth.seed = seed;
  config.adapt.seed = seed;
}

json run_config_to_json(const RunConfig& config) {
  json synth{{"input_dim", config.synth.input_dim},
             {"classes", config.synth.classes},
             {"views", config.synth.views},
             {"source_domains", config.synth.source_domains},
             {"samples_per_domain", config.synth.samples_per_domain},
             {"target_patients", config.synth.target_patients},
             {"class_mix", config.synth.class_mix},
             {"domain_shift_scale", config.synth.domain_shift_scale},
             {"view_transform_scale", config.synth.view_transform_scale},
             {"noise_sigma", config.synth.noise_sigma}};
  json data{{"synth", synth}};
  if (!config.data_dir.empty()) {
    data["dir"] = config.data_dir;
  }
  json doc{
      {"seed", config.seed},
      {"data", data},
      {"model",
       {{"hidden_dims", config.hidden_dims}, {"embed_dim", config.embed_dim}}},
      {"source_train",
       {{"epochs", config.source_train.epochs},
        {"batch_size", config.source_train.batch_size},
        {"lr", config.source_train.lr},
        {"momentum", config.source_train.momentum},
        {"val_fraction", config.source_train.val_fraction}}},
      {"adapt",
       {{"epochs", config.adapt.epochs},
        {"batch_size", config.adapt.batch_size},
        {"lr", config.adapt.lr},
        {"momentum", config.adapt.momentum},
        {"ema_m", config.adapt.ema_m},
        {"label_smoothing", config.adapt.label_smoothing},
        {"k_neighbors", config.adapt.k_neighbors},
        {"queue_capacity", config.adapt.queue_capacity},
        {"queue_aug",
         config.adapt.queue_aug == tsd::QueueAug::weak ? "weak" : "strong"},
        {"aug",
         {{"weak_sigma", config.adapt.augment.weak_sigma},
          {"strong_sigma", config.adapt.augment.strong_sigma},
          {"mask_prob", config.adapt.augment.mask_prob}}}}},
      {"use_pdc", config.use_pdc},
      {"use_tsd", config.use_tsd},
      {"use_mvlce", config.use_mvlce},
      {"dump_queue", config.dump_queue}};
  if (!config.checkpoint.empty()) {
    doc["checkpoint"] = config.checkpoint;
  }
  return doc;
}

// ---------------------------------------------------------------------------
// gen-data

void run_gen_data(const RunConfig& config, const std::string& out_dir) {
  const data::SynthDataset dataset = data::generate(config.synth);
  for (std::size_t d = 0; d < dataset.sources.size(); ++d) {
    data::save_view_samples_jsonl(
        dataset.sources[d],
        path_join(out_dir, "source_" + std::to_string(d) + ".jsonl"));
  }
  data::save_patient_records_jsonl(dataset.target,
                                   path_join(out_dir, "target.jsonl"));
  write_json_file(path_join(out_dir, "config.json"),
                  run_config_to_json(config));
}

// ---------------------------------------------------------------------------
// train-source

metrics::MetricsReport run_train_source(const RunConfig& config,
                                        const std::string& out_dir) {
  validate_source_train(config.source_train);
  const SourceTrainConfig& train = config.source_train;

  std::vector<data::ViewSample> pooled;
  for (const auto& [index, path] : find_source_files(config.data_dir)) {
    std::vector<data::ViewSample> samples = data::load_view_samples_jsonl(path);
    if (!pooled.empty() && !samples.empty() &&
        samples[0].features.size() != pooled[0].features.size()) {
      throw DataError(path + ": feature dimension differs from other domains");
    }
    pooled.insert(pooled.end(), std::make_move_iterator(samples.begin()),
                  std::make_move_iterator(samples.end()));
  }
  if (pooled.empty()) {
    throw DataError("source datasets are empty");
  }
  int classes = 0;
  for (const data::ViewSample& s : pooled) {
    if (!s.label) {
      throw DataError("unlabeled source sample " + s.patient_id);
    }
    classes = std::max(classes, *s.label + 1);
  }
  if (classes < 2) {
    throw DataError("source data contains fewer than 2 classes");
  }

  Architecture arch;
  arch.input_dim = static_cast<int>(pooled[0].features.size());
  arch.hidden_dims = config.hidden_dims;
  arch.embed_dim = config.embed_dim;
  arch.classes = classes;
  Model model = Model::random_init(arch, config.seed);

  // Held-out split for the in-domain report.
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  {
    Rng rng = Rng::stream(config.seed, StreamKind::ValSplit);
    rng.shuffle(order);
  }
  std::size_t val_count = static_cast<std::size_t>(
      std::llround(train.val_fraction * static_cast<double>(pooled.size())));
  val_count = std::min(val_count, pooled.size() - 1);
  const std::vector<std::size_t> val_idx(order.begin(),
                                         order.begin() + static_cast<std::ptrdiff_t>(val_count));
  const std::vector<std::size_t> train_idx(
      order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());

  const tsd::LossTerms terms{true, false};
  SgdState sgd;
  std::ostringstream trace;
  trace << loss_trace_header();
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    std::vector<std::size_t> epoch_order = train_idx;
    Rng rng = Rng::stream(config.seed, StreamKind::SourceShuffle,
                          static_cast<std::uint64_t>(epoch));
    rng.shuffle(epoch_order);
    const std::size_t bs = static_cast<std::size_t>(train.batch_size);
    for (std::size_t start = 0; start < epoch_order.size(); start += bs) {
      const std::size_t end = std::min(start + bs, epoch_order.size());
      const int step = static_cast<int>(start / bs) + 1;
      std::vector<Vec> inputs;
      std::vector<tsd::SmoothedLabel> targets;
      for (std::size_t i = start; i < end; ++i) {
        const data::ViewSample& s = pooled[epoch_order[i]];
        inputs.push_back(s.features);
        targets.push_back(tsd::smooth_label(*s.label, classes, 0.0));
      }
      const tsd::BatchEval eval = tsd::evaluate_batch(model, inputs, targets, terms);
      if (!std::isfinite(eval.loss.total)) {
        throw NumericError("train-source: epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) +
                           ": non-finite loss");
      }
      sgd_step(model, eval.grad, train.lr, sgd, train.momentum);
      trace << epoch << "," << step << "," << format_double(eval.loss.ce)
            << "," << format_double(eval.loss.div) << ","
            << format_double(eval.loss.total) << "\n";
    }
  }

  // In-domain validation (falls back to the training set when the held-out
  // split is empty).
  const std::vector<std::size_t>& eval_idx =
      val_idx.empty() ? train_idx : val_idx;
  std::vector<int> preds;
  std::vector<Vec> probs;
  std::vector<int> labels;
  for (std::size_t i : eval_idx) {
    const data::ViewSample& s = pooled[i];
    Vec p = model.predict_proba(s.features);
    preds.push_back(argmax_lowest(p));
    probs.push_back(std::move(p));
    labels.push_back(*s.label);
  }
  const metrics::MetricsReport report =
      metrics::compute("per_image", preds, probs, labels, classes);

  write_json_file(path_join(out_dir, "config.json"),
                  run_config_to_json(config));
  save_checkpoint(model, path_join(out_dir, "checkpoint.json"));
  write_text_file(path_join(out_dir, "loss_trace.csv"), trace.str());
  write_json_file(path_join(out_dir, "metrics.json"),
                  json{{"per_image", metrics::to_json(report)}});
  write_text_file(path_join(out_dir, "metrics.txt"),
                  metrics::format_table({report}));
  return report;
}

// ---------------------------------------------------------------------------
// adapt (offline)

ScoredRun run_adapt_offline(const RunConfig& config,
                            const std::string& out_dir) {
  if (config.checkpoint.empty()) {
    throw ConfigError("checkpoint not set (flag --checkpoint or config key)");
  }
  tsd::validate(config.adapt);
  Model model = load_checkpoint(config.checkpoint);
  const int classes = model.arch().classes;

  const std::vector<data::PatientRecord> target = load_target(config.data_dir);
  if (target.empty()) {
    throw DataError("target dataset is empty: " +
                    path_join(config.data_dir, "target.jsonl"));
  }
  const std::vector<data::ViewSample> all_views = flatten_views(target);
  if (all_views[0].features.size() !=
      static_cast<std::size_t>(model.arch().input_dim)) {
    throw DataError("target feature dimension " +
                    std::to_string(all_views[0].features.size()) +
                    " does not match checkpoint input dimension " +
                    std::to_string(model.arch().input_dim));
  }

  write_json_file(path_join(out_dir, "config.json"),
                  run_config_to_json(config));

  // Pseudo-label the full target pool with the source model; optionally
  // balance it by undersampling before adaptation.
  pdc::PseudoLabeledSet calibrated = pdc::pseudo_label(model, all_views);
  if (config.use_pdc) {
    const std::vector<int> input_counts = calibrated.class_counts();
    Rng rng = Rng::stream(config.seed, StreamKind::Undersample);
    calibrated = pdc::balanced_undersample(calibrated, rng);
    json kept = json::array();
    for (const pdc::PseudoLabeledItem& item : calibrated.items) {
      kept.push_back(json{{"patient_id", item.sample.patient_id},
                          {"view_id", item.sample.view_id},
                          {"pseudo_label", item.pseudo_label}});
    }
    write_json_file(path_join(out_dir, "pdc_audit.json"),
                    json{{"classes", classes},
                         {"input_counts", input_counts},
                         {"kept_counts", calibrated.class_counts()},
                         {"kept", kept}});
  }

  MomentumModel momentum(model);
  MemoryQueue queue(static_cast<std::size_t>(config.adapt.queue_capacity));

  // The queue feeds self-distillation batches and neighbour refinement at
  // inference; fill it from the full target pool only when something reads it.
  if (config.use_tsd || config.use_mvlce) {
    tsd::warm_up_queue(momentum, all_views, config.adapt.augment, config.seed,
                       queue);
  }

  std::ostringstream trace;
  trace << loss_trace_header();
  if (config.use_tsd) {
    SgdState sgd;
    const tsd::AdaptObserver observer = [&trace](const tsd::BatchTrace& batch) {
      trace << batch.epoch << "," << batch.step << ","
            << format_double(batch.loss.ce) << ","
            << format_double(batch.loss.div) << ","
            << format_double(batch.loss.total) << "\n";
    };
    for (int epoch = 1; epoch <= config.adapt.epochs; ++epoch) {
      tsd::adapt_epoch(model, momentum, queue, calibrated, config.adapt, epoch,
                       sgd, observer);
    }
  }
  write_text_file(path_join(out_dir, "loss_trace.csv"), trace.str());
  save_checkpoint(model, path_join(out_dir, "checkpoint.json"));
  save_checkpoint(momentum.model(),
                  path_join(out_dir, "momentum_checkpoint.json"));

  const std::vector<mvlce::PatientPrediction> preds =
      config.use_mvlce
          ? mvlce::predict_offline(momentum.model(), queue, target,
                                   config.adapt.k_neighbors)
          : mvlce::predict_raw(momentum.model(), target);

  write_text_file(path_join(out_dir, "predictions.csv"),
                  predictions_csv(preds, classes));
  write_text_file(path_join(out_dir, "view_predictions.csv"),
                  view_predictions_csv(preds, classes));
  if (config.dump_queue) {
    write_text_file(path_join(out_dir, "queue.json"), queue_to_json(queue));
  }

  const ScoredRun scored = score_predictions(preds, classes);
  write_scored(scored, out_dir);
  return scored;
}

// ---------------------------------------------------------------------------
// adapt-online

ScoredRun run_adapt_online(const RunConfig& config,
                           const std::string& out_dir) {
  if (config.checkpoint.empty()) {
    throw ConfigError("checkpoint not set (flag --checkpoint or config key)");
  }
  tsd::validate(config.adapt);
  const Model model = load_checkpoint(config.checkpoint);
  const int classes = model.arch().classes;
  const std::vector<data::PatientRecord> target = load_target(config.data_dir);

  write_json_file(path_join(out_dir, "config.json"),
                  run_config_to_json(config));

  MemoryQueue queue(static_cast<std::size_t>(config.adapt.queue_capacity));
  const std::vector<mvlce::PatientPrediction> preds =
      mvlce::predict_online(model, queue, target, config.adapt.k_neighbors);

  write_text_file(path_join(out_dir, "predictions.csv"),
                  predictions_csv(preds, classes));
  write_text_file(path_join(out_dir, "view_predictions.csv"),
                  view_predictions_csv(preds, classes));
  if (config.dump_queue) {
    write_text_file(path_join(out_dir, "queue.json"), queue_to_json(queue));
  }
  if (preds.empty()) {
    throw MetricError("no patients in target stream; nothing to score");
  }
  const ScoredRun scored = score_predictions(preds, classes);
  write_scored(scored, out_dir);
  return scored;
}

// ---------------------------------------------------------------------------
// ablate

std::vector<AblationRow> run_ablate(const RunConfig& config,
                                    const std::string& out_dir) {
  write_json_file(path_join(out_dir, "config.json"),
                  run_config_to_json(config));
  std::vector<AblationRow> rows;
  rows.push_back({"none", false, false, {}});
  rows.push_back({"tsd", true, false, {}});
  rows.push_back({"mvlce", false, true, {}});
  rows.push_back({"tsd_mvlce", true, true, {}});
  for (AblationRow& row : rows) {
    RunConfig row_config = config;
    row_config.use_tsd = row.use_tsd;
    row_config.use_mvlce = row.use_mvlce;
    row.scores = run_adapt_offline(row_config,
                                   path_join(out_dir, path_join("rows", row.name)));
  }

  json jrows = json::array();
  for (const AblationRow& row : rows) {
    jrows.push_back(json{{"name", row.name},
                         {"use_pdc", config.use_pdc},
                         {"use_tsd", row.use_tsd},
                         {"use_mvlce", row.use_mvlce},
                         {"per_image", metrics::to_json(row.scores.per_image)},
                         {"per_patient",
                          metrics::to_json(row.scores.per_patient)}});
  }
  write_json_file(path_join(out_dir, "ablation.json"), json{{"rows", jrows}});

  std::ostringstream table;
  const auto granularity_table =
      [&rows](metrics::MetricsReport ScoredRun::*field) {
        std::vector<metrics::MetricsReport> reports;
        for (const AblationRow& row : rows) {
          metrics::MetricsReport r = row.scores.*field;
          r.granularity = row.name;
          reports.push_back(std::move(r));
        }
        return metrics::format_table(reports);
      };
  table << "per_patient\n" << granularity_table(&ScoredRun::per_patient)
        << "\nper_image\n" << granularity_table(&ScoredRun::per_image);
  write_text_file(path_join(out_dir, "ablation.txt"), table.str());
  return rows;
}

// ---------------------------------------------------------------------------
// evaluate

std::vector<metrics::MetricsReport> run_evaluate(
    const std::string& predictions_csv_path, const std::string& dataset_jsonl,
    const std::string& out_dir) {
  const std::vector<data::PatientRecord> records =
      data::load_patient_records_jsonl(dataset_jsonl);
  std::map<std::string, const data::PatientRecord*> by_id;
  for (const data::PatientRecord& r : records) {
    if (!by_id.emplace(r.patient_id, &r).second) {
      throw DataError(dataset_jsonl + ": duplicate patient id " + r.patient_id);
    }
  }

  const PredFile pred_file = parse_prediction_csv(predictions_csv_path, false);
  const int classes = pred_file.classes;

  std::vector<std::string> unknown;
  std::set<std::string> seen;
  for (const PredRow& row : pred_file.rows) {
    if (by_id.find(row.patient_id) == by_id.end()) {
      unknown.push_back(row.patient_id);
    }
    if (!seen.insert(row.patient_id).second) {
      throw DataError(predictions_csv_path + ": duplicate prediction for " +
                      row.patient_id);
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (std::size_t i = 0; i < unknown.size() && i < 10; ++i) {
      list += (i ? ", " : "") + unknown[i];
    }
    if (unknown.size() > 10) {
      list += ", ...";
    }
    throw DataError(predictions_csv_path +
                    ": predictions reference unknown patient ids: " + list);
  }

  std::vector<int> preds;
  std::vector<Vec> probs;
  std::vector<int> labels;
  for (const PredRow& row : pred_file.rows) {
    const data::PatientRecord& record = *by_id.at(row.patient_id);
    if (!record.label) {
      continue;
    }
    if (*record.label >= classes) {
      throw DataError(dataset_jsonl + ": label " +
                      std::to_string(*record.label) + " for patient " +
                      row.patient_id + " exceeds prediction class count");
    }
    if (row.label && *row.label != *record.label) {
      throw DataError(predictions_csv_path + ": echoed label for " +
                      row.patient_id + " disagrees with the dataset");
    }
    preds.push_back(row.pred);
    probs.push_back(row.probs);
    labels.push_back(*record.label);
  }
  if (preds.empty()) {
    throw MetricError("no overlap between predictions and labeled records");
  }

  std::vector<metrics::MetricsReport> reports;

  // Per-image metrics come from the sibling per-view file when present.
  const fs::path sibling =
      fs::path(predictions_csv_path).parent_path() / "view_predictions.csv";
  if (fs::exists(sibling)) {
    const PredFile views = parse_prediction_csv(sibling.string(), true);
    if (views.classes != classes) {
      throw DataError(sibling.string() +
                      ": class count differs from predictions.csv");
    }
    std::vector<int> v_preds;
    std::vector<Vec> v_probs;
    std::vector<int> v_labels;
    for (const PredRow& row : views.rows) {
      const auto it = by_id.find(row.patient_id);
      if (it == by_id.end()) {
        throw DataError(sibling.string() +
                        ": predictions reference unknown patient ids: " +
                        row.patient_id);
      }
      const data::PatientRecord& record = *it->second;
      const bool known_view =
          std::any_of(record.views.begin(), record.views.end(),
                      [&row](const data::ViewSample& v) {
                        return v.view_id == row.view_id;
                      });
      if (!known_view) {
        throw DataError(sibling.string() + ": patient " + row.patient_id +
                        " has no view " + std::to_string(row.view_id));
      }
      if (!record.label) {
        continue;
      }
      v_preds.push_back(row.pred);
      v_probs.push_back(row.probs);
      v_labels.push_back(*record.label);
    }
    if (!v_preds.empty()) {
      reports.push_back(
          metrics::compute("per_image", v_preds, v_probs, v_labels, classes));
    }
  }

  reports.push_back(
      metrics::compute("per_patient", preds, probs, labels, classes));

  if (!out_dir.empty()) {
    json doc;
    for (const metrics::MetricsReport& r : reports) {
      doc[r.granularity] = metrics::to_json(r);
    }
    write_json_file(path_join(out_dir, "metrics.json"), doc);
    write_text_file(path_join(out_dir, "metrics.txt"),
                    metrics::format_table(reports));
  }
  return reports;
}

}  // namespace mvtta::pipeline
