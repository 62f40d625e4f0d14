#include "mvtta/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <utility>

#include "mvtta/errors.hpp"
#include "mvtta/jsonio.hpp"
#include "mvtta/rng.hpp"

namespace mvtta::data {

namespace {

// How far apart class means sit in latent space, in units of the latent
// standard deviation. Chosen so classes are well separated before domain
// shift but overlap once shift and noise pile up.
constexpr double kClassSeparation = 4.0;

struct AffineMap {
  std::vector<Vec> rows;  // D x D
  Vec offset;             // D

  Vec apply(const Vec& x) const {
    Vec y(offset);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      y[r] += dot(rows[r], x);
    }
    return y;
  }
};

// Identity plus a random perturbation of magnitude `scale`. The 1/sqrt(D)
// factor keeps the perturbation's operator norm roughly independent of D.
AffineMap random_affine(int dim, double scale, Rng& rng) {
  AffineMap map;
  map.rows.assign(static_cast<std::size_t>(dim), Vec(static_cast<std::size_t>(dim), 0.0));
  const double entry_scale = scale / std::sqrt(static_cast<double>(dim));
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) {
      map.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
          (r == c ? 1.0 : 0.0) + entry_scale * rng.next_gaussian();
    }
  }
  map.offset.resize(static_cast<std::size_t>(dim));
  for (double& v : map.offset) {
    v = scale * rng.next_gaussian();
  }
  return map;
}

Vec class_mean(int cls, int classes, int dim) {
  // Standard basis vector for the class minus the centroid of all class
  // basis vectors, scaled up: a regular simplex centred at the origin.
  Vec mu(static_cast<std::size_t>(dim), 0.0);
  const double centroid = 1.0 / classes;
  for (int c = 0; c < classes; ++c) {
    mu[static_cast<std::size_t>(c)] = -centroid;
  }
  mu[static_cast<std::size_t>(cls)] += 1.0;
  for (double& v : mu) {
    v *= kClassSeparation;
  }
  return mu;
}

Vec gaussian_vec(int dim, Rng& rng) {
  Vec v(static_cast<std::size_t>(dim));
  for (double& x : v) {
    x = rng.next_gaussian();
  }
  return v;
}

int sample_class_from_mix(const Vec& mix, Rng& rng) {
  const double u = rng.next_unit();
  double cum = 0.0;
  for (std::size_t c = 0; c < mix.size(); ++c) {
    cum += mix[c];
    if (u < cum) {
      return static_cast<int>(c);
    }
  }
  return static_cast<int>(mix.size()) - 1;
}

std::string format_id(const char* fmt, int a, int b = 0) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

void append_features_json(std::ostringstream& out, const Vec& features) {
  out << "[";
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (i) out << ", ";
    out << format_double(features[i]);
  }
  out << "]";
}

json parse_line(const std::string& path, std::size_t line_no,
                const std::string& line) {
  json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw DataError(path + " line " + std::to_string(line_no) +
                    ": invalid JSON object");
  }
  return doc;
}

Vec read_features(const json& node, const std::string& path,
                  std::size_t line_no) {
  if (!node.is_array() || node.empty()) {
    throw DataError(path + " line " + std::to_string(line_no) +
                    ": features must be a non-empty array");
  }
  Vec features;
  features.reserve(node.size());
  for (const json& x : node) {
    if (!x.is_number()) {
      throw DataError(path + " line " + std::to_string(line_no) +
                      ": features must be numeric");
    }
    features.push_back(x.get<double>());
  }
  return features;
}

std::optional<int> read_label(const json& doc, const std::string& path,
                              std::size_t line_no) {
  if (!doc.contains("label") || doc.at("label").is_null()) {
    return std::nullopt;
  }
  const json& node = doc.at("label");
  if (!node.is_number_integer() || node.get<int>() < 0) {
    throw DataError(path + " line " + std::to_string(line_no) +
                    ": label must be a non-negative integer");
  }
  return node.get<int>();
}

void check_feature_dim(std::size_t got, std::size_t& expected,
                       const std::string& path, std::size_t line_no) {
  if (expected == 0) {
    expected = got;
  } else if (got != expected) {
    throw DataError(path + " line " + std::to_string(line_no) +
                    ": features length " + std::to_string(got) +
                    ", expected " + std::to_string(expected));
  }
}

}  // namespace

void validate(const SynthConfig& config) {
  if (config.input_dim < 1) {
    throw ConfigError("synth: input_dim must be >= 1");
  }
  if (config.classes < 2) {
    throw ConfigError("synth: classes must be >= 2");
  }
  if (config.classes > config.input_dim) {
    throw ConfigError("synth: classes must not exceed input_dim");
  }
  if (config.views < 1) {
    throw ConfigError("synth: views must be >= 1");
  }
  if (config.source_domains < 1) {
    throw ConfigError("synth: source_domains must be >= 1");
  }
  if (config.samples_per_domain < 1) {
    throw ConfigError("synth: samples_per_domain must be >= 1");
  }
  if (config.target_patients < 1) {
    throw ConfigError("synth: target_patients must be >= 1");
  }
  if (config.class_mix.size() != static_cast<std::size_t>(config.classes)) {
    throw ConfigError("synth: class_mix must have one entry per class");
  }
  double sum = 0.0;
  for (double p : config.class_mix) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ConfigError("synth: class_mix entries must be finite and >= 0");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("synth: class_mix must sum to 1");
  }
  if (!(config.domain_shift_scale >= 0.0) ||
      !(config.view_transform_scale >= 0.0) || !(config.noise_sigma >= 0.0)) {
    throw ConfigError("synth: scales and noise_sigma must be >= 0");
  }
}

SynthDataset generate(const SynthConfig& config) {
  validate(config);
  const int dim = config.input_dim;
  const int target_domain = config.source_domains;

  // Per-domain affine maps; index source_domains is the target domain.
  std::vector<AffineMap> domain_maps;
  for (int d = 0; d <= config.source_domains; ++d) {
    Rng rng = Rng::stream(config.seed, StreamKind::SynthDomainMap,
                          static_cast<std::uint64_t>(d));
    domain_maps.push_back(random_affine(dim, config.domain_shift_scale, rng));
  }
  std::vector<AffineMap> view_maps;
  for (int v = 1; v <= config.views; ++v) {
    Rng rng = Rng::stream(config.seed, StreamKind::SynthViewMap,
                          static_cast<std::uint64_t>(v));
    view_maps.push_back(random_affine(dim, config.view_transform_scale, rng));
  }

  SynthDataset out;
  out.sources.resize(static_cast<std::size_t>(config.source_domains));
  for (int d = 0; d < config.source_domains; ++d) {
    std::vector<ViewSample>& samples = out.sources[static_cast<std::size_t>(d)];
    samples.reserve(static_cast<std::size_t>(config.samples_per_domain));
    const std::string domain_id = "source_" + std::to_string(d);
    for (int i = 0; i < config.samples_per_domain; ++i) {
      Rng cls_rng = Rng::stream(config.seed, StreamKind::SynthClass,
                                static_cast<std::uint64_t>(d),
                                static_cast<std::uint64_t>(i));
      const int cls =
          static_cast<int>(cls_rng.next_below(static_cast<std::uint64_t>(config.classes)));
      Rng lat_rng = Rng::stream(config.seed, StreamKind::SynthLatent,
                                static_cast<std::uint64_t>(d),
                                static_cast<std::uint64_t>(i));
      Vec u = class_mean(cls, config.classes, dim);
      {
        Vec g = gaussian_vec(dim, lat_rng);
        for (int k = 0; k < dim; ++k) {
          u[static_cast<std::size_t>(k)] += g[static_cast<std::size_t>(k)];
        }
      }
      Vec x = domain_maps[static_cast<std::size_t>(d)].apply(u);
      Rng noise_rng = Rng::stream(config.seed, StreamKind::SynthNoise,
                                  static_cast<std::uint64_t>(d),
                                  static_cast<std::uint64_t>(i), 0);
      for (int k = 0; k < dim; ++k) {
        x[static_cast<std::size_t>(k)] +=
            config.noise_sigma * noise_rng.next_gaussian();
      }
      ViewSample sample;
      sample.patient_id = format_id("s%d_%05d", d, i);
      sample.view_id = 1;
      sample.domain_id = domain_id;
      sample.features = std::move(x);
      sample.label = cls;
      samples.push_back(std::move(sample));
    }
  }

  out.target.reserve(static_cast<std::size_t>(config.target_patients));
  const AffineMap& target_map =
      domain_maps[static_cast<std::size_t>(target_domain)];
  for (int i = 0; i < config.target_patients; ++i) {
    Rng cls_rng = Rng::stream(config.seed, StreamKind::SynthClass,
                              static_cast<std::uint64_t>(target_domain),
                              static_cast<std::uint64_t>(i));
    const int cls = sample_class_from_mix(config.class_mix, cls_rng);
    Rng lat_rng = Rng::stream(config.seed, StreamKind::SynthLatent,
                              static_cast<std::uint64_t>(target_domain),
                              static_cast<std::uint64_t>(i));
    Vec u = class_mean(cls, config.classes, dim);
    {
      Vec g = gaussian_vec(dim, lat_rng);
      for (int k = 0; k < dim; ++k) {
        u[static_cast<std::size_t>(k)] += g[static_cast<std::size_t>(k)];
      }
    }
    const Vec base = target_map.apply(u);

    PatientRecord record;
    record.patient_id = format_id("t%05d", i);
    record.domain_id = "target";
    record.label = cls;
    for (int v = 1; v <= config.views; ++v) {
      Vec x = view_maps[static_cast<std::size_t>(v) - 1].apply(base);
      Rng noise_rng = Rng::stream(config.seed, StreamKind::SynthNoise,
                                  static_cast<std::uint64_t>(target_domain),
                                  static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(v));
      for (int k = 0; k < dim; ++k) {
        x[static_cast<std::size_t>(k)] +=
            config.noise_sigma * noise_rng.next_gaussian();
      }
      ViewSample view;
      view.patient_id = record.patient_id;
      view.view_id = v;
      view.domain_id = record.domain_id;
      view.features = std::move(x);
      view.label = record.label;
      record.views.push_back(std::move(view));
    }
    out.target.push_back(std::move(record));
  }
  return out;
}

void save_view_samples_jsonl(const std::vector<ViewSample>& samples,
                             const std::string& path) {
  std::ostringstream out;
  for (const ViewSample& s : samples) {
    out << "{\"patient_id\": \"" << json_escape(s.patient_id)
        << "\", \"domain_id\": \"" << json_escape(s.domain_id) << "\"";
    if (s.label) {
      out << ", \"label\": " << *s.label;
    }
    out << ", \"view_id\": " << s.view_id << ", \"features\": ";
    append_features_json(out, s.features);
    out << "}\n";
  }
  write_text_file(path, out.str());
}

std::vector<ViewSample> load_view_samples_jsonl(const std::string& path) {
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  std::vector<ViewSample> samples;
  samples.reserve(lines.size());
  std::size_t feature_dim = 0;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    const json doc = parse_line(path, line_no, lines[li]);
    try {
      ViewSample s;
      s.patient_id = doc.at("patient_id").get<std::string>();
      s.domain_id = doc.at("domain_id").get<std::string>();
      s.view_id = doc.at("view_id").get<int>();
      if (s.view_id < 1) {
        throw DataError(path + " line " + std::to_string(line_no) +
                        ": view_id must be >= 1");
      }
      s.features = read_features(doc.at("features"), path, line_no);
      s.label = read_label(doc, path, line_no);
      check_feature_dim(s.features.size(), feature_dim, path, line_no);
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return samples;
}

void save_patient_records_jsonl(const std::vector<PatientRecord>& records,
                                const std::string& path) {
  std::ostringstream out;
  for (const PatientRecord& r : records) {
    std::set<int> seen_ids;
    for (const ViewSample& v : r.views) {
      if (v.patient_id != r.patient_id || v.label != r.label) {
        throw InputError("patient " + r.patient_id +
                         ": views disagree with record fields");
      }
      seen_ids.insert(v.view_id);
    }
    if (r.views.empty() || seen_ids.size() != r.views.size() ||
        *seen_ids.begin() != 1 ||
        *seen_ids.rbegin() != static_cast<int>(r.views.size())) {
      throw InputError("patient " + r.patient_id +
                       ": view ids must be distinct and cover 1..M");
    }
    out << "{\"patient_id\": \"" << json_escape(r.patient_id)
        << "\", \"domain_id\": \"" << json_escape(r.domain_id) << "\"";
    if (r.label) {
      out << ", \"label\": " << *r.label;
    }
    out << ", \"views\": [";
    for (std::size_t i = 0; i < r.views.size(); ++i) {
      if (i) out << ", ";
      out << "{\"view_id\": " << r.views[i].view_id << ", \"features\": ";
      append_features_json(out, r.views[i].features);
      out << "}";
    }
    out << "]}\n";
  }
  write_text_file(path, out.str());
}

std::vector<PatientRecord> load_patient_records_jsonl(const std::string& path) {
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  std::vector<PatientRecord> records;
  records.reserve(lines.size());
  std::size_t feature_dim = 0;
  std::size_t view_count = 0;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    const json doc = parse_line(path, line_no, lines[li]);
    try {
      PatientRecord r;
      r.patient_id = doc.at("patient_id").get<std::string>();
      r.domain_id = doc.at("domain_id").get<std::string>();
      r.label = read_label(doc, path, line_no);
      const json& views = doc.at("views");
      if (!views.is_array() || views.empty()) {
        throw DataError(path + " line " + std::to_string(line_no) +
                        ": views must be a non-empty array");
      }
      std::set<int> seen_ids;
      for (const json& jv : views) {
        ViewSample v;
        v.patient_id = r.patient_id;
        v.domain_id = r.domain_id;
        v.label = r.label;
        v.view_id = jv.at("view_id").get<int>();
        v.features = read_features(jv.at("features"), path, line_no);
        check_feature_dim(v.features.size(), feature_dim, path, line_no);
        seen_ids.insert(v.view_id);
        r.views.push_back(std::move(v));
      }
      if (seen_ids.size() != r.views.size() || *seen_ids.begin() != 1 ||
          *seen_ids.rbegin() != static_cast<int>(r.views.size())) {
        throw DataError(path + " line " + std::to_string(line_no) +
                        ": view ids must be distinct and cover 1..M");
      }
      if (view_count == 0) {
        view_count = r.views.size();
      } else if (r.views.size() != view_count) {
        throw DataError(path + " line " + std::to_string(line_no) + ": has " +
                        std::to_string(r.views.size()) + " views, expected " +
                        std::to_string(view_count));
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return records;
}

}  // namespace mvtta::data
