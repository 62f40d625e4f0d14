#include "mvtta/model.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "mvtta/errors.hpp"
#include "mvtta/jsonio.hpp"
#include "mvtta/rng.hpp"

namespace mvtta {

namespace {

// y = W x + b for a row-major W.
Vec affine(const Matrix& w, const Vec& b, const Vec& x) {
  Vec y(static_cast<std::size_t>(w.rows));
  for (int r = 0; r < w.rows; ++r) {
    double sum = b[static_cast<std::size_t>(r)];
    const double* row = &w.data[static_cast<std::size_t>(r) * w.cols];
    for (int c = 0; c < w.cols; ++c) {
      sum += row[c] * x[static_cast<std::size_t>(c)];
    }
    y[static_cast<std::size_t>(r)] = sum;
  }
  return y;
}

Vec relu(const Vec& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] > 0.0 ? v[i] : 0.0;
  }
  return out;
}

void validate_architecture(const Architecture& arch) {
  if (arch.input_dim < 1) {
    throw ConfigError("model: input_dim must be >= 1");
  }
  if (arch.embed_dim < 1) {
    throw ConfigError("model: embed_dim must be >= 1");
  }
  if (arch.classes < 2) {
    throw ConfigError("model: classes must be >= 2");
  }
  for (int h : arch.hidden_dims) {
    if (h < 1) {
      throw ConfigError("model: hidden layer sizes must be >= 1");
    }
  }
}

}  // namespace

bool Params::same_shape(const Params& other) const {
  if (layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows != other.layers[i].weight.rows ||
        layers[i].weight.cols != other.layers[i].weight.cols ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

bool Params::is_finite() const {
  for (const LayerParams& layer : layers) {
    if (!all_finite(layer.weight.data) || !all_finite(layer.bias)) {
      return false;
    }
  }
  return true;
}

Params Params::zeros_like(const Params& ref) {
  Params out;
  out.layers.reserve(ref.layers.size());
  for (const LayerParams& layer : ref.layers) {
    LayerParams z;
    z.weight = Matrix(layer.weight.rows, layer.weight.cols);
    z.bias.assign(layer.bias.size(), 0.0);
    out.layers.push_back(std::move(z));
  }
  return out;
}

std::vector<int> Architecture::encoder_dims() const {
  std::vector<int> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(embed_dim);
  return dims;
}

Model::Model(Architecture arch, Params params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  validate_architecture(arch_);
  const std::vector<int> enc = arch_.encoder_dims();
  const std::size_t expected = enc.size();  // encoder layers + head
  if (params_.layers.size() != expected) {
    throw ConfigError("model: expected " + std::to_string(expected) +
                      " layers, got " + std::to_string(params_.layers.size()));
  }
  for (std::size_t i = 0; i + 1 < enc.size(); ++i) {
    const LayerParams& layer = params_.layers[i];
    if (layer.weight.rows != enc[i + 1] || layer.weight.cols != enc[i] ||
        layer.bias.size() != static_cast<std::size_t>(enc[i + 1])) {
      throw ConfigError("model: encoder layer " + std::to_string(i) +
                        " has wrong shape");
    }
  }
  const LayerParams& head = params_.layers.back();
  if (head.weight.rows != arch_.classes || head.weight.cols != arch_.embed_dim ||
      head.bias.size() != static_cast<std::size_t>(arch_.classes)) {
    throw ConfigError("model: head layer has wrong shape");
  }
  if (!params_.is_finite()) {
    throw NumericError("model: non-finite parameters");
  }
}

Model Model::random_init(const Architecture& arch, std::uint64_t seed) {
  validate_architecture(arch);
  const std::vector<int> enc = arch.encoder_dims();
  Params params;
  const int n_layers = arch.layer_count();
  for (int li = 0; li < n_layers; ++li) {
    int fan_in;
    int fan_out;
    bool relu_follows;
    if (li < arch.encoder_layer_count()) {
      fan_in = enc[static_cast<std::size_t>(li)];
      fan_out = enc[static_cast<std::size_t>(li) + 1];
      // ReLU is applied after every encoder layer except the last one.
      relu_follows = li + 1 < arch.encoder_layer_count();
    } else {
      fan_in = arch.embed_dim;
      fan_out = arch.classes;
      relu_follows = false;
    }
    const double scale =
        relu_follows ? std::sqrt(2.0 / fan_in) : std::sqrt(1.0 / fan_in);
    Rng rng = Rng::stream(seed, StreamKind::WeightInit,
                          static_cast<std::uint64_t>(li));
    LayerParams layer;
    layer.weight = Matrix(fan_out, fan_in);
    for (double& w : layer.weight.data) {
      w = scale * rng.next_gaussian();
    }
    layer.bias.assign(static_cast<std::size_t>(fan_out), 0.0);
    params.layers.push_back(std::move(layer));
  }
  return Model(arch, std::move(params));
}

ForwardTrace Model::forward(const Vec& input) const {
  if (input.size() != static_cast<std::size_t>(arch_.input_dim)) {
    throw InputError("model: input has " + std::to_string(input.size()) +
                     " features, expected " + std::to_string(arch_.input_dim));
  }
  if (!all_finite(input)) {
    throw NumericError("model: non-finite input");
  }
  ForwardTrace trace;
  trace.input = input;
  const int enc_layers = arch_.encoder_layer_count();
  Vec x = input;
  for (int li = 0; li < enc_layers; ++li) {
    const LayerParams& layer = params_.layers[static_cast<std::size_t>(li)];
    Vec pre = affine(layer.weight, layer.bias, x);
    Vec post = (li + 1 < enc_layers) ? relu(pre) : pre;
    trace.pre.push_back(pre);
    trace.post.push_back(post);
    x = std::move(post);
  }
  trace.embedding = x;
  const LayerParams& head = params_.layers.back();
  Vec logit_values = affine(head.weight, head.bias, x);
  trace.pre.push_back(logit_values);
  trace.post.push_back(logit_values);
  trace.logit_values = std::move(logit_values);
  return trace;
}

Vec Model::embed(const Vec& input) const { return forward(input).embedding; }

Vec Model::logits(const Vec& input) const { return forward(input).logit_values; }

Vec Model::logits_from_embedding(const Vec& embedding) const {
  if (embedding.size() != static_cast<std::size_t>(arch_.embed_dim)) {
    throw InputError("model: embedding has wrong dimension");
  }
  const LayerParams& head = params_.layers.back();
  return affine(head.weight, head.bias, embedding);
}

Vec Model::predict_proba(const Vec& input) const {
  return stable_softmax(logits(input));
}

Params backprop_logit_grads(const Model& model,
                            const std::vector<ForwardTrace>& traces,
                            const std::vector<Vec>& logit_grads) {
  if (traces.size() != logit_grads.size()) {
    throw InputError("backprop: traces and logit_grads differ in length");
  }
  const Architecture& arch = model.arch();
  const Params& params = model.params();
  Params grad = Params::zeros_like(params);
  const int enc_layers = arch.encoder_layer_count();

  for (std::size_t s = 0; s < traces.size(); ++s) {
    const ForwardTrace& tr = traces[s];
    const Vec& g_logits = logit_grads[s];
    if (g_logits.size() != static_cast<std::size_t>(arch.classes)) {
      throw InputError("backprop: logit gradient has wrong dimension");
    }

    // Head: dW += g z^T, db += g, dz = W^T g.
    const LayerParams& head = params.layers.back();
    LayerParams& g_head = grad.layers.back();
    const Vec& z = tr.embedding;
    Vec g_post(static_cast<std::size_t>(arch.embed_dim), 0.0);
    for (int r = 0; r < head.weight.rows; ++r) {
      const double g = g_logits[static_cast<std::size_t>(r)];
      g_head.bias[static_cast<std::size_t>(r)] += g;
      double* grow = &g_head.weight.data[static_cast<std::size_t>(r) * head.weight.cols];
      const double* wrow = &head.weight.data[static_cast<std::size_t>(r) * head.weight.cols];
      for (int c = 0; c < head.weight.cols; ++c) {
        grow[c] += g * z[static_cast<std::size_t>(c)];
        g_post[static_cast<std::size_t>(c)] += wrow[c] * g;
      }
    }

    // Encoder layers, last to first.
    for (int li = enc_layers - 1; li >= 0; --li) {
      const LayerParams& layer = params.layers[static_cast<std::size_t>(li)];
      LayerParams& g_layer = grad.layers[static_cast<std::size_t>(li)];
      const Vec& pre = tr.pre[static_cast<std::size_t>(li)];
      // ReLU follows every encoder layer except the last. Its derivative is
      // 1 for positive pre-activations and 0 otherwise (0 at exactly 0).
      Vec g_pre(pre.size());
      const bool relu_follows = li + 1 < enc_layers;
      for (std::size_t i = 0; i < pre.size(); ++i) {
        g_pre[i] = (relu_follows && !(pre[i] > 0.0)) ? 0.0 : g_post[i];
      }
      const Vec& layer_in =
          (li == 0) ? tr.input : tr.post[static_cast<std::size_t>(li) - 1];
      Vec g_in(static_cast<std::size_t>(layer.weight.cols), 0.0);
      for (int r = 0; r < layer.weight.rows; ++r) {
        const double g = g_pre[static_cast<std::size_t>(r)];
        g_layer.bias[static_cast<std::size_t>(r)] += g;
        double* grow = &g_layer.weight.data[static_cast<std::size_t>(r) * layer.weight.cols];
        const double* wrow = &layer.weight.data[static_cast<std::size_t>(r) * layer.weight.cols];
        for (int c = 0; c < layer.weight.cols; ++c) {
          grow[c] += g * layer_in[static_cast<std::size_t>(c)];
          g_in[static_cast<std::size_t>(c)] += wrow[c] * g;
        }
      }
      g_post = std::move(g_in);
    }
  }
  return grad;
}

void sgd_step(Model& model, const Params& grad, double lr, SgdState& state,
              double beta) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("sgd_step: learning rate must be finite and >= 0");
  }
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw ConfigError("sgd_step: momentum must lie in [0, 1)");
  }
  Params& params = model.mutable_params();
  if (!grad.same_shape(params)) {
    throw InputError("sgd_step: gradient shape mismatch");
  }
  if (!grad.is_finite()) {
    throw NumericError("sgd_step: non-finite gradient");
  }
  if (state.velocity.layers.empty()) {
    state.velocity = Params::zeros_like(params);
  } else if (!state.velocity.same_shape(params)) {
    throw InputError("sgd_step: velocity shape mismatch");
  }
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    LayerParams& p = params.layers[li];
    LayerParams& v = state.velocity.layers[li];
    const LayerParams& g = grad.layers[li];
    for (std::size_t i = 0; i < p.weight.data.size(); ++i) {
      v.weight.data[i] = beta * v.weight.data[i] + g.weight.data[i];
      p.weight.data[i] -= lr * v.weight.data[i];
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
      v.bias[i] = beta * v.bias[i] + g.bias[i];
      p.bias[i] -= lr * v.bias[i];
    }
  }
  if (!params.is_finite()) {
    throw NumericError("sgd_step: parameters became non-finite");
  }
}

MomentumModel::MomentumModel(const Model& source) : model_(source) {}

void MomentumModel::ema_update(const Model& source, double m) {
  if (!(m >= 0.0 && m <= 1.0)) {
    throw ConfigError("ema_update: momentum must lie in [0, 1]");
  }
  if (!(model_.arch() == source.arch())) {
    throw InputError("ema_update: architecture mismatch");
  }
  Params& tgt = model_.mutable_params();
  const Params& src = source.params();
  for (std::size_t li = 0; li < tgt.layers.size(); ++li) {
    LayerParams& t = tgt.layers[li];
    const LayerParams& s = src.layers[li];
    for (std::size_t i = 0; i < t.weight.data.size(); ++i) {
      const double tv = t.weight.data[i];
      const double sv = s.weight.data[i];
      t.weight.data[i] = (tv == sv) ? tv : m * tv + (1.0 - m) * sv;
    }
    for (std::size_t i = 0; i < t.bias.size(); ++i) {
      const double tv = t.bias[i];
      const double sv = s.bias[i];
      t.bias[i] = (tv == sv) ? tv : m * tv + (1.0 - m) * sv;
    }
  }
}

void save_checkpoint(const Model& model, const std::string& path) {
  const Architecture& arch = model.arch();
  std::ostringstream out;
  out << "{\n";
  out << "  \"format\": \"checkpoint-v1\",\n";
  out << "  \"arch\": {\n";
  out << "    \"input_dim\": " << arch.input_dim << ",\n";
  out << "    \"hidden_dims\": [";
  for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
    if (i) out << ", ";
    out << arch.hidden_dims[i];
  }
  out << "],\n";
  out << "    \"embed_dim\": " << arch.embed_dim << ",\n";
  out << "    \"classes\": " << arch.classes << "\n";
  out << "  },\n";
  out << "  \"layers\": [\n";
  const Params& params = model.params();
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const LayerParams& layer = params.layers[li];
    out << "    {\n";
    out << "      \"rows\": " << layer.weight.rows << ",\n";
    out << "      \"cols\": " << layer.weight.cols << ",\n";
    out << "      \"weight\": [";
    for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
      if (i) out << ", ";
      out << format_double(layer.weight.data[i]);
    }
    out << "],\n";
    out << "      \"bias\": [";
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      if (i) out << ", ";
      out << format_double(layer.bias[i]);
    }
    out << "]\n";
    out << "    }" << (li + 1 < params.layers.size() ? "," : "") << "\n";
  }
  out << "  ]\n";
  out << "}\n";
  write_text_file(path, out.str());
}

Model load_checkpoint(const std::string& path) {
  const json doc = parse_json_file(path);
  try {
    if (!doc.is_object() || doc.value("format", "") != "checkpoint-v1") {
      throw DataError("checkpoint " + path + ": missing or unknown format tag");
    }
    const json& ja = doc.at("arch");
    Architecture arch;
    arch.input_dim = ja.at("input_dim").get<int>();
    arch.hidden_dims = ja.at("hidden_dims").get<std::vector<int>>();
    arch.embed_dim = ja.at("embed_dim").get<int>();
    arch.classes = ja.at("classes").get<int>();

    Params params;
    for (const json& jl : doc.at("layers")) {
      LayerParams layer;
      const int rows = jl.at("rows").get<int>();
      const int cols = jl.at("cols").get<int>();
      if (rows < 1 || cols < 1) {
        throw DataError("checkpoint " + path + ": bad layer shape");
      }
      layer.weight.rows = rows;
      layer.weight.cols = cols;
      layer.weight.data = jl.at("weight").get<Vec>();
      layer.bias = jl.at("bias").get<Vec>();
      if (layer.weight.data.size() !=
              static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) ||
          layer.bias.size() != static_cast<std::size_t>(rows)) {
        throw DataError("checkpoint " + path +
                        ": layer data does not match declared shape");
      }
      params.layers.push_back(std::move(layer));
    }
    return Model(arch, std::move(params));
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace mvtta
