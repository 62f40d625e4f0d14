#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvtta/vecmath.hpp"

namespace mvtta {

// Row-major dense matrix: element (r, c) lives at data[r * cols + c].
struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct LayerParams {
  Matrix weight;
  Vec bias;
};

// Full parameter set for one network: encoder layers in order, head last.
struct Params {
  std::vector<LayerParams> layers;

  bool same_shape(const Params& other) const;
  bool is_finite() const;
  static Params zeros_like(const Params& ref);
};

// Feed-forward classifier split into an encoder (producing an embedding) and
// a linear head (producing class logits). Encoder hidden layers use ReLU; the
// final encoder layer and the head are linear.
struct Architecture {
  int input_dim = 16;
  std::vector<int> hidden_dims{64};
  int embed_dim = 32;
  int classes = 3;

  // Encoder layer sizes in order: input_dim -> hidden_dims... -> embed_dim.
  std::vector<int> encoder_dims() const;
  int encoder_layer_count() const { return static_cast<int>(hidden_dims.size()) + 1; }
  int layer_count() const { return encoder_layer_count() + 1; }
  bool operator==(const Architecture&) const = default;
};

// Everything needed to replay one forward pass during backprop.
struct ForwardTrace {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer (encoder layers then head)
  std::vector<Vec> post;  // post-activation per layer
  Vec embedding;          // == post of the last encoder layer
  Vec logit_values;       // == pre of the head (head has no activation)
};

class Model {
 public:
  Model(Architecture arch, Params params);

  static Model random_init(const Architecture& arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  const Params& params() const { return params_; }
  Params& mutable_params() { return params_; }

  Vec embed(const Vec& input) const;
  Vec logits(const Vec& input) const;
  Vec logits_from_embedding(const Vec& embedding) const;
  Vec predict_proba(const Vec& input) const;
  ForwardTrace forward(const Vec& input) const;

 private:
  Architecture arch_;
  Params params_;
};

// Gradients of a scalar loss w.r.t. all parameters, given the gradient of
// that loss w.r.t. each sample's logits. Traces and logit gradients are
// paired by index; gradients are summed over the batch.
Params backprop_logit_grads(const Model& model,
                            const std::vector<ForwardTrace>& traces,
                            const std::vector<Vec>& logit_grads);

struct SgdState {
  Params velocity;
};

// Heavy-ball SGD: v <- beta * v + g; theta <- theta - lr * v.
void sgd_step(Model& model, const Params& grad, double lr, SgdState& state,
              double beta);

// Slow-moving copy of a model, updated by exponential moving average.
class MomentumModel {
 public:
  explicit MomentumModel(const Model& source);

  const Model& model() const { return model_; }

  // theta' <- m * theta' + (1 - m) * theta, elementwise. Entries already
  // equal to the source are left untouched so a converged pair stays bitwise
  // identical.
  void ema_update(const Model& source, double m);

 private:
  Model model_;
};

inline void ema_update(MomentumModel& target, const Model& source, double m) {
  target.ema_update(source, m);
}

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace mvtta
