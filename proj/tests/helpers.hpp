#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mvtta/model.hpp"
#include "mvtta/rng.hpp"
#include "mvtta/vecmath.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mvtta_test_" + tag + "_" + std::to_string(++counter) + "_" +
             std::to_string(static_cast<long>(::getpid())));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

// Independent re-implementation of the network forward pass, used as an
// oracle against Model::forward.
inline mvtta::Vec naive_logits(const mvtta::Architecture& arch,
                               const mvtta::Params& params,
                               const mvtta::Vec& input) {
  mvtta::Vec x = input;
  const int enc_layers = arch.encoder_layer_count();
  for (int li = 0; li < static_cast<int>(params.layers.size()); ++li) {
    const mvtta::LayerParams& layer = params.layers[static_cast<std::size_t>(li)];
    mvtta::Vec y(static_cast<std::size_t>(layer.weight.rows), 0.0);
    for (int r = 0; r < layer.weight.rows; ++r) {
      double sum = layer.bias[static_cast<std::size_t>(r)];
      for (int c = 0; c < layer.weight.cols; ++c) {
        sum += layer.weight.at(r, c) * x[static_cast<std::size_t>(c)];
      }
      y[static_cast<std::size_t>(r)] = sum;
    }
    if (li < enc_layers - 1) {
      for (double& v : y) {
        v = v > 0.0 ? v : 0.0;
      }
    }
    x = std::move(y);
  }
  return x;
}

// Central finite-difference gradient of `loss` over every parameter. A fresh
// Model is built per probe so no state leaks between evaluations.
template <typename LossFn>
mvtta::Params fd_gradient(const mvtta::Architecture& arch,
                          const mvtta::Params& params, LossFn loss,
                          double h = 1e-5) {
  mvtta::Params grad = mvtta::Params::zeros_like(params);
  const auto probe = [&](std::size_t layer, bool is_weight, std::size_t i) {
    mvtta::Params plus = params;
    mvtta::Params minus = params;
    if (is_weight) {
      plus.layers[layer].weight.data[i] += h;
      minus.layers[layer].weight.data[i] -= h;
    } else {
      plus.layers[layer].bias[i] += h;
      minus.layers[layer].bias[i] -= h;
    }
    const double f_plus = loss(mvtta::Model(arch, plus));
    const double f_minus = loss(mvtta::Model(arch, minus));
    return (f_plus - f_minus) / (2.0 * h);
  };
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    for (std::size_t i = 0; i < params.layers[li].weight.data.size(); ++i) {
      grad.layers[li].weight.data[i] = probe(li, true, i);
    }
    for (std::size_t i = 0; i < params.layers[li].bias.size(); ++i) {
      grad.layers[li].bias[i] = probe(li, false, i);
    }
  }
  return grad;
}

// Relative error guarded against tiny denominators.
inline double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) /
         std::max({1.0, std::abs(analytic), std::abs(fd)});
}

inline double max_rel_err(const mvtta::Params& analytic,
                          const mvtta::Params& fd) {
  double worst = 0.0;
  for (std::size_t li = 0; li < analytic.layers.size(); ++li) {
    for (std::size_t i = 0; i < analytic.layers[li].weight.data.size(); ++i) {
      worst = std::max(worst, rel_err(analytic.layers[li].weight.data[i],
                                      fd.layers[li].weight.data[i]));
    }
    for (std::size_t i = 0; i < analytic.layers[li].bias.size(); ++i) {
      worst = std::max(worst,
                       rel_err(analytic.layers[li].bias[i], fd.layers[li].bias[i]));
    }
  }
  return worst;
}

inline mvtta::Vec random_vec(std::size_t n, mvtta::Rng& rng,
                             double scale = 1.0) {
  mvtta::Vec v(n);
  for (double& x : v) {
    x = scale * rng.next_gaussian();
  }
  return v;
}

inline mvtta::Vec random_probs(std::size_t classes, mvtta::Rng& rng) {
  mvtta::Vec p(classes);
  double sum = 0.0;
  for (double& x : p) {
    x = rng.next_unit() + 1e-3;
    sum += x;
  }
  for (double& x : p) {
    x /= sum;
  }
  // Renormalize exactly enough for the queue's 1e-9 tolerance.
  double check = 0.0;
  for (double x : p) {
    check += x;
  }
  p[0] += 1.0 - check;
  return p;
}

// Smallest |pre-activation| over ReLU-followed layers for every input; used
// to reject finite-difference probes that straddle a ReLU kink.
inline double min_relu_margin(const mvtta::Model& model,
                              const std::vector<mvtta::Vec>& inputs) {
  const int enc_layers = model.arch().encoder_layer_count();
  double margin = 1e300;
  for (const mvtta::Vec& x : inputs) {
    const mvtta::ForwardTrace tr = model.forward(x);
    for (int li = 0; li + 1 < enc_layers; ++li) {
      for (double pre : tr.pre[static_cast<std::size_t>(li)]) {
        margin = std::min(margin, std::abs(pre));
      }
    }
  }
  return margin;
}

}  // namespace testutil
