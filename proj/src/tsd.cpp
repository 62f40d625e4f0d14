#include "mvtta/tsd.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "mvtta/errors.hpp"

namespace mvtta::tsd {

namespace {

constexpr double kProbFloor = 1e-12;

void check_batch(const std::vector<Vec>& preds,
                 const std::vector<SmoothedLabel>& targets) {
  if (preds.empty()) {
    throw InputError("loss: empty batch");
  }
  if (preds.size() != targets.size()) {
    throw InputError("loss: predictions and targets differ in length");
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != targets[i].distribution.size()) {
      throw InputError("loss: class count mismatch at batch item " +
                       std::to_string(i));
    }
  }
}

Vec batch_mean(const std::vector<Vec>& preds) {
  Vec mean(preds[0].size(), 0.0);
  for (const Vec& p : preds) {
    for (std::size_t c = 0; c < p.size(); ++c) {
      mean[c] += p[c];
    }
  }
  for (double& m : mean) {
    m /= static_cast<double>(preds.size());
  }
  return mean;
}

}  // namespace

SmoothedLabel smooth_label(int cls, int classes, double epsilon) {
  if (classes < 1) {
    throw InputError("smooth_label: class count must be >= 1");
  }
  if (cls < 0 || cls >= classes) {
    throw InputError("smooth_label: class " + std::to_string(cls) +
                     " outside [0, " + std::to_string(classes) + ")");
  }
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw InputError("smooth_label: epsilon must lie in [0, 1)");
  }
  SmoothedLabel out;
  out.source_class = cls;
  out.epsilon = epsilon;
  out.distribution.assign(static_cast<std::size_t>(classes), epsilon / classes);
  out.distribution[static_cast<std::size_t>(cls)] += 1.0 - epsilon;
  return out;
}

double ce_loss(const std::vector<Vec>& pred_probs,
               const std::vector<SmoothedLabel>& targets) {
  check_batch(pred_probs, targets);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred_probs.size(); ++i) {
    const Vec& p = pred_probs[i];
    const Vec& y = targets[i].distribution;
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (y[c] != 0.0) {
        sum -= y[c] * std::log(std::max(p[c], kProbFloor));
      }
    }
  }
  return sum / static_cast<double>(pred_probs.size());
}

double diversity_loss(const std::vector<Vec>& pred_probs) {
  if (pred_probs.empty()) {
    throw InputError("loss: empty batch");
  }
  const Vec mean = batch_mean(pred_probs);
  double sum = 0.0;
  for (double m : mean) {
    if (m > 0.0) {
      sum += m * std::log(std::max(m, kProbFloor));
    }
  }
  return sum;
}

BatchEval evaluate_batch(const Model& model, const std::vector<Vec>& inputs,
                         const std::vector<SmoothedLabel>& targets,
                         const LossTerms& terms) {
  if (inputs.empty()) {
    throw InputError("loss: empty batch");
  }
  const std::size_t batch = inputs.size();
  std::vector<ForwardTrace> traces;
  std::vector<Vec> probs;
  traces.reserve(batch);
  probs.reserve(batch);
  for (const Vec& x : inputs) {
    ForwardTrace tr = model.forward(x);
    probs.push_back(stable_softmax(tr.logit_values));
    traces.push_back(std::move(tr));
  }

  BatchEval out;
  out.loss.ce = terms.cross_entropy ? ce_loss(probs, targets) : 0.0;
  out.loss.div = terms.diversity ? diversity_loss(probs) : 0.0;
  out.loss.total = total_loss(out.loss.ce, out.loss.div);

  const Vec mean = batch_mean(probs);
  const double inv_batch = 1.0 / static_cast<double>(batch);

  // Per-item gradient of the loss w.r.t. softmax outputs, then chained
  // through the softmax Jacobian: dL/dz_k = p_k * (g_k - sum_c g_c p_c).
  std::vector<Vec> logit_grads;
  logit_grads.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const Vec& p = probs[i];
    const Vec& y = targets[i].distribution;
    Vec gp(p.size(), 0.0);
    if (terms.cross_entropy) {
      // d(-y log max(p, floor))/dp is -y/p above the floor and 0 below it,
      // where the clamped log is constant.
      for (std::size_t c = 0; c < p.size(); ++c) {
        if (y[c] != 0.0 && p[c] > kProbFloor) {
          gp[c] -= y[c] / p[c] * inv_batch;
        }
      }
    }
    if (terms.diversity) {
      for (std::size_t c = 0; c < p.size(); ++c) {
        const double m = mean[c];
        if (m > kProbFloor) {
          gp[c] += (std::log(m) + 1.0) * inv_batch;
        } else if (m > 0.0) {
          gp[c] += std::log(kProbFloor) * inv_batch;
        }
      }
    }
    double g_dot_p = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      g_dot_p += gp[c] * p[c];
    }
    Vec gz(p.size());
    for (std::size_t c = 0; c < p.size(); ++c) {
      gz[c] = p[c] * (gp[c] - g_dot_p);
    }
    logit_grads.push_back(std::move(gz));
  }
  out.grad = backprop_logit_grads(model, traces, logit_grads);
  return out;
}

LossBreakdown batch_loss(const Model& model, const std::vector<Vec>& inputs,
                         const std::vector<SmoothedLabel>& targets,
                         const LossTerms& terms) {
  if (inputs.empty()) {
    throw InputError("loss: empty batch");
  }
  std::vector<Vec> probs;
  probs.reserve(inputs.size());
  for (const Vec& x : inputs) {
    probs.push_back(model.predict_proba(x));
  }
  LossBreakdown out;
  out.ce = terms.cross_entropy ? ce_loss(probs, targets) : 0.0;
  out.div = terms.diversity ? diversity_loss(probs) : 0.0;
  out.total = total_loss(out.ce, out.div);
  return out;
}

Params backward(const Model& model, const std::vector<Vec>& inputs,
                const std::vector<SmoothedLabel>& targets,
                const LossTerms& terms) {
  return evaluate_batch(model, inputs, targets, terms).grad;
}

void validate(const AdaptConfig& config) {
  if (config.epochs < 1) {
    throw ConfigError("adapt: epochs must be >= 1");
  }
  if (config.batch_size < 1) {
    throw ConfigError("adapt: batch_size must be >= 1");
  }
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) {
    throw ConfigError("adapt: lr must be finite and >= 0");
  }
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) {
    throw ConfigError("adapt: momentum must lie in [0, 1)");
  }
  if (!(config.ema_m >= 0.0 && config.ema_m < 1.0)) {
    throw ConfigError("adapt: ema_m must lie in [0, 1)");
  }
  if (!(config.label_smoothing >= 0.0 && config.label_smoothing < 1.0)) {
    throw ConfigError("adapt: label_smoothing must lie in [0, 1)");
  }
  if (config.k_neighbors < 1) {
    throw ConfigError("adapt: k_neighbors must be >= 1");
  }
  if (config.queue_capacity < 1) {
    throw ConfigError("adapt: queue_capacity must be >= 1");
  }
  aug::validate(config.augment);
}

void warm_up_queue(const MomentumModel& momentum,
                   const std::vector<data::ViewSample>& views,
                   const aug::AugmentSpec& spec, std::uint64_t seed,
                   MemoryQueue& queue) {
  for (std::size_t i = 0; i < views.size(); ++i) {
    Rng rng = Rng::stream(seed, StreamKind::WarmupAug,
                          static_cast<std::uint64_t>(i));
    const Vec x = aug::weak_augment(views[i].features, spec, rng);
    const ForwardTrace tr = momentum.model().forward(x);
    queue.push(l2_normalized(tr.embedding), stable_softmax(tr.logit_values));
  }
}

EpochResult adapt_epoch(Model& model, MomentumModel& momentum,
                        MemoryQueue& queue,
                        const pdc::PseudoLabeledSet& calibrated,
                        const AdaptConfig& config, int epoch, SgdState& sgd,
                        const AdaptObserver& observer) {
  validate(config);
  if (epoch < 1) {
    throw InputError("adapt_epoch: epoch index is 1-based");
  }
  if (calibrated.items.empty()) {
    throw InputError("adapt_epoch: calibrated set is empty");
  }

  std::vector<std::size_t> order(calibrated.items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  {
    Rng rng = Rng::stream(config.seed, StreamKind::AdaptShuffle,
                          static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
  }

  EpochResult result;
  const std::size_t n = order.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(start + bs, n);
    const int step = static_cast<int>(start / bs) + 1;

    std::vector<Vec> strong_inputs;
    std::vector<SmoothedLabel> targets;
    std::vector<std::pair<Vec, Vec>> queue_entries;  // (embedding, probs)
    std::vector<BatchItemTrace> item_traces;

    for (std::size_t bi = start; bi < end; ++bi) {
      const std::size_t idx = order[bi];
      const Vec& x = calibrated.items[idx].sample.features;

      Rng weak_rng = Rng::stream(config.seed, StreamKind::AugWeak,
                                 static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(idx));
      const Vec weak = aug::weak_augment(x, config.augment, weak_rng);
      const ForwardTrace weak_tr = momentum.model().forward(weak);
      const Vec w_norm = l2_normalized(weak_tr.embedding);
      const Vec w_probs = stable_softmax(weak_tr.logit_values);

      const Refined refined =
          knn_refine(queue, w_norm, w_probs, config.k_neighbors);
      const SmoothedLabel target =
          smooth_label(refined.pseudo_label, calibrated.classes,
                       config.label_smoothing);

      Rng strong_rng = Rng::stream(config.seed, StreamKind::AugStrong,
                                   static_cast<std::uint64_t>(epoch),
                                   static_cast<std::uint64_t>(idx));
      strong_inputs.push_back(aug::strong_augment(x, config.augment, strong_rng));

      if (config.queue_aug == QueueAug::strong) {
        Rng q_rng = Rng::stream(config.seed, StreamKind::AugStrongQueue,
                                static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(idx));
        const Vec q_input = aug::strong_augment(x, config.augment, q_rng);
        const ForwardTrace q_tr = momentum.model().forward(q_input);
        queue_entries.emplace_back(l2_normalized(q_tr.embedding),
                                   stable_softmax(q_tr.logit_values));
      } else {
        queue_entries.emplace_back(w_norm, w_probs);
      }

      BatchItemTrace it;
      it.item_index = idx;
      it.refined_probs = refined.probs;
      it.refined_label = refined.pseudo_label;
      it.target_distribution = target.distribution;
      item_traces.push_back(std::move(it));
      targets.push_back(target);
    }

    const LossTerms terms;
    BatchEval eval = evaluate_batch(model, strong_inputs, targets, terms);
    if (!std::isfinite(eval.loss.total)) {
      throw NumericError("adapt_epoch: epoch " + std::to_string(epoch) +
                         " step " + std::to_string(step) +
                         ": non-finite loss");
    }
    sgd_step(model, eval.grad, config.lr, sgd, config.momentum);
    momentum.ema_update(model, config.ema_m);
    ++result.ema_updates;
    for (std::pair<Vec, Vec>& entry : queue_entries) {
      queue.push(std::move(entry.first), std::move(entry.second));
    }
    ++result.steps;

    if (observer) {
      BatchTrace trace;
      trace.epoch = epoch;
      trace.step = step;
      trace.loss = eval.loss;
      trace.items = std::move(item_traces);
      observer(trace);
    }
  }
  return result;
}

}  // namespace mvtta::tsd
