#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mvtta/augment.hpp"
#include "mvtta/memory_queue.hpp"
#include "mvtta/model.hpp"
#include "mvtta/pdc.hpp"
#include "mvtta/vecmath.hpp"

namespace mvtta::tsd {

// Smoothed one-hot target: distribution[c] = (1-eps)*[c == source_class] +
// eps/C.
struct SmoothedLabel {
  Vec distribution;
  int source_class = 0;
  double epsilon = 0.0;
};

SmoothedLabel smooth_label(int cls, int classes, double epsilon);

// Mean over the batch of -sum_c target_c * log(pred_c), with logs clamped at
// a 1e-12 probability floor.
double ce_loss(const std::vector<Vec>& pred_probs,
               const std::vector<SmoothedLabel>& targets);

// Negative entropy of the batch-mean prediction: sum_c mean_c * log(mean_c),
// with 0*log 0 = 0. Always in [-ln C, 0]; minimized when the mean is uniform,
// so adding it to the objective pushes batches away from single-class
// collapse.
double diversity_loss(const std::vector<Vec>& pred_probs);

inline double total_loss(double ce, double div) { return ce + div; }

struct LossTerms {
  bool cross_entropy = true;
  bool diversity = true;
};

struct LossBreakdown {
  double ce = 0.0;
  double div = 0.0;
  double total = 0.0;
};

struct BatchEval {
  LossBreakdown loss;
  Params grad;
};

// Loss and parameter gradient for one batch of (already augmented) inputs
// against smoothed targets. Disabled terms contribute zero to both.
BatchEval evaluate_batch(const Model& model, const std::vector<Vec>& inputs,
                         const std::vector<SmoothedLabel>& targets,
                         const LossTerms& terms);

LossBreakdown batch_loss(const Model& model, const std::vector<Vec>& inputs,
                         const std::vector<SmoothedLabel>& targets,
                         const LossTerms& terms);

Params backward(const Model& model, const std::vector<Vec>& inputs,
                const std::vector<SmoothedLabel>& targets,
                const LossTerms& terms);

// Which augmentation feeds the memory queue. `weak` reuses the weak pass
// that drives label refinement; `strong` runs a separate strongly augmented
// pass through the momentum model just for the queue.
enum class QueueAug { weak, strong };

struct AdaptConfig {
  int epochs = 40;
  int batch_size = 16;
  double lr = 1e-3;
  double momentum = 0.9;      // heavy-ball coefficient for the optimizer
  double ema_m = 0.999;       // momentum-model EMA coefficient
  double label_smoothing = 0.1;
  int k_neighbors = 3;
  int queue_capacity = 4096;
  QueueAug queue_aug = QueueAug::weak;
  aug::AugmentSpec augment;
  std::uint64_t seed = 0;
};

void validate(const AdaptConfig& config);

// Everything a test or trace writer needs to see about one optimizer step.
struct BatchItemTrace {
  std::size_t item_index = 0;  // index into the calibrated set
  Vec refined_probs;           // kNN-refined distribution used for labeling
  int refined_label = 0;
  Vec target_distribution;     // smoothed label fed to the loss
};

struct BatchTrace {
  int epoch = 0;  // 1-based
  int step = 0;   // 1-based within the epoch
  LossBreakdown loss;
  std::vector<BatchItemTrace> items;
};

using AdaptObserver = std::function<void(const BatchTrace&)>;

// One weakly augmented momentum-model pass over the full view list, pushing
// (normalized embedding, probs) per item, so neighbour lookups are populated
// before the first adaptation batch.
void warm_up_queue(const MomentumModel& momentum,
                   const std::vector<data::ViewSample>& views,
                   const aug::AugmentSpec& spec, std::uint64_t seed,
                   MemoryQueue& queue);

struct EpochResult {
  int steps = 0;
  int ema_updates = 0;
};

// One pass over the calibrated set in shuffled order. Per batch: weak pass
// through the momentum model, kNN label refinement against the queue,
// smoothed targets, strong pass through the adapting model, one optimizer
// step on cross-entropy + diversity, one EMA update, then the batch's queue
// entries are pushed (a batch never votes on itself). `epoch` is 1-based and
// seeds the shuffle and augmentation streams.
EpochResult adapt_epoch(Model& model, MomentumModel& momentum,
                        MemoryQueue& queue,
                        const pdc::PseudoLabeledSet& calibrated,
                        const AdaptConfig& config, int epoch, SgdState& sgd,
                        const AdaptObserver& observer = {});

}  // namespace mvtta::tsd
