#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "hipss/model.hpp"

namespace hipss {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  std::size_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam. Throws NumericError on a non-finite gradient,
/// leaving params and state untouched.
void adam_step(Vector& params, AdamState& state, std::span<const double> grad, const AdamConfig& cfg);

struct TrainConfig {
  AdamConfig adam;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
  std::size_t k = 0;  // shots per class; 0 skips the k-shot check

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // at the parameters the step was taken from
  double val_auc = 0.0;     // after the step
  double val_loss = 0.0;    // after the step
};

struct FitResult {
  Model model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_auc = -std::numeric_limits<double>::infinity();
  double best_val_loss = std::numeric_limits<double>::infinity();
};

struct SplitMetrics {
  double auc = 0.0;
  double loss = 0.0;
};

/// AUC and mean cross-entropy of a model on a set of bags.
SplitMetrics score_split(const Model& model, std::span<const SlideBag> bags);

/// Full-batch Adam, one step per epoch. After each step the validation AUC
/// is measured; an epoch improves on the best when its AUC is higher, or
/// equal with a lower validation loss. Training stops once more than
/// `patience` consecutive epochs fail to improve.
FitResult fit(const Model& initial, std::span<const SlideBag> train, std::span<const SlideBag> val,
              const TrainConfig& config);

}  // namespace hipss
