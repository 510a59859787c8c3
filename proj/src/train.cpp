#include "hipss/train.hpp"

#include <cmath>
#include <map>
#include <string>

#include "hipss/errors.hpp"
#include "hipss/metrics.hpp"

namespace hipss {

void adam_step(Vector& params, AdamState& state, std::span<const double> grad, const AdamConfig& cfg) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: gradient/state length does not match parameters");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void TrainConfig::validate() const {
  if (!(adam.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("train.eps must be > 0");
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
  if (patience > max_epochs) throw ConfigError("train.patience must not exceed train.max_epochs");
}

SplitMetrics score_split(const Model& model, std::span<const SlideBag> bags) {
  const auto preds = predict(model, bags);
  std::vector<Vector> probs;
  std::vector<std::size_t> labels;
  double total = 0.0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    probs.push_back(preds[i].probabilities);
    labels.push_back(bags[i].label);
    total += -std::log(preds[i].probabilities[bags[i].label]);
  }
  return {auc_multiclass(probs, labels, model.num_classes()), total / static_cast<double>(bags.size())};
}

FitResult fit(const Model& initial, std::span<const SlideBag> train, std::span<const SlideBag> val,
              const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw DataError("fit: empty training split");
  if (val.empty()) throw DataError("fit: empty validation split");
  if (config.k > 0) {
    std::map<std::size_t, std::size_t> per_class;
    for (const auto& b : train) ++per_class[b.label];
    for (std::size_t c = 0; c < initial.num_classes(); ++c) {
      if (per_class[c] != config.k) {
        throw DataError("fit: class " + std::to_string(c) + " has " + std::to_string(per_class[c]) +
                        " training slides, expected k=" + std::to_string(config.k));
      }
    }
  }

  FitResult result;
  result.model = initial;
  Model current = initial;
  Vector params = current.trainable();
  AdamState state(params.size());
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const LossGrad lg = loss_and_grad(current, train);
    if (!std::isfinite(lg.loss)) throw NumericError("fit: non-finite training loss at epoch " + std::to_string(epoch));
    adam_step(params, state, lg.grad, config.adam);
    current.set_trainable(params);

    const SplitMetrics vm = score_split(current, val);
    result.history.push_back({epoch, lg.loss, vm.auc, vm.loss});

    const bool improved =
        vm.auc > result.best_val_auc || (vm.auc == result.best_val_auc && vm.loss < result.best_val_loss);
    if (improved) {
      result.best_val_auc = vm.auc;
      result.best_val_loss = vm.loss;
      result.best_epoch = epoch;
      result.model = current;
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace hipss
