#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "roadseg/data.hpp"
#include "roadseg/model.hpp"
#include "roadseg/tape.hpp"

namespace roadseg {

template <typename T>
struct AdamConfig {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// One Adam update for a single tensor. t is the step count after the update
// (first step passes t = 1).
template <typename T>
void adam_step_tensor(Tensor<T>& theta, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                      std::int64_t t, const AdamConfig<T>& cfg) {
  if (!theta.same_shape(grad) || !theta.same_shape(m) || !theta.same_shape(v)) {
    throw ShapeError("adam_step shape mismatch: theta " + shape_str(theta.shape()) + ", grad " +
                     shape_str(grad.shape()));
  }
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta1), t));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta2), t));
  for (std::int64_t i = 0; i < theta.numel(); ++i) {
    const T g = grad[i];
    m[i] = cfg.beta1 * m[i] + (T(1) - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (T(1) - cfg.beta2) * g * g;
    const T m_hat = m[i] / bc1;
    const T v_hat = v[i] / bc2;
    theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

// Adam state mirroring a ModelParams tensor set.
template <typename T>
class Adam {
 public:
  Adam(const ModelParams<T>& params, AdamConfig<T> cfg) : cfg_(cfg) {
    for_each_param(params, [this](const std::string& name, const Tensor<T>& t) {
      m_.emplace(name, Tensor<T>(t.shape()));
      v_.emplace(name, Tensor<T>(t.shape()));
    });
  }

  void step(ModelParams<T>& params, const std::map<std::string, Tensor<T>>& grads) {
    ++t_;
    for_each_param(params, [this, &grads](const std::string& name, Tensor<T>& theta) {
      auto g = grads.find(name);
      if (g == grads.end()) throw ShapeError("missing gradient for " + name);
      adam_step_tensor(theta, g->second, m_.at(name), v_.at(name), t_, cfg_);
    });
  }

  std::int64_t step_count() const { return t_; }
  const AdamConfig<T>& config() const { return cfg_; }

 private:
  AdamConfig<T> cfg_;
  std::map<std::string, Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

// Mean absolute error over all 62 boundary quantities (60 top bins + left +
// right), everything equally weighted.
template <typename T>
double mae_loss(const BoundaryPrediction<T>& pred, const BoundaryTargets& target) {
  if (pred.top.size() != target.top.size()) {
    throw ShapeError("mae_loss top length mismatch: " + std::to_string(pred.top.size()) +
                     " vs " + std::to_string(target.top.size()));
  }
  double acc = std::abs(static_cast<double>(pred.left) - target.left) +
               std::abs(static_cast<double>(pred.right) - target.right);
  for (std::size_t i = 0; i < pred.top.size(); ++i) {
    acc += std::abs(static_cast<double>(pred.top[i]) - target.top[i]);
  }
  return acc / static_cast<double>(pred.top.size() + 2);
}

// Same quantity as a tape node, for training.
template <typename T>
Val<T> build_mae_loss(Tape<T>& tape, const ForwardVals<T>& f, const BoundaryTargets& target) {
  if (target.top.size() != static_cast<std::size_t>(kSeqLen)) {
    throw ShapeError("mae target must have " + std::to_string(kSeqLen) + " top values, got " +
                     std::to_string(target.top.size()));
  }
  Tensor<T> lr({2}, {static_cast<T>(target.left), static_cast<T>(target.right)});
  std::vector<T> top(target.top.begin(), target.top.end());
  Tensor<T> tt({kSeqLen}, std::move(top));
  auto lr_err = tape.sum(tape.abs(tape.sub(f.lr, tape.input(std::move(lr)))));
  auto top_err = tape.sum(tape.abs(tape.sub(f.top, tape.input(std::move(tt)))));
  return tape.affine(tape.add(lr_err, top_err), T(1) / T(kSeqLen + 2), T(0));
}

struct TrainConfig {
  int batch_size = 125;
  int epochs = 80;
  float lr = 1e-4f;
  double val_fraction = 0.015;  // of scenes, at least one scene
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  ModelParams<float> best;
  ModelParams<float> final_params;
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_mae = 0.0;
};

// Called after every epoch with the in-progress result (history filled up to
// the current epoch, best checkpoint tracked).
using EpochCallback = std::function<void(const TrainResult&)>;

// Splits scenes (never samples) into train/validation, then runs seeded
// shuffled mini-batch Adam on the MAE loss. Deterministic given the config.
TrainResult train(const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

std::string loss_history_csv(const std::vector<EpochStats>& history);

}  // namespace roadseg
