#include "roadseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "roadseg/parallel.hpp"
#include "roadseg/rng.hpp"

namespace roadseg {

namespace {

struct SampleGrad {
  double loss = 0.0;
  std::map<std::string, Tensor<float>> grads;
};

SampleGrad sample_grad(const ModelParams<float>& params, const Sample& s) {
  Tape<float> tape;
  ParamVals<float> pv = register_params(tape, params);
  ForwardVals<float> f = build_forward(tape, tape.input(s.input), pv);
  Val<float> loss = build_mae_loss(tape, f, s.target);
  SampleGrad out;
  out.loss = static_cast<double>(tape.value(loss).value());
  out.grads = tape.backward(loss);
  return out;
}

double sample_val_mae(const ModelParams<float>& params, const Sample& s) {
  return mae_loss(forward(s.input, params), s.target);
}

}  // namespace

TrainResult train(const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (samples.empty()) throw DataError("training dataset is empty");
  if (cfg.batch_size < 1 || cfg.epochs < 1) {
    throw DataError("batch_size and epochs must be >= 1");
  }

  // scene-disjoint split: augmented views of one scene never straddle it
  std::vector<int> scene_ids;
  for (const Sample& s : samples) scene_ids.push_back(s.scene_id);
  std::sort(scene_ids.begin(), scene_ids.end());
  scene_ids.erase(std::unique(scene_ids.begin(), scene_ids.end()), scene_ids.end());
  if (scene_ids.size() < 2) {
    throw DataError("need at least 2 distinct scenes to split train/validation");
  }
  Rng split_rng(Rng::mix(cfg.seed, 0x5511u));
  split_rng.shuffle(scene_ids.begin(), scene_ids.end());
  const int n_val = std::clamp(
      static_cast<int>(std::lround(cfg.val_fraction * static_cast<double>(scene_ids.size()))),
      1, static_cast<int>(scene_ids.size()) - 1);
  std::set<int> val_scenes(scene_ids.begin(), scene_ids.begin() + n_val);

  std::vector<int> train_idx, val_idx;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    (val_scenes.count(samples[static_cast<std::size_t>(i)].scene_id) ? val_idx : train_idx)
        .push_back(i);
  }
  if (train_idx.empty() || val_idx.empty()) {
    throw DataError("train/validation split produced an empty side");
  }

  ModelParams<float> params = init_params<float>(Rng::mix(cfg.seed, 0x1417u));
  Adam<float> adam(params, AdamConfig<float>{cfg.lr});
  Rng shuffle_rng(Rng::mix(cfg.seed, 0xe90cu));

  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();

  std::vector<std::string> names;
  for_each_param(params,
                 [&names](const std::string& n, const Tensor<float>&) { names.push_back(n); });

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx.begin(), train_idx.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const int bs = static_cast<int>(
          std::min<std::size_t>(cfg.batch_size, train_idx.size() - start));
      std::vector<SampleGrad> slots(static_cast<std::size_t>(bs));
      parallel_for(bs, cfg.threads, [&](int i) {
        slots[static_cast<std::size_t>(i)] = sample_grad(
            params, samples[static_cast<std::size_t>(train_idx[start + i])]);
      });
      // reduce in sample order so results do not depend on thread scheduling
      std::map<std::string, Tensor<float>> batch_grads = std::move(slots[0].grads);
      double batch_loss = slots[0].loss;
      for (int i = 1; i < bs; ++i) {
        batch_loss += slots[static_cast<std::size_t>(i)].loss;
        for (const std::string& n : names) {
          Tensor<float>& dst = batch_grads.at(n);
          const Tensor<float>& src = slots[static_cast<std::size_t>(i)].grads.at(n);
          for (std::int64_t k = 0; k < dst.numel(); ++k) dst[k] += src[k];
        }
      }
      const float inv = 1.0f / static_cast<float>(bs);
      for (const std::string& n : names) {
        Tensor<float>& g = batch_grads.at(n);
        for (std::int64_t k = 0; k < g.numel(); ++k) g[k] *= inv;
      }
      batch_loss /= bs;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      loss_sum += batch_loss * bs;
      adam.step(params, batch_grads);
    }

    std::vector<double> val_losses(val_idx.size(), 0.0);
    parallel_for(static_cast<int>(val_idx.size()), cfg.threads, [&](int i) {
      val_losses[static_cast<std::size_t>(i)] =
          sample_val_mae(params, samples[static_cast<std::size_t>(val_idx[static_cast<std::size_t>(i)])]);
    });
    const double val_mae =
        std::accumulate(val_losses.begin(), val_losses.end(), 0.0) / val_losses.size();
    if (!std::isfinite(val_mae)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }

    EpochStats stats{epoch, loss_sum / static_cast<double>(train_idx.size()), val_mae};
    result.history.push_back(stats);
    if (val_mae < result.best_val_mae) {
      result.best_val_mae = val_mae;
      result.best_epoch = epoch;
      result.best = params;
    }
    if (cfg.verbose) {
      std::printf("epoch %d/%d  train_mae %.6f  val_mae %.6f%s\n", epoch, cfg.epochs,
                  stats.train_mae, stats.val_mae,
                  result.best_epoch == epoch ? "  (best)" : "");
      std::fflush(stdout);
    }
    if (on_epoch) on_epoch(result);
  }
  result.final_params = std::move(params);
  return result;
}

std::string loss_history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_mae,val_mae\n";
  char line[96];
  for (const EpochStats& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.10g\n", e.epoch, e.train_mae, e.val_mae);
    out += line;
  }
  return out;
}

}  // namespace roadseg
