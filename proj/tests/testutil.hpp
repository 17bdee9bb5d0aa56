#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "roadseg/rng.hpp"
#include "roadseg/tape.hpp"
#include "roadseg/tensor.hpp"

namespace testutil {

template <typename T>
roadseg::Tensor<T> random_tensor(std::vector<int> shape, roadseg::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  roadseg::Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// random values with |x| >= margin, for ops with a kink at zero
template <typename T>
roadseg::Tensor<T> random_tensor_away_from_zero(std::vector<int> shape, roadseg::Rng& rng,
                                                double margin = 0.1) {
  roadseg::Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(margin, 1.0);
    t[i] = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), 0.01);
}

// Central-finite-difference check of Tape::backward. `build` reconstructs the
// scalar loss from a tape and the named leaf handles; it runs once for the
// analytic sweep and twice per perturbed element. When max_elems > 0 only a
// strided subset of each tensor's elements is probed.
template <typename T, typename Build>
double grad_check(const std::map<std::string, roadseg::Tensor<T>>& inputs, Build build,
                  T eps = T(1e-5), int max_elems = -1) {
  using roadseg::Tape;
  using roadseg::Tensor;
  using roadseg::Val;

  auto eval = [&build](const std::map<std::string, Tensor<T>>& vals,
                       std::map<std::string, Tensor<T>>* grads) {
    Tape<T> tape;
    std::map<std::string, Val<T>> handles;
    for (const auto& [name, tensor] : vals) handles.emplace(name, tape.param(name, tensor));
    Val<T> loss = build(tape, handles);
    const double value = static_cast<double>(tape.value(loss).value());
    if (grads) *grads = tape.backward(loss);
    return value;
  };

  std::map<std::string, Tensor<T>> analytic;
  eval(inputs, &analytic);

  double worst = 0.0;
  for (const auto& [name, tensor] : inputs) {
    const std::int64_t n = tensor.numel();
    std::int64_t stride = 1;
    if (max_elems > 0 && n > max_elems) stride = (n + max_elems - 1) / max_elems;
    for (std::int64_t i = 0; i < n; i += stride) {
      std::map<std::string, Tensor<T>> probe = inputs;
      probe.at(name)[i] = tensor[i] + eps;
      const double plus = eval(probe, nullptr);
      probe.at(name)[i] = tensor[i] - eps;
      const double minus = eval(probe, nullptr);
      const double numeric = (plus - minus) / (2.0 * static_cast<double>(eps));
      worst = std::max(worst, rel_err(static_cast<double>(analytic.at(name)[i]), numeric));
    }
  }
  return worst;
}

}  // namespace testutil
