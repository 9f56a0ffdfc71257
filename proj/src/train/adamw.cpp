// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/train/adamw.hpp"

#include <cmath>

#include "loopmoe/numerics/tensor.hpp"

namespace loopmoe {

template <typename T>
void AdamW<T>::step(std::vector<Parameter<T>>& params, double lr) {
  for (const Parameter<T>& p : params) {
    if (p.grad.size() != p.value.size()) continue;
    if (!p.grad.all_finite()) throw NumericError("adamw: non-finite gradient in parameter '" + p.name + "'");
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].value.size(), T{0});
      v_[i].assign(params[i].value.size(), T{0});
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    if (p.grad.size() != p.value.size()) continue;
    const double step_lr = lr * p.lr_multiplier;
    const double decay = p.weight_decay ? config_.weight_decay : 0.0;
    std::vector<T>& m = m_[i];
    std::vector<T>& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double theta = p.value[j];
      const double update = step_lr * (mj / c1) / (std::sqrt(vj / c2) + config_.eps);
      p.value[j] = static_cast<T>(theta - decay * theta - update);
    }
  }
}

template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter<T>& p : params) {
    for (T g : p.grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (Parameter<T>& p : params) {
      for (T& g : p.grad.data()) g *= scale;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(std::vector<Parameter<float>>&, double);
template double clip_grad_norm<double>(std::vector<Parameter<double>>&, double);

}  // namespace loopmoe
