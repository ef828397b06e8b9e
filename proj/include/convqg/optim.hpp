// Copyright 2026 The ConVQG Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "convqg/grad.hpp"

namespace convqg::grad {

struct AdamWOptions {
  double lr = 2e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates for one parameter tensor.
template <std::floating_point T>
struct AdamWSlot {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t step = 0;
};

// One decoupled-weight-decay Adam update:
//   p <- p - lr * wd * p
//   p <- p - lr * mhat / (sqrt(vhat) + eps)
template <std::floating_point T>
void adamw_step(std::span<T> param, std::span<const T> grad, AdamWSlot<T>& slot,
                const AdamWOptions& opt) {
  if (param.size() != grad.size()) {
    throw DimensionError("adamw_step: parameter has " + std::to_string(param.size()) +
                         " entries but gradient has " + std::to_string(grad.size()));
  }
  if (slot.m.empty() && slot.v.empty()) {
    slot.m.assign(param.size(), T(0));
    slot.v.assign(param.size(), T(0));
  }
  if (slot.m.size() != param.size() || slot.v.size() != param.size()) {
    throw DimensionError("adamw_step: optimizer state does not match parameter shape");
  }
  ++slot.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(slot.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(slot.step));
  const T b1 = T(opt.beta1), b2 = T(opt.beta2);
  const T decay = T(1.0 - opt.lr * opt.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
    slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
    const T mhat = slot.m[i] / T(bc1);
    const T vhat = slot.v[i] / T(bc2);
    param[i] *= decay;
    param[i] -= T(opt.lr) * mhat / (std::sqrt(vhat) + T(opt.eps));
  }
}

// AdamW over an ordered list of parameters.
template <std::floating_point T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions opt) : opt_(opt) {}

  const AdamWOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }

  void step(std::span<Parameter<T>* const> params) {
    if (slots_.empty()) slots_.resize(params.size());
    if (slots_.size() != params.size()) {
      throw DimensionError("AdamW: parameter list changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      adamw_step<T>(params[k]->value.data(), params[k]->grad, slots_[k], opt_);
    }
  }

 private:
  AdamWOptions opt_;
  std::vector<AdamWSlot<T>> slots_;
};

}  // namespace convqg::grad
