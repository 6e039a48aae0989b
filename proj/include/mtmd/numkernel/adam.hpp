/* Copyright 2026 The MTMD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "mtmd/numkernel/params.hpp"

namespace mtmd::nk {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Slots are visited in id order. Only slots that received
// gradient since the last step are updated, so a parameter that took no part
// in the forward pass stays bitwise unchanged even when it carries moment
// state from earlier steps. Gradients are zeroed afterwards.
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::uint64_t steps() const { return t_; }

  void step(ParamStore& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto& [id, s] : params.slots()) {
      if (s.trainable && s.touched) {
        auto& st = state_[id];
        if (st.m.size() != s.value.size()) {
          st.m = Tensor2(s.value.rows(), s.value.cols());
          st.v = Tensor2(s.value.rows(), s.value.cols());
        }
        auto m = st.m.mat().array();
        auto v = st.v.mat().array();
        const auto gr = s.grad.mat().array();
        m = opt_.beta1 * m + (1.0 - opt_.beta1) * gr;
        v = opt_.beta2 * v + (1.0 - opt_.beta2) * gr.square();
        s.value.mat().array() -= opt_.lr * (m / c1) / ((v / c2).sqrt() + opt_.eps);
      }
      // Gradients only ever land in touched slots.
      if (s.touched) s.grad.set_zero();
      s.touched = false;
    }
  }

 private:
  struct Moments {
    Tensor2 m;
    Tensor2 v;
  };
  AdamOptions opt_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace mtmd::nk
