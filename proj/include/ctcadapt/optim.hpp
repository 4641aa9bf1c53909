// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ctcadapt/model.hpp"

namespace ctcadapt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter path and a
// parameter's step counter only advances while it is trainable, so a
// parameter thawed late starts from fresh moments.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Updates trainable parameters that carry a gradient.
  void step(Model& model, double lr) {
    for (auto& p : model.parameters()) {
      if (!p.trainable || !p.tensor.has_grad()) continue;
      auto& st = state_[p.path()];
      auto values = p.tensor.data();
      auto grad = p.tensor.grad();
      if (st.m.empty()) {
        st.m.assign(values.size(), 0.0);
        st.v.assign(values.size(), 0.0);
      }
      ++st.t;
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      for (std::size_t i = 0; i < values.size(); ++i) {
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * grad[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        values[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  struct State {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace ctcadapt
