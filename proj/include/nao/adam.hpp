#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nao/params.hpp"
#include "nao/tensor.hpp"

namespace nao {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied when nonzero
};

// Bias-corrected Adam over a ParamStore. Moment grids mirror parameter
// shapes; the step counter advances by exactly one per update.
class AdamState {
 public:
  AdamState(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.value(i).shape);
      v_.emplace_back(params.value(i).shape);
    }
  }

  std::uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  // grads[i] pairs with params.value(i); shapes must agree.
  void step(ParamStore& params, const std::vector<ValueGrid>& grads) {
    if (grads.size() != m_.size())
      throw ShapeError("adam: gradient count " + std::to_string(grads.size()) +
                       " vs parameter count " + std::to_string(m_.size()));
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      ValueGrid& p = params.value(i);
      const ValueGrid& gr = grads[i];
      require_same_shape(p, gr, "adam");
      ValueGrid& m = m_[i];
      ValueGrid& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = gr[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        p[k] -= cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                      cfg_.weight_decay * p[k]);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<ValueGrid> m_;
  std::vector<ValueGrid> v_;
};

}  // namespace nao
