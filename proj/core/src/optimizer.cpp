#include "edgeformer/optimizer.hpp"

#include <cmath>

namespace edgeformer {

AdamW::AdamW(const ParamStore& params, AdamWConfig config) : config_(config) {
  const auto& items = params.items();
  for (size_t i = 0; i < items.size(); ++i) {
    if (!items[i].second.requires_grad()) continue;
    indices_.push_back(i);
    m_.emplace_back(items[i].second.numel(), 0.0);
    v_.emplace_back(items[i].second.numel(), 0.0);
  }
}

void AdamW::step(ParamStore& params) {
  const auto& items = params.items();
  ++step_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (size_t k = 0; k < indices_.size(); ++k) {
    const auto& [name, t] = items[indices_[k]];
    Tensor param = t;
    if (!param.has_grad()) {
      throw ValueError("adamw: trainable parameter \"" + name +
                       "\" has no gradient");
    }
    const std::vector<double>& g = param.grad();
    double* p = param.mut_data();
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    size_t n = param.numel();
    double decay = 1.0 - config_.lr * config_.weight_decay;
    for (size_t i = 0; i < n; ++i) {
      p[i] *= decay;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  for (size_t idx : indices_) {
    Tensor param = items[idx].second;
    param.clear_grad();
  }
}

double global_grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void clip_gradients(ParamStore& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double norm = global_grad_norm(params);
  if (norm <= max_norm) return;
  double factor = max_norm / norm;
  for (auto& [name, t] : params.items()) {
    if (!t.has_grad()) continue;
    Tensor param = t;
    // grad() is const; scale through the impl.
    auto impl = param.impl();
    for (double& g : impl->grad) g *= factor;
  }
}

}  // namespace edgeformer
