#pragma once

#include <cstdint>
#include <vector>

#include "edgeformer/model.hpp"

namespace edgeformer {

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

// Bias-corrected Adam with decoupled weight decay. Operates on the store's
// trainable (requires_grad) parameters; the trainable set is fixed at
// construction.
class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig config);

  // One update. Every trainable parameter must hold a gradient; gradients
  // are cleared afterwards.
  void step(ParamStore& params);

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t t) { step_ = t; }

  const AdamWConfig& config() const { return config_; }
  // Moment vectors, indexed like trainable_indices().
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<size_t>& trainable_indices() const { return indices_; }

 private:
  AdamWConfig config_;
  int64_t step_ = 0;
  std::vector<size_t> indices_;  // positions in the param store
  std::vector<std::vector<double>> m_, v_;
};

double global_grad_norm(const ParamStore& params);

// Scales all gradients so the global norm is at most max_norm. max_norm <= 0
// disables clipping.
void clip_gradients(ParamStore& params, double max_norm);

}  // namespace edgeformer
