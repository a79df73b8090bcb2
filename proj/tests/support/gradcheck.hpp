#pragma once

// Central-finite-difference gradient checking. The loss builder is run
// tape-free for numeric probes and once under a fresh tape for the recorded
// gradients, so the comparison never reuses autodiff against itself.

#include <functional>
#include <string>
#include <vector>

#include "edgeformer/model.hpp"
#include "edgeformer/tensor.hpp"

namespace gradcheck {

// |a - b| / max(1, |a|, |b|).
double rel_err(double a, double b);

// Numeric d(loss)/d(param) entry by entry; loss_value must recompute the
// forward pass from current parameter values without recording.
std::vector<double> fd_grad(const std::function<double()>& loss_value,
                            edgeformer::Tensor param, double step = 1e-5);

struct Report {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t checked_params = 0;
};

// Checks every requires_grad parameter that received a gradient from
// build_loss. missing_ok names parameters allowed to stay gradient-free
// (substring match); any other gradient-free trainable parameter is an
// error recorded as rel err infinity.
Report check_store(edgeformer::ParamStore& params,
                   const std::function<edgeformer::Tensor()>& build_loss,
                   const std::vector<std::string>& missing_ok = {},
                   double step = 1e-5);

// Single-tensor convenience: gradient of build_loss wrt param.
double check_tensor(edgeformer::Tensor param,
                    const std::function<edgeformer::Tensor()>& build_loss,
                    double step = 1e-5);

}  // namespace gradcheck
