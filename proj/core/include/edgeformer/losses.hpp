#pragma once

#include <string>
#include <vector>

#include "edgeformer/tensor.hpp"

namespace edgeformer {

// Linear classifier over edge representations; w is (d, num_labels).
struct ClassifierHead {
  Tensor w;
  Tensor b;
};

// variant "bce" (default): per-class sigmoid binary cross entropy against
// one-hot targets, summed over classes. variant "softmax": single-label cross
// entropy. Both are means over the batch.
Tensor edge_classification_loss(const Tensor& h_edges,
                                const std::vector<int>& labels,
                                const ClassifierHead& head,
                                const std::string& variant = "bce");

// In-batch contrastive loss: scores S = h_query h_key^T; row i's positive is
// the diagonal, the other B - 1 keys are its negatives. Mean over rows.
// B >= 2 required.
Tensor link_prediction_loss(const Tensor& h_query, const Tensor& h_key);

}  // namespace edgeformer
