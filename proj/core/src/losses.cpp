#include "edgeformer/losses.hpp"

namespace edgeformer {

Tensor edge_classification_loss(const Tensor& h_edges,
                                const std::vector<int>& labels,
                                const ClassifierHead& head,
                                const std::string& variant) {
  size_t batch = h_edges.rows();
  size_t num_labels = head.w.cols();
  if (labels.size() != batch) {
    throw ShapeError("edge_classification_loss: " +
                     std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(batch));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<size_t>(y) >= num_labels) {
      throw ValueError("edge_classification_loss: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(num_labels) + ")");
    }
  }
  Tensor logits = linear(h_edges, head.w, head.b);
  Tensor terms;
  if (variant == "bce") {
    Tensor targets = Tensor::zeros({batch, num_labels});
    for (size_t i = 0; i < batch; ++i) {
      targets.mut_data()[i * num_labels + static_cast<size_t>(labels[i])] = 1.0;
    }
    terms = bce_with_logits_terms(logits, targets);
  } else if (variant == "softmax") {
    terms = cross_entropy_terms(logits, labels);
  } else {
    throw ValueError("edge_classification_loss: unknown variant \"" + variant +
                     "\"");
  }
  return scale(sum(terms), 1.0 / static_cast<double>(batch));
}

Tensor link_prediction_loss(const Tensor& h_query, const Tensor& h_key) {
  if (h_query.shape() != h_key.shape() || h_query.rank() != 2) {
    throw ShapeError("link_prediction_loss: shapes disagree: " +
                     shape_str(h_query.shape()) + " vs " +
                     shape_str(h_key.shape()));
  }
  size_t batch = h_query.rows();
  if (batch < 2) {
    throw ValueError(
        "link_prediction_loss: in-batch negatives need batch >= 2, got " +
        std::to_string(batch));
  }
  Tensor scores = matmul(h_query, transpose(h_key));
  std::vector<int> diag(batch);
  for (size_t i = 0; i < batch; ++i) diag[i] = static_cast<int>(i);
  return scale(sum(cross_entropy_terms(scores, diag)),
               1.0 / static_cast<double>(batch));
}

}  // namespace edgeformer
