#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edgeformer/tensor.hpp"

namespace edgeformer {

// Model hyper-parameters and the ablation/readout switches.
struct ModelConfig {
  size_t layers = 3;       // total layers, first one vanilla
  size_t heads = 4;
  size_t d_model = 64;
  size_t d_node = 16;      // virtual-token base dimension
  size_t max_seq_len = 32;
  size_t vocab_size = 0;   // set when the vocabulary is known
  size_t num_nodes = 0;    // set when the network is known
  size_t num_labels = 0;   // classifier head size; 0 = no head
  double dropout = 0.0;
  bool use_center_token = true;
  bool use_neighbor_token = true;
  bool use_cross_edge_token = true;
  std::string readout = "cls";            // cls | neighbor_token
  std::string aggregation = "attention";  // attention | mean

  size_t head_dim() const { return d_model / heads; }
  void validate() const;
};

// Insertion-ordered named parameters; the order defines checkpoint layout.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  size_t total_elements() const;

  void zero_grad();
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);
  // Order-sensitive digest of all values; detects any mutation.
  double checksum() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-layer attention parameter handles.
struct AttentionParams {
  std::vector<Tensor> q_w, q_b, k_w, k_b, v_w, v_b;
  Tensor out_w, out_b;
};

struct Model {
  ModelConfig config;
  ParamStore params;
  std::vector<std::string> node_ids;  // embedding row -> node id

  const Tensor& p(const std::string& name) const { return params.at(name); }
  AttentionParams attention(size_t layer, const char* which) const;
  // z^(0) -> z^(l) map for layer l >= 1, stored (d_node, d_model).
  const Tensor& node_proj(size_t layer) const;
  int node_row(const std::string& id) const;
};

// Fresh parameters: weights Normal(0, 0.02), biases 0, layer-norm gain 1.
Model init_model(const ModelConfig& config, std::vector<std::string> node_ids,
                 uint64_t seed);

}  // namespace edgeformer
