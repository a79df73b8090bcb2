#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edgeformer/losses.hpp"
#include "edgeformer/metrics.hpp"
#include "edgeformer/optimizer.hpp"

namespace edgeformer {

// Flat training configuration; the JSON config file mirrors these fields
// one-to-one and rejects unknown keys.
struct TrainConfig {
  double lr = 1e-5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
  size_t epochs = 10;
  size_t patience = 3;
  size_t batch_size_edge = 25;
  size_t batch_size_node = 30;
  uint64_t seed = 0;
  std::string loss_variant = "bce";  // bce | softmax
  size_t neighbor_cap = 8;
  std::map<std::string, size_t> per_type_cap;
  size_t vocab_size = 2000;
  size_t layers = 3;
  size_t heads = 4;
  size_t d_model = 64;
  size_t d_node = 16;
  size_t max_seq_len = 32;
  double dropout = 0.0;
  bool use_center_token = true;
  bool use_neighbor_token = true;
  bool use_cross_edge_token = true;
  std::string readout = "cls";
  std::string aggregation = "attention";

  static TrainConfig from_json_text(const std::string& text);
  static TrainConfig from_json_file(const std::string& path);
  std::string to_json() const;

  void validate() const;
  // vocab_size/num_nodes/num_labels stay unset here; the caller fills them.
  ModelConfig model_config() const;
  VirtualTokenFlags flags() const;
  AdamWConfig adamw_config() const;
  size_t cap_for(const std::string& type) const;
};

struct TrainResult {
  MetricReport report;
  std::vector<std::string> epoch_log;  // one JSON object per epoch
  size_t epochs_run = 0;
};

// Restricts requires_grad to the parameters the task actually drives, so the
// optimizer can insist on a gradient for each one. task: "edge" | "node".
void apply_trainable_mask(Model& model, const std::string& task,
                          const TrainConfig& config);

// Supervised edge classification with per-epoch validation Micro-F1 early
// stopping; the model is left holding the best-validation parameters.
TrainResult train_edge_task(const TextualEdgeNetwork& network,
                            const Vocabulary& vocab, Model& model,
                            AdamW& optimizer, const TrainConfig& config);

// Contrastive link prediction over (u, v) pairs from train edges, both
// endpoints encoded with the target edge excluded; validation MRR drives
// early stopping.
TrainResult train_node_task(const TextualEdgeNetwork& network,
                            const Vocabulary& vocab, Model& model,
                            AdamW& optimizer, const TrainConfig& config);

}  // namespace edgeformer
