#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edgeformer/graph.hpp"
#include "edgeformer/model.hpp"
#include "edgeformer/tensor.hpp"

namespace edgeformer {

// Which virtual tokens to feed the augmented layers. For an edge encoding the
// center/neighbor tokens are the stored (v_i, v_j); cross_edge applies only
// to node encoding.
struct VirtualTokenFlags {
  bool center = true;
  bool neighbor = true;
  bool cross_edge = true;
};

struct AttentionTraceEntry {
  size_t layer = 0;
  size_t head = 0;
  size_t rows = 0;  // queries
  size_t cols = 0;  // keys, virtual tokens first
  std::vector<double> probs;  // row-major
};

struct EdgeEncodingOutput {
  Tensor h_e;                        // (1, d)
  std::vector<Tensor> layer_states;  // text-token states after each layer
  std::vector<AttentionTraceEntry> trace;  // filled when requested
};

// Optional per-call context: attention-probability capture and the dropout
// stream used when config.dropout > 0.
struct ForwardHooks {
  std::vector<AttentionTraceEntry>* trace = nullptr;
  Rng* dropout_rng = nullptr;
};

// Token + learned absolute position embeddings; virtual tokens never get one.
Tensor token_input(const Model& m, const TokenSequence& tokens);

// Symmetric self-attention block (attention, residual+norm, FFN,
// residual+norm) over the unmasked positions.
Tensor vanilla_layer(const Model& m, size_t layer, const Tensor& H,
                     const std::vector<uint8_t>& mask,
                     const ForwardHooks& hooks = {});

// z^(l) pair for an edge's endpoints: the layer's linear map of z^(0),
// recomputed from the base table at every layer.
std::pair<Tensor, Tensor> virtual_node_tokens(const Model& m, size_t layer,
                                              int vi_row, int vj_row);

// Keys/values cover concat(extra_tokens, H); queries cover H only, so the
// output keeps H's row count. extra_queries, when present, are prepended to
// the query side as well (used by the neighbor_token readout) and contribute
// extra leading output rows.
Tensor augmented_layer(const Model& m, size_t layer, const Tensor& H,
                       const std::vector<uint8_t>& mask,
                       const std::vector<Tensor>& extra_tokens,
                       const ForwardHooks& hooks = {},
                       const std::vector<Tensor>& extra_queries = {});

// Full edge encoding: one vanilla layer, then augmented layers with the
// endpoint virtual tokens; h_e is the final [CLS] row.
EdgeEncodingOutput encode_edge(const Model& m, const TokenSequence& tokens,
                               int vi_row, int vj_row,
                               const VirtualTokenFlags& flags = {},
                               bool want_trace = false,
                               Rng* dropout_rng = nullptr);

// Per-layer, per-head attention probabilities of a plain forward pass.
std::vector<AttentionTraceEntry> attention_trace(const Model& m,
                                                 const TokenSequence& tokens,
                                                 int vi_row, int vj_row,
                                                 const VirtualTokenFlags& flags = {});

// One JSON object per (layer, head) holding the 2-D probability array.
std::string trace_to_jsonl(const std::vector<AttentionTraceEntry>& trace);

}  // namespace edgeformer
