#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "edgeformer/edge_encoder.hpp"

namespace edgeformer {

// One sampled incident edge of an ego batch.
struct EgoEdge {
  int edge_index = -1;  // index into the source network, -1 when synthetic
  TokenSequence tokens;
  int neighbor_row = -1;  // embedding row of the non-center endpoint
};

// A center node and its sampled incident edges, the unit of node encoding.
struct EgoBatch {
  int center_row = -1;
  std::vector<EgoEdge> edges;
};

struct NodeEncodingOutput {
  Tensor h_v;      // (1, d)
  Tensor h_edges;  // (m, d): per-edge representations h_{e|v}
  Tensor alpha;    // (1, m): aggregation weights
};

// Symmetric multi-head self-attention over the m per-edge [CLS] states;
// bare attention (no residual, no FFN).
Tensor cross_edge_mha(const Model& m, size_t layer, const Tensor& cls_states,
                      const ForwardHooks& hooks = {});

// alpha = softmax(h_edges * w_s * z0_v^T), h_v = alpha^T h_edges.
std::pair<Tensor, Tensor> aggregate(const Tensor& h_edges, const Tensor& w_s,
                                    const Tensor& z0_v);

// Full node encoding: each edge runs its own branch; augmented layers see
// (center token, neighbor token, cross-edge token) per the flags; per-edge
// readout then attention aggregation. ValueError on an empty ego.
NodeEncodingOutput encode_node(const Model& m, const EgoBatch& ego,
                               const VirtualTokenFlags& flags = {},
                               Rng* dropout_rng = nullptr);

// Stand-in for isolated nodes: the last layer's map of z^(0). Training and
// evaluation use this where encode_node would reject an empty ego.
Tensor fallback_node_embedding(const Model& m, int node_row);

// Network node index -> embedding row. Identity when the model was built
// from this network's node order.
using NodeRowMap = std::function<int(int)>;

// Samples up to cap incident edges of `center` (optionally excluding one
// target edge), tokenizes their documents, and resolves embedding rows.
EgoBatch make_ego_batch(const TextualEdgeNetwork& network,
                        const Vocabulary& vocab, size_t max_seq_len,
                        int center, size_t cap, Rng& rng,
                        int exclude_edge = -1, const NodeRowMap& row_map = {});

}  // namespace edgeformer
