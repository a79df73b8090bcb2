#include "edgeformer/node_encoder.hpp"

#include <cmath>

namespace edgeformer {

namespace {

// Reuses the per-head projection machinery of the augmented layers but with
// the layer's dedicated cross-edge weights.
Tensor bare_mha(const Model& m, size_t layer, const char* which,
                const Tensor& x, const ForwardHooks& hooks) {
  AttentionParams ap = m.attention(layer, which);
  size_t n = x.rows();
  std::vector<uint8_t> mask(n * n, 1);
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(m.config.head_dim()));
  std::vector<Tensor> heads;
  heads.reserve(m.config.heads);
  for (size_t h = 0; h < m.config.heads; ++h) {
    Tensor q = linear(x, ap.q_w[h], ap.q_b[h]);
    Tensor k = linear(x, ap.k_w[h], ap.k_b[h]);
    Tensor v = linear(x, ap.v_w[h], ap.v_b[h]);
    Tensor probs = softmax_masked(scale(matmul(q, transpose(k)), inv_scale), mask);
    if (hooks.trace != nullptr) {
      AttentionTraceEntry entry;
      entry.layer = layer;
      entry.head = h;
      entry.rows = n;
      entry.cols = n;
      entry.probs.assign(probs.data(), probs.data() + probs.numel());
      hooks.trace->push_back(std::move(entry));
    }
    heads.push_back(matmul(probs, v));
  }
  Tensor cat = m.config.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(cat, ap.out_w, ap.out_b);
}

}  // namespace

Tensor cross_edge_mha(const Model& m, size_t layer, const Tensor& cls_states,
                      const ForwardHooks& hooks) {
  if (cls_states.rank() != 2 || cls_states.cols() != m.config.d_model) {
    throw ShapeError("cross_edge_mha: expected (m, " +
                     std::to_string(m.config.d_model) + "), got " +
                     shape_str(cls_states.shape()));
  }
  if (cls_states.rows() < 1) {
    throw ShapeError("cross_edge_mha: at least one edge state required");
  }
  return bare_mha(m, layer, "cross", cls_states, hooks);
}

std::pair<Tensor, Tensor> aggregate(const Tensor& h_edges, const Tensor& w_s,
                                    const Tensor& z0_v) {
  size_t n_edges = h_edges.rows();
  if (n_edges < 1) throw ShapeError("aggregate: at least one edge required");
  Tensor scores = matmul(matmul(h_edges, w_s), transpose(z0_v));  // (m, 1)
  std::vector<uint8_t> mask(n_edges, 1);
  Tensor alpha = softmax_masked(transpose(scores), mask);  // (1, m)
  Tensor h_v = matmul(alpha, h_edges);                     // (1, d)
  return {alpha, h_v};
}

NodeEncodingOutput encode_node(const Model& m, const EgoBatch& ego,
                               const VirtualTokenFlags& flags,
                               Rng* dropout_rng) {
  size_t n_edges = ego.edges.size();
  if (n_edges == 0) {
    throw ValueError("encode_node: empty ego network for node row " +
                     std::to_string(ego.center_row));
  }
  ForwardHooks hooks;
  hooks.dropout_rng = dropout_rng;
  size_t layers = m.config.layers;
  bool neighbor_readout = m.config.readout == "neighbor_token";

  Tensor z0_center = embedding_lookup(m.p("node_emb"), {ego.center_row});

  std::vector<Tensor> H(n_edges);
  std::vector<Tensor> h_edge_rows(n_edges);
  for (size_t e = 0; e < n_edges; ++e) {
    H[e] = vanilla_layer(m, 0, token_input(m, ego.edges[e].tokens),
                         ego.edges[e].tokens.mask, hooks);
  }

  for (size_t l = 1; l < layers; ++l) {
    Tensor hbar;
    if (flags.cross_edge) {
      std::vector<Tensor> cls;
      cls.reserve(n_edges);
      for (size_t e = 0; e < n_edges; ++e) cls.push_back(slice_rows(H[e], 0, 1));
      Tensor cls_mat = n_edges == 1 ? cls[0] : concat_rows(cls);
      hbar = cross_edge_mha(m, l, cls_mat, hooks);
    }
    Tensor z_center_l;
    if (flags.center) z_center_l = matmul(z0_center, m.node_proj(l));
    bool readout_layer = neighbor_readout && l == layers - 1;
    for (size_t e = 0; e < n_edges; ++e) {
      Tensor z_nb_l;
      if (flags.neighbor || readout_layer) {
        Tensor z0_nb = embedding_lookup(m.p("node_emb"), {ego.edges[e].neighbor_row});
        z_nb_l = matmul(z0_nb, m.node_proj(l));
      }
      std::vector<Tensor> extras;
      if (flags.center) extras.push_back(z_center_l);
      if (flags.neighbor) extras.push_back(z_nb_l);
      if (flags.cross_edge) extras.push_back(slice_rows(hbar, e, 1));
      std::vector<Tensor> extra_queries;
      if (readout_layer) extra_queries.push_back(z_nb_l);
      Tensor out = augmented_layer(m, l, H[e], ego.edges[e].tokens.mask, extras,
                                   hooks, extra_queries);
      if (readout_layer) {
        h_edge_rows[e] = slice_rows(out, 0, 1);
        H[e] = slice_rows(out, 1, out.rows() - 1);
      } else {
        H[e] = out;
      }
    }
  }
  if (!neighbor_readout) {
    for (size_t e = 0; e < n_edges; ++e) h_edge_rows[e] = slice_rows(H[e], 0, 1);
  }

  NodeEncodingOutput out;
  out.h_edges = n_edges == 1 ? h_edge_rows[0] : concat_rows(h_edge_rows);
  if (m.config.aggregation == "mean") {
    out.alpha = Tensor::full({1, n_edges}, 1.0 / static_cast<double>(n_edges));
    out.h_v = matmul(out.alpha, out.h_edges);
  } else {
    auto [alpha, h_v] = aggregate(out.h_edges, m.p("score.w"), z0_center);
    out.alpha = alpha;
    out.h_v = h_v;
  }
  return out;
}

Tensor fallback_node_embedding(const Model& m, int node_row) {
  Tensor z0 = embedding_lookup(m.p("node_emb"), {node_row});
  return matmul(z0, m.node_proj(m.config.layers - 1));
}

EgoBatch make_ego_batch(const TextualEdgeNetwork& network,
                        const Vocabulary& vocab, size_t max_seq_len,
                        int center, size_t cap, Rng& rng, int exclude_edge,
                        const NodeRowMap& row_map) {
  auto to_row = [&](int node) { return row_map ? row_map(node) : node; };
  EgoBatch ego;
  ego.center_row = to_row(center);
  for (int e : neighbor_edges_excluding(network, center, cap, rng, exclude_edge)) {
    EgoEdge edge;
    edge.edge_index = e;
    edge.tokens = tokenize(vocab, network.edge_text(e), max_seq_len);
    edge.neighbor_row = to_row(network.other_endpoint(e, center));
    ego.edges.push_back(std::move(edge));
  }
  return ego;
}

}  // namespace edgeformer
