#include "edgeformer/edge_encoder.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace edgeformer {

namespace {

// Multi-head attention: queries from q_in, keys/values from kv_in, kv_mask
// marking attendable key rows. Bare attention; residual structure is the
// caller's.
Tensor mha(const Model& m, size_t layer, const char* which, const Tensor& q_in,
           const Tensor& kv_in, const std::vector<uint8_t>& kv_mask,
           const ForwardHooks& hooks) {
  AttentionParams ap = m.attention(layer, which);
  size_t nq = q_in.rows(), nkv = kv_in.rows();
  if (kv_mask.size() != nkv) {
    throw ShapeError("attention: mask length " + std::to_string(kv_mask.size()) +
                     " for " + std::to_string(nkv) + " key rows");
  }
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(m.config.head_dim()));
  std::vector<uint8_t> tiled(nq * nkv);
  for (size_t i = 0; i < nq; ++i) {
    std::copy(kv_mask.begin(), kv_mask.end(), tiled.begin() + i * nkv);
  }
  std::vector<Tensor> heads;
  heads.reserve(m.config.heads);
  for (size_t h = 0; h < m.config.heads; ++h) {
    Tensor q = linear(q_in, ap.q_w[h], ap.q_b[h]);
    Tensor k = linear(kv_in, ap.k_w[h], ap.k_b[h]);
    Tensor v = linear(kv_in, ap.v_w[h], ap.v_b[h]);
    Tensor scores = scale(matmul(q, transpose(k)), inv_scale);
    Tensor probs = softmax_masked(scores, tiled);
    if (hooks.trace != nullptr) {
      AttentionTraceEntry entry;
      entry.layer = layer;
      entry.head = h;
      entry.rows = nq;
      entry.cols = nkv;
      entry.probs.assign(probs.data(), probs.data() + probs.numel());
      hooks.trace->push_back(std::move(entry));
    }
    heads.push_back(matmul(probs, v));
  }
  Tensor cat = m.config.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(cat, ap.out_w, ap.out_b);
}

Tensor maybe_dropout(const Tensor& x, const Model& m, const ForwardHooks& hooks) {
  if (m.config.dropout == 0.0) return x;
  if (hooks.dropout_rng == nullptr) {
    throw ValueError("dropout is enabled but no rng was supplied");
  }
  return dropout(x, m.config.dropout, *hooks.dropout_rng);
}

// Residual block shared by vanilla and augmented layers: the attention output
// is added to `residual` (the query-side input), normalized, then FFN'd.
Tensor transformer_block(const Model& m, size_t layer, const Tensor& residual,
                         const Tensor& attn_out, const ForwardHooks& hooks) {
  std::string base = "layer" + std::to_string(layer) + ".";
  Tensor h1 = layer_norm(add(residual, maybe_dropout(attn_out, m, hooks)),
                         m.p(base + "ln1.gain"), m.p(base + "ln1.bias"));
  Tensor ffn = linear(gelu(linear(h1, m.p(base + "ffn.w1"), m.p(base + "ffn.b1"))),
                      m.p(base + "ffn.w2"), m.p(base + "ffn.b2"));
  return layer_norm(add(h1, maybe_dropout(ffn, m, hooks)),
                    m.p(base + "ln2.gain"), m.p(base + "ln2.bias"));
}

}  // namespace

Tensor token_input(const Model& m, const TokenSequence& tokens) {
  Tensor tok = embedding_lookup(m.p("tok_emb"), tokens.ids);
  return add(tok, m.p("pos_emb"));
}

Tensor vanilla_layer(const Model& m, size_t layer, const Tensor& H,
                     const std::vector<uint8_t>& mask,
                     const ForwardHooks& hooks) {
  if (H.rank() != 2 || H.rows() != mask.size()) {
    throw ShapeError("vanilla_layer: " + std::to_string(mask.size()) +
                     " mask entries for H " + shape_str(H.shape()));
  }
  Tensor attn = mha(m, layer, "attn", H, H, mask, hooks);
  return transformer_block(m, layer, H, attn, hooks);
}

std::pair<Tensor, Tensor> virtual_node_tokens(const Model& m, size_t layer,
                                              int vi_row, int vj_row) {
  const Tensor& table = m.p("node_emb");
  Tensor z0 = embedding_lookup(table, {vi_row, vj_row});
  Tensor z = matmul(z0, m.node_proj(layer));
  return {slice_rows(z, 0, 1), slice_rows(z, 1, 1)};
}

Tensor augmented_layer(const Model& m, size_t layer, const Tensor& H,
                       const std::vector<uint8_t>& mask,
                       const std::vector<Tensor>& extra_tokens,
                       const ForwardHooks& hooks,
                       const std::vector<Tensor>& extra_queries) {
  if (H.rank() != 2 || H.rows() != mask.size()) {
    throw ShapeError("augmented_layer: " + std::to_string(mask.size()) +
                     " mask entries for H " + shape_str(H.shape()));
  }
  size_t d = m.config.d_model;
  for (const Tensor& t : extra_tokens) {
    if (t.rank() != 2 || t.rows() != 1 || t.cols() != d) {
      throw ShapeError("augmented_layer: extra token shape " +
                       shape_str(t.shape()) + ", expected (1, " +
                       std::to_string(d) + ")");
    }
  }
  Tensor kv = H;
  std::vector<uint8_t> kv_mask = mask;
  if (!extra_tokens.empty()) {
    std::vector<Tensor> parts = extra_tokens;
    parts.push_back(H);
    kv = concat_rows(parts);
    kv_mask.assign(extra_tokens.size(), 1);
    kv_mask.insert(kv_mask.end(), mask.begin(), mask.end());
  }
  Tensor q_in = H;
  if (!extra_queries.empty()) {
    std::vector<Tensor> parts = extra_queries;
    parts.push_back(H);
    q_in = concat_rows(parts);
  }
  Tensor attn = mha(m, layer, "attn", q_in, kv, kv_mask, hooks);
  return transformer_block(m, layer, q_in, attn, hooks);
}

EdgeEncodingOutput encode_edge(const Model& m, const TokenSequence& tokens,
                               int vi_row, int vj_row,
                               const VirtualTokenFlags& flags, bool want_trace,
                               Rng* dropout_rng) {
  EdgeEncodingOutput out;
  ForwardHooks hooks;
  hooks.trace = want_trace ? &out.trace : nullptr;
  hooks.dropout_rng = dropout_rng;

  Tensor H = vanilla_layer(m, 0, token_input(m, tokens), tokens.mask, hooks);
  out.layer_states.push_back(H);
  for (size_t l = 1; l < m.config.layers; ++l) {
    std::vector<Tensor> extras;
    if (flags.center || flags.neighbor) {
      auto [z_i, z_j] = virtual_node_tokens(m, l, vi_row, vj_row);
      if (flags.center) extras.push_back(z_i);
      if (flags.neighbor) extras.push_back(z_j);
    }
    H = augmented_layer(m, l, H, tokens.mask, extras, hooks);
    out.layer_states.push_back(H);
  }
  out.h_e = slice_rows(H, 0, 1);
  return out;
}

std::vector<AttentionTraceEntry> attention_trace(const Model& m,
                                                 const TokenSequence& tokens,
                                                 int vi_row, int vj_row,
                                                 const VirtualTokenFlags& flags) {
  return encode_edge(m, tokens, vi_row, vj_row, flags, true).trace;
}

std::string trace_to_jsonl(const std::vector<AttentionTraceEntry>& trace) {
  std::string out;
  for (const AttentionTraceEntry& e : trace) {
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < e.rows; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (size_t j = 0; j < e.cols; ++j) row.push_back(e.probs[i * e.cols + j]);
      rows.push_back(std::move(row));
    }
    nlohmann::json obj = {{"layer", e.layer}, {"head", e.head}, {"probs", rows}};
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace edgeformer
