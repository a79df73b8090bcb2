#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeformer/edge_encoder.hpp"
#include "edgeformer/errors.hpp"
#include "edgeformer/model.hpp"
#include "support/builders.hpp"
#include "support/gradcheck.hpp"
#include "support/reference.hpp"

namespace ef = edgeformer;
using testsupport::random_tokens;
using testsupport::tiny_model;
using testsupport::TinyModelSpec;

namespace {

ef::Model small_model(size_t heads, size_t d_model, size_t max_seq_len,
                      uint64_t seed = 3) {
  ef::ModelConfig c;
  c.layers = 2;
  c.heads = heads;
  c.d_model = d_model;
  c.d_node = 2;
  c.max_seq_len = max_seq_len;
  c.vocab_size = 8;
  c.num_nodes = 3;
  return ef::init_model(c, {"a", "b", "c"}, seed);
}

// Brute-force attention probabilities for one (layer, head), matching the
// trace layout: one row per query, one column per key.
ref::Mat ref_probs(const ef::Model& m, size_t layer, size_t head,
                   const ref::Mat& q_in, const ref::Mat& kv_in,
                   const std::vector<uint8_t>& col_mask) {
  ef::AttentionParams ap = m.attention(layer, "attn");
  ref::Mat q = ref::affine(q_in, ref::from_tensor(ap.q_w[head]),
                           ref::from_tensor(ap.q_b[head]));
  ref::Mat k = ref::affine(kv_in, ref::from_tensor(ap.k_w[head]),
                           ref::from_tensor(ap.k_b[head]));
  ref::Mat scores = ref::matmul(q, ref::transpose(k));
  double inv = 1.0 / std::sqrt(static_cast<double>(m.config.head_dim()));
  for (double& s : scores.a) s *= inv;
  return ref::softmax_cols(scores, col_mask);
}

double max_abs(const ef::Tensor& a, const ef::Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  }
  return worst;
}

}  // namespace

TEST(TokenInput, AddsTokenAndPositionEmbeddings) {
  ef::Model m = tiny_model();
  ef::Rng rng(1);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 4);
  ef::Tensor h = ef::token_input(m, t);
  ref::Mat want = ref::token_input(m, t);
  EXPECT_LT(ref::max_abs_diff(want, h), 1e-15);
}

TEST(VanillaLayer, SingleRealTokenAttendsOnlyToItself) {
  ef::Model m = small_model(2, 4, 4);
  ef::TokenSequence t;
  t.ids = {ef::Vocabulary::kCls, 0, 0, 0};
  t.mask = {1, 0, 0, 0};

  std::vector<ef::AttentionTraceEntry> trace;
  ef::ForwardHooks hooks;
  hooks.trace = &trace;
  ef::Tensor out = ef::vanilla_layer(m, 0, ef::token_input(m, t), t.mask, hooks);
  EXPECT_EQ(out.rows(), 4u);

  ASSERT_EQ(trace.size(), m.config.heads);
  for (const ef::AttentionTraceEntry& e : trace) {
    // Row 0 is the only real query; the only unmasked key gets weight 1.
    EXPECT_DOUBLE_EQ(e.probs[0], 1.0);
    for (size_t j = 1; j < e.cols; ++j) EXPECT_EQ(e.probs[j], 0.0);
  }
}

TEST(VanillaLayer, MatchesBruteForceAttentionOracle) {
  // d=4, one head, three real tokens.
  ef::Model m = small_model(1, 4, 3);
  ef::TokenSequence t;
  t.ids = {ef::Vocabulary::kCls, 4, 5};
  t.mask = {1, 1, 1};

  ef::Tensor out = ef::vanilla_layer(m, 0, ef::token_input(m, t), t.mask);
  ref::Mat in = ref::token_input(m, t);
  ref::Mat want = ref::transformer_layer(m, 0, in, in, t.mask);
  EXPECT_LT(ref::max_abs_diff(want, out), 1e-10);
}

TEST(VanillaLayer, PaddedRowPerturbationLeavesRealRowsUnchanged) {
  ef::Model m = tiny_model();
  ef::Rng rng(2);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 4);
  ASSERT_EQ(t.mask[6], 0);

  ef::Tensor h0 = ef::token_input(m, t);
  std::vector<double> bumped(h0.data(), h0.data() + h0.numel());
  for (size_t c = 0; c < h0.cols(); ++c) bumped[6 * h0.cols() + c] += 3.5;
  ef::Tensor h1 = ef::Tensor::from(bumped, h0.shape());

  ef::Tensor out0 = ef::vanilla_layer(m, 0, h0, t.mask);
  ef::Tensor out1 = ef::vanilla_layer(m, 0, h1, t.mask);
  for (size_t r = 0; r < out0.rows(); ++r) {
    if (!t.mask[r]) continue;
    for (size_t c = 0; c < out0.cols(); ++c) {
      EXPECT_NEAR(out0.at(r * out0.cols() + c), out1.at(r * out1.cols() + c),
                  1e-12);
    }
  }
}

TEST(VirtualNodeTokens, ZeroBaseEmbeddingYieldsZeroToken) {
  ef::Model m = small_model(2, 4, 4);
  ef::Tensor table = m.p("node_emb");
  for (size_t c = 0; c < table.cols(); ++c) table.mut_data()[c] = 0.0;
  auto [zi, zj] = ef::virtual_node_tokens(m, 1, 0, 1);
  for (size_t c = 0; c < zi.numel(); ++c) EXPECT_EQ(zi.at(c), 0.0);
  for (size_t c = 0; c < zj.numel(); ++c) EXPECT_NE(zj.at(c), 0.0);
}

TEST(VirtualNodeTokens, IdentityProjectionZeroPadsBaseEmbedding) {
  ef::Model m = small_model(2, 4, 4);
  // node_proj rows are d_node-indexed; set to [I | 0].
  ef::Tensor proj = m.node_proj(1);
  ASSERT_EQ(proj.shape(), (std::vector<size_t>{2, 4}));
  for (size_t r = 0; r < 2; ++r) {
    for (size_t c = 0; c < 4; ++c) {
      proj.mut_data()[r * 4 + c] = (r == c) ? 1.0 : 0.0;
    }
  }
  auto [zi, zj] = ef::virtual_node_tokens(m, 1, 2, 0);
  const ef::Tensor& table = m.p("node_emb");
  for (size_t c = 0; c < 2; ++c) {
    EXPECT_DOUBLE_EQ(zi.at(c), table.at(2 * 2 + c));
  }
  EXPECT_EQ(zi.at(2), 0.0);
  EXPECT_EQ(zi.at(3), 0.0);
}

TEST(VirtualNodeTokens, MatchesDirectMatrixVectorProduct) {
  ef::Model m = tiny_model();
  auto [zi, zj] = ef::virtual_node_tokens(m, 1, 3, 1);
  ref::Mat want_i = ref::virtual_token(m, 1, 3);
  ref::Mat want_j = ref::virtual_token(m, 1, 1);
  EXPECT_LT(ref::max_abs_diff(want_i, zi), 1e-12);
  EXPECT_LT(ref::max_abs_diff(want_j, zj), 1e-12);
}

TEST(AugmentedLayer, OutputRowCountIgnoresExtraTokenCount) {
  ef::Model m = tiny_model();
  ef::Rng rng(4);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  ef::Tensor H = ef::vanilla_layer(m, 0, ef::token_input(m, t), t.mask);

  auto [zi, zj] = ef::virtual_node_tokens(m, 1, 0, 1);
  ef::Tensor extra3 = ef::Tensor::full({1, 8}, 0.25);
  for (const std::vector<ef::Tensor>& extras :
       std::vector<std::vector<ef::Tensor>>{
           {}, {zi, zj}, {zi, zj, extra3}}) {
    ef::Tensor out = ef::augmented_layer(m, 1, H, t.mask, extras);
    EXPECT_EQ(out.rows(), H.rows());
    EXPECT_EQ(out.cols(), H.cols());
  }

  ef::Tensor bad = ef::Tensor::full({1, 4}, 1.0);  // wrong width
  EXPECT_THROW(ef::augmented_layer(m, 1, H, t.mask, {bad}), ef::ShapeError);
}

TEST(AugmentedLayer, NoExtraTokensEqualsVanillaLayer) {
  ef::Model m = tiny_model();
  ef::Rng rng(5);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  ef::Tensor H = ef::vanilla_layer(m, 0, ef::token_input(m, t), t.mask);
  ef::Tensor plain = ef::vanilla_layer(m, 1, H, t.mask);
  ef::Tensor aug = ef::augmented_layer(m, 1, H, t.mask, {});
  EXPECT_LE(max_abs(plain, aug), 1e-12);
}

TEST(AugmentedLayer, MatchesBruteForceOverAugmentedKeys) {
  // d=4, two heads, three real tokens, two extra tokens.
  ef::Model m = small_model(2, 4, 3);
  ef::TokenSequence t;
  t.ids = {ef::Vocabulary::kCls, 4, 6};
  t.mask = {1, 1, 1};
  ef::Tensor H = ef::vanilla_layer(m, 0, ef::token_input(m, t), t.mask);
  auto [zi, zj] = ef::virtual_node_tokens(m, 1, 0, 2);
  ef::Tensor out = ef::augmented_layer(m, 1, H, t.mask, {zi, zj});

  ref::Mat h = ref::from_tensor(H);
  ref::Mat kv = ref::concat_rows(
      {ref::virtual_token(m, 1, 0), ref::virtual_token(m, 1, 2), h});
  std::vector<uint8_t> col_mask = {1, 1, 1, 1, 1};
  ref::Mat want = ref::transformer_layer(m, 1, h, kv, col_mask);
  EXPECT_LT(ref::max_abs_diff(want, out), 1e-10);
}

TEST(EncodeEdge, MatchesTapeFreeOracle) {
  // T=2, d=8, two heads, four text tokens after [CLS].
  ef::Model m = tiny_model();
  ef::Rng rng(6);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);

  ef::EdgeEncodingOutput out = ef::encode_edge(m, t, 1, 4);
  ref::Mat want = ref::encode_edge(m, t, 1, 4, {});
  ASSERT_EQ(out.layer_states.size(), m.config.layers);
  EXPECT_LT(ref::max_abs_diff(want, out.layer_states.back()), 1e-10);
  EXPECT_LT(ref::max_abs_diff(ref::slice_rows(want, 0, 1), out.h_e), 1e-10);

  // Same edge, same parameters -> bit-identical representation.
  ef::EdgeEncodingOutput again = ef::encode_edge(m, t, 1, 4);
  EXPECT_EQ(max_abs(out.h_e, again.h_e), 0.0);
}

TEST(EncodeEdge, MatchesOracleAcrossThreeLayers) {
  TinyModelSpec spec;
  spec.layers = 3;
  ef::Model m = tiny_model(spec);
  ef::Rng rng(16);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 6);
  ef::EdgeEncodingOutput out = ef::encode_edge(m, t, 0, 3);
  ref::Mat want = ref::encode_edge(m, t, 0, 3, {});
  EXPECT_LT(ref::max_abs_diff(ref::slice_rows(want, 0, 1), out.h_e), 1e-10);
}

TEST(EncodeEdge, DisabledVirtualTokensReproducePlainTransformer) {
  ef::Model m = tiny_model();
  ef::Rng rng(7);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);

  ef::VirtualTokenFlags off;
  off.center = false;
  off.neighbor = false;
  ef::EdgeEncodingOutput out = ef::encode_edge(m, t, 0, 1, off);

  // Plain stack: every layer vanilla over the text alone.
  ef::Tensor H = ef::token_input(m, t);
  for (size_t l = 0; l < m.config.layers; ++l) {
    H = ef::vanilla_layer(m, l, H, t.mask);
  }
  EXPECT_LE(max_abs(ef::slice_rows(H, 0, 1), out.h_e), 1e-12);

  ref::Mat plain = ref::encode_plain(m, t);
  EXPECT_LT(ref::max_abs_diff(ref::slice_rows(plain, 0, 1), out.h_e), 1e-10);
}

TEST(EncodeEdge, EachVirtualTokenFlagChangesOutput) {
  ef::Model m = tiny_model();
  ef::Rng rng(8);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  ef::VirtualTokenFlags both;
  ef::VirtualTokenFlags no_center = both;
  no_center.center = false;
  ef::VirtualTokenFlags no_neighbor = both;
  no_neighbor.neighbor = false;

  ef::Tensor base = ef::encode_edge(m, t, 0, 1, both).h_e;
  EXPECT_GT(max_abs(base, ef::encode_edge(m, t, 0, 1, no_center).h_e), 1e-6);
  EXPECT_GT(max_abs(base, ef::encode_edge(m, t, 0, 1, no_neighbor).h_e), 1e-6);
}

TEST(EncodeEdge, UnrelatedNodePerturbationLeavesEdgeUnchanged) {
  ef::Model m = tiny_model();
  ef::Rng rng(9);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  ef::Tensor before = ef::encode_edge(m, t, 0, 1).h_e;

  ef::Tensor table = m.p("node_emb");
  for (size_t c = 0; c < table.cols(); ++c) {
    table.mut_data()[2 * table.cols() + c] += 7.0;  // node 2 not an endpoint
  }
  ef::Tensor after = ef::encode_edge(m, t, 0, 1).h_e;
  EXPECT_EQ(max_abs(before, after), 0.0);

  for (size_t c = 0; c < table.cols(); ++c) {
    table.mut_data()[0 * table.cols() + c] += 0.1;  // endpoint moves the edge
  }
  EXPECT_GT(max_abs(before, ef::encode_edge(m, t, 0, 1).h_e), 1e-8);
}

TEST(EncodeEdge, GradientFlowsToBaseNodeEmbedding) {
  ef::Model m = tiny_model();
  ef::Rng rng(10);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  ef::Tensor table = m.p("node_emb");

  auto loss = [&]() { return ef::sum(ef::encode_edge(m, t, 0, 1).h_e); };
  EXPECT_LT(gradcheck::check_tensor(table, loss), 1e-4);

  // Analytic gradient is live on endpoint rows, dead elsewhere.
  ef::Tape tape;
  {
    ef::TapeScope scope(tape);
    ef::backward(loss());
  }
  ASSERT_TRUE(table.has_grad());
  double endpoint = 0.0, elsewhere = 0.0;
  for (size_t c = 0; c < table.cols(); ++c) {
    endpoint += std::abs(table.grad()[0 * table.cols() + c]);
    endpoint += std::abs(table.grad()[1 * table.cols() + c]);
    elsewhere += std::abs(table.grad()[2 * table.cols() + c]);
  }
  EXPECT_GT(endpoint, 1e-8);
  EXPECT_EQ(elsewhere, 0.0);
  table.clear_grad();
}

TEST(AttentionTrace, RowsSumToOneAndMaskedKeysAreExactlyZero) {
  ef::Model m = tiny_model();
  ef::Rng rng(11);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  std::vector<ef::AttentionTraceEntry> trace = ef::attention_trace(m, t, 0, 1);
  ASSERT_EQ(trace.size(), m.config.layers * m.config.heads);

  for (const ef::AttentionTraceEntry& e : trace) {
    size_t extras = e.layer == 0 ? 0 : 2;  // virtual keys lead the columns
    ASSERT_EQ(e.cols, extras + m.config.max_seq_len);
    ASSERT_EQ(e.rows, m.config.max_seq_len);
    for (size_t r = 0; r < e.rows; ++r) {
      double total = 0.0;
      for (size_t c = 0; c < e.cols; ++c) {
        double p = e.probs[r * e.cols + c];
        bool masked = c >= extras && !t.mask[c - extras];
        if (masked) {
          EXPECT_EQ(p, 0.0);
        } else {
          EXPECT_GE(p, 0.0);
        }
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(AttentionTrace, MatchesBruteForceProbabilities) {
  ef::Model m = tiny_model();
  ef::Rng rng(12);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);
  std::vector<ef::AttentionTraceEntry> trace = ef::attention_trace(m, t, 2, 4);

  ref::Mat in0 = ref::token_input(m, t);
  ref::Mat in1 = ref::transformer_layer(m, 0, in0, in0, t.mask);
  ref::Mat kv1 = ref::concat_rows(
      {ref::virtual_token(m, 1, 2), ref::virtual_token(m, 1, 4), in1});
  std::vector<uint8_t> mask1 = {1, 1};
  mask1.insert(mask1.end(), t.mask.begin(), t.mask.end());

  for (const ef::AttentionTraceEntry& e : trace) {
    ref::Mat want = e.layer == 0
                        ? ref_probs(m, 0, e.head, in0, in0, t.mask)
                        : ref_probs(m, 1, e.head, in1, kv1, mask1);
    ASSERT_EQ(want.rows, e.rows);
    ASSERT_EQ(want.cols, e.cols);
    double worst = 0.0;
    for (size_t i = 0; i < want.a.size(); ++i) {
      worst = std::max(worst, std::abs(want.a[i] - e.probs[i]));
    }
    EXPECT_LT(worst, 1e-10) << "layer " << e.layer << " head " << e.head;
  }
}

TEST(AttentionTrace, JsonlExportParsesWithExpectedShape) {
  ef::Model m = tiny_model();
  ef::Rng rng(13);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 4);
  std::vector<ef::AttentionTraceEntry> trace = ef::attention_trace(m, t, 0, 1);
  std::string jsonl = ef::trace_to_jsonl(trace);

  std::istringstream lines(jsonl);
  std::string line;
  size_t count = 0;
  while (std::getline(lines, line)) {
    nlohmann::json obj = nlohmann::json::parse(line);
    ASSERT_TRUE(obj.contains("layer"));
    ASSERT_TRUE(obj.contains("head"));
    ASSERT_TRUE(obj.contains("probs"));
    ASSERT_EQ(obj["probs"].size(), trace[count].rows);
    ASSERT_EQ(obj["probs"][0].size(), trace[count].cols);
    EXPECT_NEAR(obj["probs"][0][0].get<double>(), trace[count].probs[0], 1e-15);
    ++count;
  }
  EXPECT_EQ(count, trace.size());
}

TEST(EncodeEdge, DropoutRequiresRngAndIsDeterministicPerStream) {
  TinyModelSpec spec;
  ef::Model m = tiny_model(spec);
  ef::Model dropout_m = m;
  dropout_m.config.dropout = 0.3;
  ef::Rng rng(14);
  ef::TokenSequence t = random_tokens(rng, m.config.vocab_size, 8, 5);

  EXPECT_THROW(ef::encode_edge(dropout_m, t, 0, 1), ef::ValueError);

  ef::Rng d1(99), d2(99), d3(100);
  ef::Tensor a = ef::encode_edge(dropout_m, t, 0, 1, {}, false, &d1).h_e;
  ef::Tensor b = ef::encode_edge(dropout_m, t, 0, 1, {}, false, &d2).h_e;
  ef::Tensor c = ef::encode_edge(dropout_m, t, 0, 1, {}, false, &d3).h_e;
  EXPECT_EQ(max_abs(a, b), 0.0);
  EXPECT_GT(max_abs(a, c), 1e-8);
}
