#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeformer/edge_encoder.hpp"
#include "edgeformer/errors.hpp"
#include "edgeformer/metrics.hpp"
#include "edgeformer/synth.hpp"
#include "support/builders.hpp"
#include "support/reference.hpp"

namespace ef = edgeformer;
using testsupport::tiny_model;
using testsupport::TinyModelSpec;

TEST(F1Scores, PerfectPredictorScoresOne) {
  ef::F1Result r = ef::f1_scores({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  EXPECT_DOUBLE_EQ(r.macro, 1.0);
  EXPECT_DOUBLE_EQ(r.micro, 1.0);
  for (double f : r.per_class) EXPECT_DOUBLE_EQ(f, 1.0);
}

TEST(F1Scores, HandConfusionMatrixCase) {
  // pred [0,0,1,2] vs gold [0,1,1,2]: class 0 P=1/2 R=1 F1=2/3;
  // class 1 P=1 R=1/2 F1=2/3; class 2 F1=1; macro 7/9; micro = accuracy 3/4.
  ef::F1Result r = ef::f1_scores({0, 0, 1, 2}, {0, 1, 1, 2}, 3);
  ASSERT_EQ(r.per_class.size(), 3u);
  EXPECT_NEAR(r.per_class[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.per_class[1], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.per_class[2], 1.0, 1e-12);
  EXPECT_NEAR(r.macro, 7.0 / 9.0, 1e-12);
  EXPECT_NEAR(r.micro, 0.75, 1e-12);

  ref::F1Oracle want = ref::f1_confusion({0, 0, 1, 2}, {0, 1, 1, 2}, 3);
  EXPECT_NEAR(r.macro, want.macro, 1e-12);
  EXPECT_NEAR(r.micro, want.micro, 1e-12);
}

TEST(F1Scores, MicroEqualsAccuracyForSingleLabel) {
  ef::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 5 + rng.uniform_int(40);
    std::vector<int> pred(n), gold(n);
    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.uniform_int(4));
      gold[i] = static_cast<int>(rng.uniform_int(4));
      if (pred[i] == gold[i]) ++correct;
    }
    ef::F1Result r = ef::f1_scores(pred, gold, 4);
    EXPECT_NEAR(r.micro, static_cast<double>(correct) / static_cast<double>(n),
                1e-15);
  }
}

TEST(F1Scores, UnseenClassScoresZeroAndErrorsPropagate) {
  ef::F1Result r = ef::f1_scores({0, 1}, {0, 1}, 3);
  EXPECT_EQ(r.per_class[2], 0.0);
  EXPECT_THROW(ef::f1_scores({0}, {0, 1}, 2), ef::ShapeError);
  EXPECT_THROW(ef::f1_scores({0, 2}, {0, 1}, 2), ef::ValueError);
  EXPECT_THROW(ef::f1_scores({0, -1}, {0, 1}, 2), ef::ValueError);
}

TEST(RankOfPositive, ClosedFormsAndPessimisticTies) {
  EXPECT_EQ(ef::rank_of_positive({5.0, 1.0, 2.0}), 1u);
  EXPECT_EQ(ef::rank_of_positive({2.0, 2.0, 1.0}), 2u);  // tie counts above
  EXPECT_EQ(ef::rank_of_positive({1.0, 2.0, 3.0}), 3u);
  EXPECT_EQ(ef::rank_of_positive({7.0}), 1u);
  EXPECT_THROW(ef::rank_of_positive({}), ef::ValueError);
}

TEST(RankOfPositive, MatchesSortingOracleOnRandomPanels) {
  ef::Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> scores(10);
    for (double& s : scores) s = rng.uniform();
    if (trial % 7 == 0) scores[3] = scores[0];  // exercise exact ties
    EXPECT_EQ(ef::rank_of_positive(scores), ref::rank_sorted(scores));
  }
}

TEST(MrrNdcg, ClosedForms) {
  auto [mrr1, ndcg1] = ef::mrr_ndcg({1, 1, 1});
  EXPECT_DOUBLE_EQ(mrr1, 1.0);
  EXPECT_DOUBLE_EQ(ndcg1, 1.0);

  auto [mrr2, ndcg2] = ef::mrr_ndcg({2});
  EXPECT_DOUBLE_EQ(mrr2, 0.5);
  EXPECT_NEAR(ndcg2, 1.0 / std::log2(3.0), 1e-12);
  EXPECT_NEAR(ndcg2, 0.6309, 5e-5);

  EXPECT_THROW(ef::mrr_ndcg({}), ef::ValueError);
  EXPECT_THROW(ef::mrr_ndcg({1, 0}), ef::ValueError);
}

TEST(MrrNdcg, MatchesDirectRecomputationOnThousandQueries) {
  ef::Rng rng(3);
  std::vector<size_t> ranks(1000);
  for (size_t& r : ranks) r = 1 + rng.uniform_int(100);
  auto [mrr, ndcg] = ef::mrr_ndcg(ranks);
  EXPECT_NEAR(mrr, ref::mrr_direct(ranks), 1e-12);
  EXPECT_NEAR(ndcg, ref::ndcg_direct(ranks), 1e-12);
}

TEST(Ranking, InvariantUnderStrictlyIncreasingTransforms) {
  ef::Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(12);
    for (double& s : scores) s = 4.0 * rng.uniform() - 2.0;
    std::vector<double> warped(12);
    for (size_t i = 0; i < 12; ++i) {
      warped[i] = 3.0 * std::atan(scores[i]) + 1.0;
    }
    EXPECT_EQ(ef::rank_of_positive(scores), ef::rank_of_positive(warped));
  }
}

TEST(MetricReport, SetGetOverwriteAndJson) {
  ef::MetricReport report;
  report.task = "link";
  report.variant = "bce";
  report.sample_count = 7;
  report.set("mrr", 0.25);
  report.set("mrr", 0.5);  // overwrite, not append
  report.set("ndcg", 0.75);
  report.per_class_f1 = {0.1, 0.9};

  EXPECT_DOUBLE_EQ(report.get("mrr"), 0.5);
  EXPECT_THROW(report.get("f1"), ef::ValueError);
  ASSERT_EQ(report.metrics.size(), 2u);

  nlohmann::json obj = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(obj["task"], "link");
  EXPECT_EQ(obj["variant"], "bce");
  EXPECT_EQ(obj["sample_count"], 7);
  EXPECT_DOUBLE_EQ(obj["metrics"]["mrr"].get<double>(), 0.5);
  EXPECT_EQ(obj["per_class_f1"].size(), 2u);
}

namespace {

// Labeled test-split network over the tiny model's node ids.
ef::TextualEdgeNetwork labeled_network() {
  ef::TextualEdgeNetwork net;
  net.add_edge("n0", "n1", "good fine great", 0, ef::Split::test);
  net.add_edge("n1", "n2", "bad awful", 1, ef::Split::test);
  net.add_edge("n2", "n3", "plain text here", 2, ef::Split::test);
  net.add_edge("n3", "n4", "good bad mixed", 1, ef::Split::test);
  net.add_edge("n0", "n4", "greatual words", 0, ef::Split::test);
  net.add_edge("n0", "n2", "unlabeled skip", -1, ef::Split::test);
  net.add_edge("n1", "n3", "train only", 0, ef::Split::train);
  return net;
}

}  // namespace

TEST(EvalEdgeClassification, MatchesOracleRecomputation) {
  TinyModelSpec spec;
  spec.num_labels = 3;
  ef::Model m = tiny_model(spec);
  ef::TextualEdgeNetwork net = labeled_network();
  ef::Vocabulary vocab = ef::build_vocab(net, m.config.vocab_size);

  ef::MetricReport report =
      ef::eval_edge_classification(m, net, vocab, ef::Split::test);
  EXPECT_EQ(report.sample_count, 5u);  // unlabeled edge skipped
  ASSERT_EQ(report.per_class_f1.size(), 3u);

  // Oracle: tape-free forward, manual argmax, confusion-matrix F1.
  ref::Mat w = ref::from_tensor(m.p("head.w"));
  ref::Mat b = ref::from_tensor(m.p("head.b"));
  std::vector<int> pred, gold;
  for (int e : net.edges_in_split(ef::Split::test)) {
    if (net.edge(e).label < 0) continue;
    ef::TokenSequence toks =
        ef::tokenize(vocab, net.edge_text(e), m.config.max_seq_len);
    ref::Mat h = ref::slice_rows(
        ref::encode_edge(m, toks, net.edge(e).u, net.edge(e).v, {}), 0, 1);
    ref::Mat logits = ref::affine(h, w, b);
    size_t best = 0;
    for (size_t c = 1; c < 3; ++c) {
      if (logits.at(0, c) > logits.at(0, best)) best = c;
    }
    pred.push_back(static_cast<int>(best));
    gold.push_back(net.edge(e).label);
  }
  ref::F1Oracle want = ref::f1_confusion(pred, gold, 3);
  EXPECT_NEAR(report.get("micro_f1"), want.micro, 1e-12);
  EXPECT_NEAR(report.get("macro_f1"), want.macro, 1e-12);

  ef::Model headless = tiny_model();
  EXPECT_THROW(ef::eval_edge_classification(headless, net, vocab, ef::Split::test),
               ef::ValueError);
  EXPECT_THROW(ef::eval_edge_classification(m, net, vocab, ef::Split::val),
               ef::ValueError);
}

TEST(EmbeddingRows, ResolvesByIdAndRejectsUnknownNodes) {
  ef::Model m = tiny_model();  // ids n0..n4
  ef::TextualEdgeNetwork net;
  net.add_edge("n3", "n0", "x");
  std::vector<int> rows = ef::embedding_rows(m, net);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], 3);  // network order differs from table order
  EXPECT_EQ(rows[1], 0);

  net.add_edge("n0", "stranger", "y");
  EXPECT_THROW(ef::embedding_rows(m, net), ef::CheckpointError);
}

TEST(LinkEvalConfig, PerTypeCapOverridesDefault) {
  ef::LinkEvalConfig cfg;
  cfg.neighbor_cap = 8;
  cfg.per_type_cap["item"] = 2;
  EXPECT_EQ(cfg.cap_for("item"), 2u);
  EXPECT_EQ(cfg.cap_for("user"), 8u);
}

namespace {

ef::SynthSpec random_text_spec(size_t nodes, double epn) {
  ef::SynthSpec spec;
  spec.kind = "keyword-sentiment";  // planted keyword is noise for an
  spec.node_types = {{"n", nodes}};  // untrained model
  spec.edges_per_node = epn;
  spec.num_labels = 3;
  spec.split_weights = {1.0, 0.0, 0.0};
  return spec;
}

ef::Model model_for_network(const ef::TextualEdgeNetwork& net, size_t vocab_size,
                            uint64_t seed) {
  TinyModelSpec spec;
  spec.vocab_size = vocab_size;
  spec.num_nodes = net.num_nodes();
  ef::ModelConfig c;
  c.layers = spec.layers;
  c.heads = spec.heads;
  c.d_model = spec.d_model;
  c.d_node = spec.d_node;
  c.max_seq_len = spec.max_seq_len;
  c.vocab_size = vocab_size;
  c.num_nodes = net.num_nodes();
  std::vector<std::string> ids;
  for (size_t i = 0; i < net.num_nodes(); ++i) {
    ids.push_back(net.node(static_cast<int>(i)).id);
  }
  return ef::init_model(c, std::move(ids), seed);
}

}  // namespace

TEST(EvalLinkPrediction, FixedSeedGivesIdenticalReports) {
  ef::SynthResult r = ef::synth_generate(5, random_text_spec(12, 3.0));
  ef::Vocabulary vocab = ef::build_vocab(r.network, 60);
  ef::Model m = model_for_network(r.network, 60, 11);

  ef::LinkEvalConfig cfg;
  cfg.k = 5;
  cfg.seed = 3;
  ef::MetricReport a = ef::eval_link_prediction(m, r.network, vocab,
                                                ef::Split::train, cfg);
  ef::MetricReport b = ef::eval_link_prediction(m, r.network, vocab,
                                                ef::Split::train, cfg);
  EXPECT_EQ(a.get("mrr"), b.get("mrr"));
  EXPECT_EQ(a.get("ndcg"), b.get("ndcg"));
  EXPECT_EQ(a.sample_count, r.network.edges_in_split(ef::Split::train).size());
  EXPECT_GT(a.get("mrr"), 0.0);
  EXPECT_LE(a.get("mrr"), 1.0);
  EXPECT_GE(a.get("ndcg"), a.get("mrr"));  // 1/log2(1+r) >= 1/r on r >= 1

  EXPECT_THROW(
      ef::eval_link_prediction(m, r.network, vocab, ef::Split::val, cfg),
      ef::ValueError);
}

TEST(EvalLinkPrediction, UntrainedModelRanksAtChanceLevel) {
  // 1+19 ranking with an untrained encoder: ranks should look uniform on
  // 1..20, so the MRR sits within 3 standard errors of E[1/r].
  ef::SynthResult r = ef::synth_generate(6, random_text_spec(30, 4.0));
  ef::Vocabulary vocab = ef::build_vocab(r.network, 80);
  ef::Model m = model_for_network(r.network, 80, 13);

  ef::LinkEvalConfig cfg;
  cfg.k = 19;
  cfg.seed = 7;
  ef::MetricReport report =
      ef::eval_link_prediction(m, r.network, vocab, ef::Split::train, cfg);

  double mean, sd;
  ref::uniform_rank_moments(20, &mean, &sd);
  double se = sd / std::sqrt(static_cast<double>(report.sample_count));
  EXPECT_NEAR(report.get("mrr"), mean, 3.0 * se)
      << "samples: " << report.sample_count;
}

TEST(LogisticProbe, SeparableCloudScoresNearPerfect) {
  // Two classes keyed to coordinate signs with a wide margin.
  std::vector<std::vector<double>> emb;
  std::vector<std::vector<int>> labels;
  std::vector<ef::Split> splits;
  ef::Rng rng(8);
  for (int i = 0; i < 60; ++i) {
    double x = (i % 2 == 0) ? 2.0 : -2.0;
    double y = (i % 4 < 2) ? 2.0 : -2.0;
    emb.push_back({x + 0.1 * rng.uniform(), y + 0.1 * rng.uniform()});
    std::vector<int> row;
    if (x > 0) row.push_back(0);
    if (y > 0) row.push_back(1);
    labels.push_back(row);
    splits.push_back(i % 5 == 3 ? ef::Split::val
                                : (i % 5 == 4 ? ef::Split::test
                                              : ef::Split::train));
  }
  ef::MetricReport report = ef::logistic_probe(emb, labels, splits, 2);
  EXPECT_GE(report.get("micro_f1"), 0.99);
  EXPECT_GE(report.get("precision"), 0.99);
}

TEST(LogisticProbe, NeverMutatesEncoderParameters) {
  ef::Model m = tiny_model();
  double checksum = m.params.checksum();

  std::vector<std::vector<double>> emb;
  std::vector<std::vector<int>> labels;
  std::vector<ef::Split> splits;
  for (size_t n = 0; n < m.config.num_nodes; ++n) {
    ef::Tensor h = ef::fallback_node_embedding(m, static_cast<int>(n));
    emb.emplace_back(h.data(), h.data() + h.numel());
    labels.push_back({static_cast<int>(n % 2)});
    splits.push_back(n < 3 ? ef::Split::train : ef::Split::test);
  }
  ef::logistic_probe(emb, labels, splits, 2);
  EXPECT_EQ(m.params.checksum(), checksum);
}

TEST(LogisticProbe, RandomBalancedEmbeddingsScoreAtChance) {
  ef::Rng rng(9);
  std::vector<std::vector<double>> emb;
  std::vector<std::vector<int>> labels;
  std::vector<ef::Split> splits;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> row(8);
    for (double& v : row) v = rng.normal();
    emb.push_back(std::move(row));
    labels.push_back({i % 2});
    splits.push_back(i % 5 == 3 ? ef::Split::val
                                : (i % 5 == 4 ? ef::Split::test
                                              : ef::Split::train));
  }
  ef::MetricReport report = ef::logistic_probe(emb, labels, splits, 2);
  EXPECT_NEAR(report.get("micro_f1"), 0.5, 0.1);
}

TEST(LogisticProbe, RejectsDegenerateAndMalformedInputs) {
  std::vector<std::vector<double>> emb = {{1.0}, {2.0}, {3.0}};
  std::vector<ef::Split> splits = {ef::Split::train, ef::Split::train,
                                   ef::Split::test};

  // Every class constant on the train split.
  std::vector<std::vector<int>> constant = {{0}, {0}, {0}};
  EXPECT_THROW(ef::logistic_probe(emb, constant, splits, 1), ef::ValueError);

  std::vector<std::vector<int>> ok = {{0}, {}, {0}};
  EXPECT_NO_THROW(ef::logistic_probe(emb, ok, splits, 1));

  std::vector<std::vector<int>> short_labels = {{0}, {1}};
  EXPECT_THROW(ef::logistic_probe(emb, short_labels, splits, 2),
               ef::ShapeError);

  std::vector<ef::Split> no_test = {ef::Split::train, ef::Split::train,
                                    ef::Split::train};
  EXPECT_THROW(ef::logistic_probe(emb, ok, no_test, 1), ef::ValueError);

  std::vector<std::vector<double>> ragged = {{1.0}, {2.0, 3.0}, {4.0}};
  EXPECT_THROW(ef::logistic_probe(ragged, ok, splits, 1), ef::ShapeError);
}
