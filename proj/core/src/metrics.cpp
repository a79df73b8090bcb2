#include "edgeformer/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "edgeformer/losses.hpp"
#include "edgeformer/optimizer.hpp"

namespace edgeformer {

void MetricReport::set(const std::string& name, double value) {
  for (auto& [k, v] : metrics) {
    if (k == name) {
      v = value;
      return;
    }
  }
  metrics.emplace_back(name, value);
}

double MetricReport::get(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw ValueError("metric \"" + name + "\" not in report");
}

std::string MetricReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, v] : metrics) m[k] = v;
  nlohmann::json obj = {
      {"task", task}, {"sample_count", sample_count}, {"metrics", m}};
  if (!per_class_f1.empty()) obj["per_class_f1"] = per_class_f1;
  if (!variant.empty()) obj["variant"] = variant;
  return obj.dump(2);
}

F1Result f1_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                   size_t num_classes) {
  if (pred.size() != gold.size()) {
    throw ShapeError("f1_scores: " + std::to_string(pred.size()) +
                     " predictions for " + std::to_string(gold.size()) +
                     " gold labels");
  }
  auto check_range = [&](int y) {
    if (y < 0 || static_cast<size_t>(y) >= num_classes) {
      throw ValueError("f1_scores: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
  };
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    check_range(pred[i]);
    check_range(gold[i]);
    if (pred[i] == gold[i]) {
      tp[pred[i]] += 1;
    } else {
      fp[pred[i]] += 1;
      fn[gold[i]] += 1;
    }
  }
  auto f1_of = [](double tp_, double fp_, double fn_) {
    double p = tp_ + fp_ > 0 ? tp_ / (tp_ + fp_) : 0.0;
    double r = tp_ + fn_ > 0 ? tp_ / (tp_ + fn_) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  };
  F1Result res;
  double tp_all = 0, fp_all = 0, fn_all = 0;
  for (size_t c = 0; c < num_classes; ++c) {
    res.per_class.push_back(f1_of(tp[c], fp[c], fn[c]));
    res.macro += res.per_class.back();
    tp_all += tp[c];
    fp_all += fp[c];
    fn_all += fn[c];
  }
  res.macro /= static_cast<double>(num_classes);
  res.micro = f1_of(tp_all, fp_all, fn_all);
  return res;
}

size_t rank_of_positive(const std::vector<double>& scores) {
  if (scores.empty()) throw ValueError("rank_of_positive: no scores");
  size_t rank = 1;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] >= scores[0]) ++rank;
  }
  return rank;
}

std::pair<double, double> mrr_ndcg(const std::vector<size_t>& ranks) {
  if (ranks.empty()) throw ValueError("mrr_ndcg: no ranks");
  double mrr = 0.0, ndcg = 0.0;
  for (size_t r : ranks) {
    if (r < 1) throw ValueError("mrr_ndcg: rank must be >= 1");
    mrr += 1.0 / static_cast<double>(r);
    ndcg += 1.0 / std::log2(static_cast<double>(r + 1));
  }
  double n = static_cast<double>(ranks.size());
  return {mrr / n, ndcg / n};
}

size_t LinkEvalConfig::cap_for(const std::string& type) const {
  auto it = per_type_cap.find(type);
  return it == per_type_cap.end() ? neighbor_cap : it->second;
}

namespace {

std::vector<double> to_vector(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

std::vector<int> embedding_rows(const Model& model,
                                const TextualEdgeNetwork& network) {
  std::vector<int> row_of(network.num_nodes());
  std::unordered_map<std::string, int> by_id;
  for (size_t i = 0; i < model.node_ids.size(); ++i) {
    by_id.emplace(model.node_ids[i], static_cast<int>(i));
  }
  for (size_t n = 0; n < network.num_nodes(); ++n) {
    auto it = by_id.find(network.node(static_cast<int>(n)).id);
    if (it == by_id.end()) {
      throw CheckpointError("node \"" + network.node(static_cast<int>(n)).id +
                            "\" is not in the model's node table");
    }
    row_of[n] = it->second;
  }
  return row_of;
}

MetricReport eval_link_prediction(const Model& model,
                                  const TextualEdgeNetwork& network,
                                  const Vocabulary& vocab, Split split,
                                  const LinkEvalConfig& config,
                                  const VirtualTokenFlags& flags) {
  std::vector<int> edges = network.edges_in_split(split);
  if (edges.empty()) {
    throw ValueError(std::string("eval_link_prediction: split \"") +
                     split_name(split) + "\" has no edges");
  }

  std::vector<int> row_of = embedding_rows(model, network);
  NodeRowMap row_map = [&](int n) { return row_of[n]; };

  // Each (node, excluded edge) pair gets its own sampling stream so results
  // do not depend on evaluation order.
  auto node_rng = [&](int node, int exclude) {
    uint64_t salt = (static_cast<uint64_t>(node) + 1) * 1000003ULL +
                    static_cast<uint64_t>(exclude + 1);
    return Rng(config.seed).fork(salt);
  };
  auto embed = [&](int node, int exclude) {
    Rng rng = node_rng(node, exclude);
    EgoBatch ego = make_ego_batch(network, vocab, model.config.max_seq_len, node,
                                  config.cap_for(network.node(node).type), rng,
                                  exclude, row_map);
    if (ego.edges.empty()) {
      return to_vector(fallback_node_embedding(model, row_of[node]));
    }
    return to_vector(encode_node(model, ego, flags).h_v);
  };

  // Negatives never share an edge with the query, so their embeddings are
  // query-independent and cacheable.
  std::vector<std::vector<double>> cache(network.num_nodes());
  std::vector<uint8_t> cached(network.num_nodes(), 0);
  auto embed_cached = [&](int node) -> const std::vector<double>& {
    if (!cached[node]) {
      cache[node] = embed(node, -1);
      cached[node] = 1;
    }
    return cache[node];
  };

  std::vector<size_t> ranks;
  for (int e : edges) {
    int u = network.edge(e).u;
    int v = network.edge(e).v;
    std::vector<double> h_q = embed(u, e);
    std::vector<double> h_pos = embed(v, e);

    const std::string& key_type = network.node(v).type;
    std::vector<int> pool;
    for (size_t w = 0; w < network.num_nodes(); ++w) {
      int wi = static_cast<int>(w);
      if (wi == u || network.node(wi).type != key_type) continue;
      if (network.adjacent(u, wi)) continue;
      pool.push_back(wi);
    }
    if (pool.empty()) {
      throw ValueError("eval_link_prediction: no negative candidates of type \"" +
                       key_type + "\" for query \"" + network.node(u).id + "\"");
    }
    Rng neg_rng = Rng(config.seed).fork(0xabcdef01ULL + static_cast<uint64_t>(e));
    std::vector<int> negs;
    if (pool.size() >= config.k) {
      for (size_t i : neg_rng.sample_without_replacement(pool.size(), config.k)) {
        negs.push_back(pool[i]);
      }
    } else {
      for (size_t i = 0; i < config.k; ++i) {
        negs.push_back(pool[neg_rng.uniform_int(pool.size())]);
      }
    }

    std::vector<double> scores;
    scores.reserve(1 + config.k);
    scores.push_back(dot(h_q, h_pos));
    for (int w : negs) scores.push_back(dot(h_q, embed_cached(w)));
    ranks.push_back(rank_of_positive(scores));
  }

  auto [mrr, ndcg] = mrr_ndcg(ranks);
  MetricReport report;
  report.task = "link";
  report.sample_count = ranks.size();
  report.set("mrr", mrr);
  report.set("ndcg", ndcg);
  return report;
}

namespace {

struct MultilabelCounts {
  std::vector<double> tp, fp, fn;
  explicit MultilabelCounts(size_t c) : tp(c, 0), fp(c, 0), fn(c, 0) {}
  void add(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gold) {
    for (size_t c = 0; c < tp.size(); ++c) {
      if (pred[c] && gold[c]) tp[c] += 1;
      if (pred[c] && !gold[c]) fp[c] += 1;
      if (!pred[c] && gold[c]) fn[c] += 1;
    }
  }
};

struct MultilabelScores {
  double macro_f1, micro_f1, precision;
};

MultilabelScores score_multilabel(const MultilabelCounts& counts) {
  auto f1_of = [](double tp, double fp, double fn) {
    double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  };
  size_t c = counts.tp.size();
  double macro = 0.0, tp_all = 0, fp_all = 0, fn_all = 0;
  for (size_t i = 0; i < c; ++i) {
    macro += f1_of(counts.tp[i], counts.fp[i], counts.fn[i]);
    tp_all += counts.tp[i];
    fp_all += counts.fp[i];
    fn_all += counts.fn[i];
  }
  MultilabelScores s;
  s.macro_f1 = macro / static_cast<double>(c);
  s.micro_f1 = f1_of(tp_all, fp_all, fn_all);
  s.precision = tp_all + fp_all > 0 ? tp_all / (tp_all + fp_all) : 0.0;
  return s;
}

}  // namespace

MetricReport logistic_probe(const std::vector<std::vector<double>>& embeddings,
                            const std::vector<std::vector<int>>& labels,
                            const std::vector<Split>& splits,
                            size_t num_classes, const ProbeConfig& config) {
  size_t n = embeddings.size();
  if (labels.size() != n || splits.size() != n) {
    throw ShapeError("logistic_probe: embeddings/labels/splits lengths disagree");
  }
  if (n == 0 || num_classes < 1) {
    throw ValueError("logistic_probe: nothing to fit");
  }
  size_t dim = embeddings[0].size();
  std::vector<size_t> train_idx, val_idx, test_idx;
  for (size_t i = 0; i < n; ++i) {
    if (embeddings[i].size() != dim) {
      throw ShapeError("logistic_probe: embedding " + std::to_string(i) +
                       " has length " + std::to_string(embeddings[i].size()) +
                       ", expected " + std::to_string(dim));
    }
    switch (splits[i]) {
      case Split::train: train_idx.push_back(i); break;
      case Split::val: val_idx.push_back(i); break;
      case Split::test: test_idx.push_back(i); break;
      default: break;
    }
  }
  if (train_idx.empty()) throw ValueError("logistic_probe: empty train split");
  if (test_idx.empty()) throw ValueError("logistic_probe: empty test split");

  auto one_hot = [&](size_t i) {
    std::vector<uint8_t> row(num_classes, 0);
    for (int c : labels[i]) {
      if (c < 0 || static_cast<size_t>(c) >= num_classes) {
        throw ValueError("logistic_probe: label " + std::to_string(c) +
                         " outside [0, " + std::to_string(num_classes) + ")");
      }
      row[c] = 1;
    }
    return row;
  };

  // A class learnable from the train split needs both polarities.
  bool learnable = false;
  for (size_t c = 0; c < num_classes && !learnable; ++c) {
    size_t pos = 0;
    for (size_t i : train_idx) pos += one_hot(i)[c] ? 1 : 0;
    if (pos > 0 && pos < train_idx.size()) learnable = true;
  }
  if (!learnable) {
    throw ValueError(
        "logistic_probe: degenerate train split (every class is constant)");
  }

  auto pack = [&](const std::vector<size_t>& idx) {
    std::vector<double> x, y;
    x.reserve(idx.size() * dim);
    y.reserve(idx.size() * num_classes);
    for (size_t i : idx) {
      x.insert(x.end(), embeddings[i].begin(), embeddings[i].end());
      for (uint8_t b : one_hot(i)) y.push_back(b);
    }
    return std::make_pair(
        Tensor::from(std::move(x), {idx.size(), dim}),
        Tensor::from(std::move(y), {idx.size(), num_classes}));
  };
  auto [x_train, y_train] = pack(train_idx);

  ParamStore ps;
  Tensor w = ps.add("w", Tensor::zeros({dim, num_classes}));
  Tensor b = ps.add("b", Tensor::zeros({num_classes}));
  AdamWConfig ocfg;
  ocfg.lr = config.lr;
  ocfg.weight_decay = 0.0;
  AdamW opt(ps, ocfg);

  auto evaluate = [&](const std::vector<size_t>& idx) {
    MultilabelCounts counts(num_classes);
    for (size_t i : idx) {
      std::vector<uint8_t> pred(num_classes, 0);
      for (size_t c = 0; c < num_classes; ++c) {
        double logit = b.at(c);
        for (size_t j = 0; j < dim; ++j) {
          logit += embeddings[i][j] * w.at(j, c);
        }
        pred[c] = logit > 0.0 ? 1 : 0;
      }
      counts.add(pred, one_hot(i));
    }
    return score_multilabel(counts);
  };

  const std::vector<size_t>& stop_idx = val_idx.empty() ? train_idx : val_idx;
  double best = -1.0;
  std::vector<std::vector<double>> best_snap;
  size_t bad = 0;
  for (size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = scale(sum(bce_with_logits_terms(linear(x_train, w, b), y_train)),
                          1.0 / static_cast<double>(train_idx.size()));
      tape.backward(loss);
    }
    opt.step(ps);
    double score = evaluate(stop_idx).micro_f1;
    if (score > best) {
      best = score;
      best_snap = ps.snapshot();
      bad = 0;
    } else if (++bad > config.patience) {
      break;
    }
  }
  if (!best_snap.empty()) ps.restore(best_snap);

  MultilabelScores test = evaluate(test_idx);
  MetricReport report;
  report.task = "probe";
  report.sample_count = test_idx.size();
  report.set("macro_f1", test.macro_f1);
  report.set("micro_f1", test.micro_f1);
  report.set("precision", test.precision);
  return report;
}

MetricReport eval_edge_classification(const Model& model,
                                      const TextualEdgeNetwork& network,
                                      const Vocabulary& vocab, Split split,
                                      const VirtualTokenFlags& flags) {
  if (model.config.num_labels == 0)
    throw ValueError("the model has no classifier head");
  std::vector<int> row_of = embedding_rows(model, network);
  const size_t num_labels = model.config.num_labels;
  ClassifierHead head{model.p("head.w"), model.p("head.b")};

  std::vector<int> predicted;
  std::vector<int> actual;
  for (int e : network.edges_in_split(split)) {
    const EdgeRecord& edge = network.edge(e);
    if (edge.label < 0) continue;
    if (static_cast<size_t>(edge.label) >= num_labels)
      throw ValueError("edge label exceeds the model's label count");
    TokenSequence tokens =
        tokenize(vocab, network.edge_text(e), model.config.max_seq_len);
    Tensor h =
        encode_edge(model, tokens, row_of[edge.u], row_of[edge.v], flags).h_e;
    Tensor logits = linear(h, head.w, head.b);
    size_t best = 0;
    for (size_t c = 1; c < num_labels; ++c)
      if (logits.at(0, c) > logits.at(0, best)) best = c;
    predicted.push_back(static_cast<int>(best));
    actual.push_back(edge.label);
  }
  if (predicted.empty())
    throw ValueError(std::string("split \"") + split_name(split) +
                     "\" has no labeled edges");

  F1Result f = f1_scores(predicted, actual, num_labels);
  MetricReport report;
  report.task = "edge-classification";
  report.sample_count = predicted.size();
  report.set("micro_f1", f.micro);
  report.set("macro_f1", f.macro);
  report.per_class_f1 = f.per_class;
  return report;
}

}  // namespace edgeformer
