#include "edgeformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "edgeformer/edge_encoder.hpp"
#include "edgeformer/node_encoder.hpp"
#include "edgeformer/rng.hpp"

namespace edgeformer {
namespace {

using nlohmann::json;

double as_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ValueError("config key \"" + key + "\" must be a number");
  return j.get<double>();
}

size_t as_size(const json& j, const std::string& key) {
  const double v = as_number(j, key);
  if (v < 0 || v != std::floor(v))
    throw ValueError("config key \"" + key + "\" must be a non-negative integer");
  return static_cast<size_t>(v);
}

std::string as_string(const json& j, const std::string& key) {
  if (!j.is_string()) throw ValueError("config key \"" + key + "\" must be a string");
  return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ValueError("config key \"" + key + "\" must be a boolean");
  return j.get<bool>();
}

}  // namespace

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValueError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValueError("config must be a JSON object");

  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "lr") c.lr = as_number(v, k);
    else if (k == "weight_decay") c.weight_decay = as_number(v, k);
    else if (k == "beta1") c.beta1 = as_number(v, k);
    else if (k == "beta2") c.beta2 = as_number(v, k);
    else if (k == "eps") c.eps = as_number(v, k);
    else if (k == "clip_norm") c.clip_norm = as_number(v, k);
    else if (k == "epochs") c.epochs = as_size(v, k);
    else if (k == "patience") c.patience = as_size(v, k);
    else if (k == "batch_size_edge") c.batch_size_edge = as_size(v, k);
    else if (k == "batch_size_node") c.batch_size_node = as_size(v, k);
    else if (k == "seed") c.seed = static_cast<uint64_t>(as_size(v, k));
    else if (k == "loss_variant") c.loss_variant = as_string(v, k);
    else if (k == "neighbor_cap") c.neighbor_cap = as_size(v, k);
    else if (k == "per_type_cap") {
      if (!v.is_object()) throw ValueError("config key \"per_type_cap\" must be an object");
      for (auto pt = v.begin(); pt != v.end(); ++pt)
        c.per_type_cap[pt.key()] = as_size(pt.value(), "per_type_cap." + pt.key());
    }
    else if (k == "vocab_size") c.vocab_size = as_size(v, k);
    else if (k == "layers") c.layers = as_size(v, k);
    else if (k == "heads") c.heads = as_size(v, k);
    else if (k == "d_model") c.d_model = as_size(v, k);
    else if (k == "d_node") c.d_node = as_size(v, k);
    else if (k == "max_seq_len") c.max_seq_len = as_size(v, k);
    else if (k == "dropout") c.dropout = as_number(v, k);
    else if (k == "use_center_token") c.use_center_token = as_bool(v, k);
    else if (k == "use_neighbor_token") c.use_neighbor_token = as_bool(v, k);
    else if (k == "use_cross_edge_token") c.use_cross_edge_token = as_bool(v, k);
    else if (k == "readout") c.readout = as_string(v, k);
    else if (k == "aggregation") c.aggregation = as_string(v, k);
    else throw ValueError("unknown config key \"" + k + "\"");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string TrainConfig::to_json() const {
  json j;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["clip_norm"] = clip_norm;
  j["epochs"] = epochs;
  j["patience"] = patience;
  j["batch_size_edge"] = batch_size_edge;
  j["batch_size_node"] = batch_size_node;
  j["seed"] = seed;
  j["loss_variant"] = loss_variant;
  json caps = json::object();
  for (const auto& [type, cap] : per_type_cap) caps[type] = cap;
  j["per_type_cap"] = caps;
  j["neighbor_cap"] = neighbor_cap;
  j["vocab_size"] = vocab_size;
  j["layers"] = layers;
  j["heads"] = heads;
  j["d_model"] = d_model;
  j["d_node"] = d_node;
  j["max_seq_len"] = max_seq_len;
  j["dropout"] = dropout;
  j["use_center_token"] = use_center_token;
  j["use_neighbor_token"] = use_neighbor_token;
  j["use_cross_edge_token"] = use_cross_edge_token;
  j["readout"] = readout;
  j["aggregation"] = aggregation;
  return j.dump(2);
}

void TrainConfig::validate() const {
  if (lr <= 0) throw ValueError("lr must be positive");
  if (epochs == 0) throw ValueError("epochs must be at least 1");
  if (patience == 0) throw ValueError("patience must be at least 1");
  if (batch_size_edge == 0) throw ValueError("batch_size_edge must be at least 1");
  if (batch_size_node < 2) throw ValueError("batch_size_node must be at least 2");
  if (loss_variant != "bce" && loss_variant != "softmax")
    throw ValueError("loss_variant must be \"bce\" or \"softmax\"");
  if (readout != "cls" && readout != "neighbor_token")
    throw ValueError("readout must be \"cls\" or \"neighbor_token\"");
  if (aggregation != "attention" && aggregation != "mean")
    throw ValueError("aggregation must be \"attention\" or \"mean\"");
  if (dropout < 0 || dropout >= 1) throw ValueError("dropout must be in [0, 1)");
  ModelConfig probe = model_config();
  probe.vocab_size = 3;
  probe.num_nodes = 1;
  probe.num_labels = 1;
  probe.validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.layers = layers;
  m.heads = heads;
  m.d_model = d_model;
  m.d_node = d_node;
  m.max_seq_len = max_seq_len;
  m.dropout = dropout;
  m.use_center_token = use_center_token;
  m.use_neighbor_token = use_neighbor_token;
  m.use_cross_edge_token = use_cross_edge_token;
  m.readout = readout;
  m.aggregation = aggregation;
  return m;
}

VirtualTokenFlags TrainConfig::flags() const {
  VirtualTokenFlags f;
  f.center = use_center_token;
  f.neighbor = use_neighbor_token;
  f.cross_edge = use_cross_edge_token;
  return f;
}

AdamWConfig TrainConfig::adamw_config() const {
  AdamWConfig a;
  a.lr = lr;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.eps = eps;
  a.weight_decay = weight_decay;
  return a;
}

size_t TrainConfig::cap_for(const std::string& type) const {
  auto it = per_type_cap.find(type);
  return it == per_type_cap.end() ? neighbor_cap : it->second;
}

namespace {

bool name_has(const std::string& name, const std::string& piece) {
  return name.find(piece) != std::string::npos;
}

}  // namespace

void apply_trainable_mask(Model& model, const std::string& task,
                          const TrainConfig& config) {
  if (task != "edge" && task != "node")
    throw ValueError("unknown task \"" + task + "\"");
  const bool node_tokens_on = config.use_center_token || config.use_neighbor_token;
  for (const auto& [name, param] : model.params.items()) {
    bool trainable = true;
    if (task == "edge") {
      if (name_has(name, "cross.") || name == "score.w") trainable = false;
      if (!node_tokens_on &&
          (name == "node_emb" || name_has(name, "node_proj.")))
        trainable = false;
    } else {
      if (name_has(name, "head.")) trainable = false;
      if (!config.use_cross_edge_token && name_has(name, "cross.")) trainable = false;
      if (config.aggregation != "attention" && name == "score.w") trainable = false;
      const bool node_emb_used = node_tokens_on ||
                                 config.readout == "neighbor_token" ||
                                 config.aggregation == "attention";
      const bool node_proj_used =
          node_tokens_on || config.readout == "neighbor_token";
      if (!node_emb_used && name == "node_emb") trainable = false;
      if (!node_proj_used && name_has(name, "node_proj.")) trainable = false;
    }
    Tensor handle = param;
    handle.set_requires_grad(trainable);
  }
}

namespace {

// Tape-free classification pass: argmax of head logits per edge.
F1Result eval_edge_f1(const TextualEdgeNetwork& network, const Vocabulary& vocab,
                      const Model& model, const ClassifierHead& head,
                      const VirtualTokenFlags& flags,
                      const std::vector<int>& row_of,
                      const std::vector<size_t>& edge_ids, size_t num_labels) {
  std::vector<int> predicted;
  std::vector<int> actual;
  predicted.reserve(edge_ids.size());
  actual.reserve(edge_ids.size());
  for (size_t e : edge_ids) {
    const EdgeRecord& edge = network.edge(static_cast<int>(e));
    TokenSequence tokens =
        tokenize(vocab, network.edge_text(static_cast<int>(e)),
                 model.config.max_seq_len);
    Tensor h =
        encode_edge(model, tokens, row_of[edge.u], row_of[edge.v], flags).h_e;
    Tensor logits = linear(h, head.w, head.b);
    size_t best = 0;
    for (size_t c = 1; c < num_labels; ++c)
      if (logits.at(0, c) > logits.at(0, best)) best = c;
    predicted.push_back(static_cast<int>(best));
    actual.push_back(edge.label);
  }
  return f1_scores(predicted, actual, num_labels);
}

std::string epoch_json(const std::vector<std::pair<std::string, double>>& fields,
                       size_t epoch) {
  json j;
  j["epoch"] = epoch;
  for (const auto& [k, v] : fields) j[k] = v;
  return j.dump();
}

}  // namespace

TrainResult train_edge_task(const TextualEdgeNetwork& network,
                            const Vocabulary& vocab, Model& model,
                            AdamW& optimizer, const TrainConfig& config) {
  std::vector<size_t> train_ids;
  std::vector<size_t> val_ids;
  for (size_t e = 0; e < network.num_edges(); ++e) {
    const EdgeRecord& edge = network.edge(e);
    if (edge.label < 0) continue;
    if (edge.split == Split::train) train_ids.push_back(e);
    else if (edge.split == Split::val) val_ids.push_back(e);
  }
  if (train_ids.empty())
    throw ValueError("edge task needs labeled edges in the train split");
  if (model.config.num_labels == 0)
    throw ValueError("edge task needs a model with a classifier head");
  const size_t num_labels = model.config.num_labels;
  for (size_t e : train_ids)
    if (static_cast<size_t>(network.edge(e).label) >= num_labels)
      throw ValueError("edge label exceeds the label count the model was built for");
  for (size_t e : val_ids)
    if (static_cast<size_t>(network.edge(e).label) >= num_labels)
      throw ValueError("edge label exceeds the label count the model was built for");

  const std::vector<int> row_of = embedding_rows(model, network);
  const VirtualTokenFlags flags = config.flags();
  ClassifierHead head{model.params.at("head.w"), model.params.at("head.b")};

  Rng shuffle_rng = Rng(config.seed).fork(1);
  Rng dropout_rng = Rng(config.seed).fork(2);

  TrainResult result;
  double best_metric = -1;
  F1Result best_val_f1;
  F1Result best_train_f1;
  size_t bad_epochs = 0;
  std::vector<std::vector<double>> best_params = model.params.snapshot();
  Rng* drop = config.dropout > 0 ? &dropout_rng : nullptr;

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(train_ids);
    double loss_sum = 0;
    size_t batch_count = 0;
    for (size_t start = 0; start < train_ids.size();
         start += config.batch_size_edge) {
      const size_t stop =
          std::min(start + config.batch_size_edge, train_ids.size());
      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> hs;
      std::vector<int> labels;
      hs.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        const int e = static_cast<int>(train_ids[i]);
        const EdgeRecord& edge = network.edge(e);
        TokenSequence tokens =
            tokenize(vocab, network.edge_text(e), model.config.max_seq_len);
        hs.push_back(encode_edge(model, tokens, row_of[edge.u], row_of[edge.v],
                                 flags, false, drop)
                         .h_e);
        labels.push_back(edge.label);
      }
      Tensor h_batch = concat_rows(hs);
      Tensor loss =
          edge_classification_loss(h_batch, labels, head, config.loss_variant);
      const double loss_value = loss.at(0, 0);
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_count));
      backward(loss);
      clip_gradients(model.params, config.clip_norm);
      optimizer.step(model.params);
      loss_sum += loss_value;
      ++batch_count;
    }
    const double mean_loss = loss_sum / static_cast<double>(batch_count);

    F1Result train_f1 = eval_edge_f1(network, vocab, model, head, flags, row_of,
                                     train_ids, num_labels);
    std::vector<std::pair<std::string, double>> log_fields = {
        {"train_loss", mean_loss},
        {"train_micro_f1", train_f1.micro},
        {"train_macro_f1", train_f1.macro}};
    double metric = train_f1.micro;
    F1Result val_f1;
    if (!val_ids.empty()) {
      val_f1 = eval_edge_f1(network, vocab, model, head, flags, row_of, val_ids,
                            num_labels);
      log_fields.emplace_back("val_micro_f1", val_f1.micro);
      log_fields.emplace_back("val_macro_f1", val_f1.macro);
      metric = val_f1.micro;
    }
    result.epoch_log.push_back(epoch_json(log_fields, epoch));
    ++result.epochs_run;

    if (metric > best_metric) {
      best_metric = metric;
      best_val_f1 = val_ids.empty() ? train_f1 : val_f1;
      best_train_f1 = train_f1;
      best_params = model.params.snapshot();
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= config.patience) break;
    }
  }

  model.params.restore(best_params);
  result.report.task = "edge-classification";
  result.report.variant = config.loss_variant;
  result.report.sample_count = val_ids.empty() ? train_ids.size() : val_ids.size();
  result.report.set("micro_f1", best_val_f1.micro);
  result.report.set("macro_f1", best_val_f1.macro);
  result.report.set("train_micro_f1", best_train_f1.micro);
  result.report.set("train_macro_f1", best_train_f1.macro);
  result.report.per_class_f1 = best_val_f1.per_class;
  return result;
}

namespace {

struct NodePair {
  int edge_id;
  int query;  // encoded with edge_id excluded
  int key;
};

// Encodes one endpoint with the pair's edge hidden from its ego network.
Tensor pair_embedding(const TextualEdgeNetwork& network, const Vocabulary& vocab,
                      const Model& model, const TrainConfig& config,
                      const std::vector<int>& row_of, int node,
                      int exclude_edge, Rng& rng, Rng* dropout_rng) {
  EgoBatch ego = make_ego_batch(network, vocab, model.config.max_seq_len, node,
                                config.cap_for(network.node(node).type), rng,
                                exclude_edge, [&](int n) { return row_of[n]; });
  if (ego.edges.empty()) return fallback_node_embedding(model, row_of[node]);
  return encode_node(model, ego, config.flags(), dropout_rng).h_v;
}

struct ValBatchStats {
  double mrr = 0;
  double ndcg = 0;
  size_t count = 0;
};

}  // namespace

TrainResult train_node_task(const TextualEdgeNetwork& network,
                            const Vocabulary& vocab, Model& model,
                            AdamW& optimizer, const TrainConfig& config) {
  std::vector<NodePair> train_pairs;
  std::vector<NodePair> val_pairs;
  for (int e = 0; e < static_cast<int>(network.num_edges()); ++e) {
    const EdgeRecord& edge = network.edge(e);
    NodePair pair{e, edge.u, edge.v};
    if (edge.split == Split::train) train_pairs.push_back(pair);
    else if (edge.split == Split::val) val_pairs.push_back(pair);
  }
  if (train_pairs.empty())
    throw ValueError("node task needs edges in the train split");
  const std::vector<int> row_of = embedding_rows(model, network);

  // Validation batches are arranged once so the early-stopping signal is a
  // fixed quantity; per-epoch ego sampling reuses the same fork each time.
  {
    Rng val_rng = Rng(config.seed).fork(3);
    val_rng.shuffle(val_pairs);
  }
  std::vector<std::pair<size_t, size_t>> val_batches;
  for (size_t start = 0; start + 2 <= val_pairs.size();
       start += config.batch_size_node) {
    const size_t stop = std::min(start + config.batch_size_node, val_pairs.size());
    if (stop - start >= 2) val_batches.emplace_back(start, stop);
  }

  Rng shuffle_rng = Rng(config.seed).fork(4);
  Rng ego_rng = Rng(config.seed).fork(5);
  Rng dropout_rng = Rng(config.seed).fork(6);

  auto eval_val = [&]() -> ValBatchStats {
    ValBatchStats stats;
    Rng eval_rng = Rng(config.seed).fork(7);
    std::vector<size_t> ranks;
    for (const auto& [start, stop] : val_batches) {
      std::vector<Tensor> qs, ks;
      for (size_t i = start; i < stop; ++i) {
        const NodePair& pair = val_pairs[i];
        qs.push_back(pair_embedding(network, vocab, model, config, row_of, pair.query,
                                    pair.edge_id, eval_rng, nullptr));
        ks.push_back(pair_embedding(network, vocab, model, config, row_of, pair.key,
                                    pair.edge_id, eval_rng, nullptr));
      }
      Tensor q = concat_rows(qs);
      Tensor k = concat_rows(ks);
      const size_t b = stop - start;
      for (size_t i = 0; i < b; ++i) {
        double pos = 0;
        std::vector<double> scores(1, 0.0);
        for (size_t j = 0; j < b; ++j) {
          double s = 0;
          for (size_t c = 0; c < model.config.d_model; ++c)
            s += q.at(i, c) * k.at(j, c);
          if (j == i) pos = s;
          else scores.push_back(s);
        }
        scores[0] = pos;
        ranks.push_back(rank_of_positive(scores));
      }
    }
    if (ranks.empty()) return stats;
    auto [mrr, ndcg] = mrr_ndcg(ranks);
    stats.mrr = mrr;
    stats.ndcg = ndcg;
    stats.count = ranks.size();
    return stats;
  };

  TrainResult result;
  double best_metric = -1e300;
  ValBatchStats best_stats;
  size_t bad_epochs = 0;
  std::vector<std::vector<double>> best_params = model.params.snapshot();
  const bool have_val = !val_batches.empty();

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(train_pairs);
    double loss_sum = 0;
    size_t batch_count = 0;
    for (size_t start = 0; start + 2 <= train_pairs.size();
         start += config.batch_size_node) {
      const size_t stop =
          std::min(start + config.batch_size_node, train_pairs.size());
      if (stop - start < 2) break;
      Tape tape;
      TapeScope scope(tape);
      Rng* drop = config.dropout > 0 ? &dropout_rng : nullptr;
      std::vector<Tensor> qs, ks;
      for (size_t i = start; i < stop; ++i) {
        const NodePair& pair = train_pairs[i];
        qs.push_back(pair_embedding(network, vocab, model, config, row_of, pair.query,
                                    pair.edge_id, ego_rng, drop));
        ks.push_back(pair_embedding(network, vocab, model, config, row_of, pair.key,
                                    pair.edge_id, ego_rng, drop));
      }
      Tensor loss = link_prediction_loss(concat_rows(qs), concat_rows(ks));
      const double loss_value = loss.at(0, 0);
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_count));
      backward(loss);
      clip_gradients(model.params, config.clip_norm);
      optimizer.step(model.params);
      loss_sum += loss_value;
      ++batch_count;
    }
    const double mean_loss =
        batch_count == 0 ? 0.0 : loss_sum / static_cast<double>(batch_count);

    std::vector<std::pair<std::string, double>> log_fields = {
        {"train_loss", mean_loss}};
    double metric = -mean_loss;
    ValBatchStats stats;
    if (have_val) {
      stats = eval_val();
      log_fields.emplace_back("val_mrr", stats.mrr);
      log_fields.emplace_back("val_ndcg", stats.ndcg);
      metric = stats.mrr;
    }
    result.epoch_log.push_back(epoch_json(log_fields, epoch));
    ++result.epochs_run;

    if (metric > best_metric) {
      best_metric = metric;
      best_stats = stats;
      best_params = model.params.snapshot();
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= config.patience) break;
    }
  }

  model.params.restore(best_params);
  result.report.task = "node-link";
  result.report.sample_count = best_stats.count;
  if (have_val) {
    result.report.set("mrr", best_stats.mrr);
    result.report.set("ndcg", best_stats.ndcg);
  } else {
    result.report.set("train_loss", -best_metric);
  }
  return result;
}

}  // namespace edgeformer
