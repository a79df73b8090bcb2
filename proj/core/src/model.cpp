#include "edgeformer/model.hpp"

#include <cmath>

namespace edgeformer {

void ModelConfig::validate() const {
  if (layers < 2) {
    throw ValueError("config: layers must be >= 2, got " + std::to_string(layers));
  }
  if (heads < 1 || d_model % heads != 0) {
    throw ValueError("config: d_model (" + std::to_string(d_model) +
                     ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (d_node < 1) throw ValueError("config: d_node must be >= 1");
  if (max_seq_len < 2) throw ValueError("config: max_seq_len must be >= 2");
  if (vocab_size < 3) throw ValueError("config: vocab_size must be >= 3");
  if (num_nodes < 1) throw ValueError("config: num_nodes must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ValueError("config: dropout must lie in [0, 1)");
  }
  if (readout != "cls" && readout != "neighbor_token") {
    throw ValueError("config: readout must be \"cls\" or \"neighbor_token\", got \"" +
                     readout + "\"");
  }
  if (aggregation != "attention" && aggregation != "mean") {
    throw ValueError(
        "config: aggregation must be \"attention\" or \"mean\", got \"" +
        aggregation + "\"");
  }
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (has(name)) throw ValueError("duplicate parameter \"" + name + "\"");
  t.set_requires_grad(true);
  index_.emplace(name, items_.size());
  items_.emplace_back(name, t);
  return t;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter \"" + name + "\"");
  return items_[it->second].second;
}

size_t ParamStore::total_elements() const {
  size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.clear_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> snap;
  snap.reserve(items_.size());
  for (const auto& [name, t] : items_) {
    snap.emplace_back(t.data(), t.data() + t.numel());
  }
  return snap;
}

void ParamStore::restore(const std::vector<std::vector<double>>& snap) {
  if (snap.size() != items_.size()) {
    throw ValueError("snapshot has " + std::to_string(snap.size()) +
                     " entries for " + std::to_string(items_.size()) + " parameters");
  }
  for (size_t i = 0; i < snap.size(); ++i) {
    Tensor& t = items_[i].second;
    if (snap[i].size() != t.numel()) {
      throw ValueError("snapshot entry " + std::to_string(i) + " has wrong size");
    }
    std::copy(snap[i].begin(), snap[i].end(), t.mut_data());
  }
}

double ParamStore::checksum() const {
  double acc = 0.0;
  size_t k = 1;
  for (const auto& [name, t] : items_) {
    for (size_t i = 0; i < t.numel(); ++i, ++k) {
      acc += t.at(i) * std::cos(static_cast<double>(k));
    }
  }
  return acc;
}

AttentionParams Model::attention(size_t layer, const char* which) const {
  std::string base = "layer" + std::to_string(layer) + "." + which + ".";
  AttentionParams a;
  for (size_t h = 0; h < config.heads; ++h) {
    std::string hs = std::to_string(h);
    a.q_w.push_back(p(base + "q" + hs + ".w"));
    a.q_b.push_back(p(base + "q" + hs + ".b"));
    a.k_w.push_back(p(base + "k" + hs + ".w"));
    a.k_b.push_back(p(base + "k" + hs + ".b"));
    a.v_w.push_back(p(base + "v" + hs + ".w"));
    a.v_b.push_back(p(base + "v" + hs + ".b"));
  }
  a.out_w = p(base + "out.w");
  a.out_b = p(base + "out.b");
  return a;
}

const Tensor& Model::node_proj(size_t layer) const {
  if (layer < 1 || layer >= config.layers) {
    throw ValueError("node_proj: layer " + std::to_string(layer) +
                     " outside [1, " + std::to_string(config.layers) + ")");
  }
  return p("layer" + std::to_string(layer) + ".node_proj.w");
}

int Model::node_row(const std::string& id) const {
  for (size_t i = 0; i < node_ids.size(); ++i) {
    if (node_ids[i] == id) return static_cast<int>(i);
  }
  return -1;
}

Model init_model(const ModelConfig& config, std::vector<std::string> node_ids,
                 uint64_t seed) {
  config.validate();
  if (node_ids.size() != config.num_nodes) {
    throw ValueError("init_model: " + std::to_string(node_ids.size()) +
                     " node ids for num_nodes = " + std::to_string(config.num_nodes));
  }
  Model m;
  m.config = config;
  m.node_ids = std::move(node_ids);
  Rng rng(seed);
  const double sd = 0.02;
  size_t d = config.d_model, dk = config.head_dim(), dn = config.d_node;

  auto w = [&](const std::string& name, std::vector<size_t> shape) {
    m.params.add(name, Tensor::randn(std::move(shape), rng, sd));
  };
  auto zeros = [&](const std::string& name, std::vector<size_t> shape) {
    m.params.add(name, Tensor::zeros(std::move(shape)));
  };
  auto ones = [&](const std::string& name, std::vector<size_t> shape) {
    m.params.add(name, Tensor::full(std::move(shape), 1.0));
  };

  w("tok_emb", {config.vocab_size, d});
  w("pos_emb", {config.max_seq_len, d});
  w("node_emb", {config.num_nodes, dn});

  for (size_t l = 0; l < config.layers; ++l) {
    std::string base = "layer" + std::to_string(l) + ".";
    for (size_t h = 0; h < config.heads; ++h) {
      std::string hs = std::to_string(h);
      w(base + "attn.q" + hs + ".w", {d, dk});
      zeros(base + "attn.q" + hs + ".b", {dk});
      w(base + "attn.k" + hs + ".w", {d, dk});
      zeros(base + "attn.k" + hs + ".b", {dk});
      w(base + "attn.v" + hs + ".w", {d, dk});
      zeros(base + "attn.v" + hs + ".b", {dk});
    }
    w(base + "attn.out.w", {d, d});
    zeros(base + "attn.out.b", {d});
    ones(base + "ln1.gain", {d});
    zeros(base + "ln1.bias", {d});
    w(base + "ffn.w1", {d, 4 * d});
    zeros(base + "ffn.b1", {4 * d});
    w(base + "ffn.w2", {4 * d, d});
    zeros(base + "ffn.b2", {d});
    ones(base + "ln2.gain", {d});
    zeros(base + "ln2.bias", {d});
    if (l >= 1) {
      w(base + "node_proj.w", {dn, d});
      for (size_t h = 0; h < config.heads; ++h) {
        std::string hs = std::to_string(h);
        w(base + "cross.q" + hs + ".w", {d, dk});
        zeros(base + "cross.q" + hs + ".b", {dk});
        w(base + "cross.k" + hs + ".w", {d, dk});
        zeros(base + "cross.k" + hs + ".b", {dk});
        w(base + "cross.v" + hs + ".w", {d, dk});
        zeros(base + "cross.v" + hs + ".b", {dk});
      }
      w(base + "cross.out.w", {d, d});
      zeros(base + "cross.out.b", {d});
    }
  }
  w("score.w", {d, dn});
  if (config.num_labels > 0) {
    w("head.w", {d, config.num_labels});
    zeros("head.b", {config.num_labels});
  }
  return m;
}

}  // namespace edgeformer
