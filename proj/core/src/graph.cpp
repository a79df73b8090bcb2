#include "edgeformer/graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

namespace edgeformer {

namespace {

uint64_t pack_pair(int a, int b) {
  uint32_t lo = static_cast<uint32_t>(std::min(a, b));
  uint32_t hi = static_cast<uint32_t>(std::max(a, b));
  return (static_cast<uint64_t>(hi) << 32) | lo;
}

}  // namespace

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ParseError("unknown split tag \"" + name + "\"");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "none";
  }
}

int TextualEdgeNetwork::intern_node(const std::string& id,
                                    const std::string& type) {
  auto it = index_.find(id);
  if (it != index_.end()) {
    NodeRecord& n = nodes_[it->second];
    if (!type.empty()) {
      if (n.type.empty()) {
        n.type = type;
      } else if (n.type != type) {
        throw GraphError("node \"" + id + "\" declared with conflicting types \"" +
                         n.type + "\" and \"" + type + "\"");
      }
    }
    return it->second;
  }
  int idx = static_cast<int>(nodes_.size());
  nodes_.push_back(NodeRecord{id, type, {}});
  incident_.emplace_back();
  index_.emplace(id, idx);
  return idx;
}

int TextualEdgeNetwork::add_edge(const std::string& u, const std::string& v,
                                 std::string text, int label, Split split) {
  int ui = intern_node(u);
  int vi = intern_node(v);
  return add_edge_indexed(ui, vi, std::move(text), label, split);
}

int TextualEdgeNetwork::add_edge_indexed(int u, int v, std::string text,
                                         int label, Split split) {
  if (u < 0 || u >= static_cast<int>(nodes_.size()) || v < 0 ||
      v >= static_cast<int>(nodes_.size())) {
    throw GraphError("edge endpoint index out of range: (" + std::to_string(u) +
                     ", " + std::to_string(v) + ") with " +
                     std::to_string(nodes_.size()) + " nodes");
  }
  int doc = static_cast<int>(documents_.size());
  documents_.push_back(std::move(text));
  int e = static_cast<int>(edges_.size());
  edges_.push_back(EdgeRecord{u, v, doc, label, split});
  incident_[u].push_back(e);
  if (v != u) incident_[v].push_back(e);
  pairs_.insert(pack_pair(u, v));
  return e;
}

int TextualEdgeNetwork::find_node(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

int TextualEdgeNetwork::node_index(const std::string& id) const {
  int i = find_node(id);
  if (i < 0) throw GraphError("unknown node \"" + id + "\"");
  return i;
}

const std::vector<int>& TextualEdgeNetwork::incident_edges(int node) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size())) {
    throw GraphError("unknown node index " + std::to_string(node));
  }
  return incident_[node];
}

int TextualEdgeNetwork::other_endpoint(int edge, int node) const {
  const EdgeRecord& e = edges_.at(edge);
  if (e.u == node) return e.v;
  if (e.v == node) return e.u;
  throw GraphError("node " + std::to_string(node) + " is not an endpoint of edge " +
                   std::to_string(edge));
}

bool TextualEdgeNetwork::adjacent(int a, int b) const {
  return pairs_.count(pack_pair(a, b)) != 0;
}

std::vector<int> TextualEdgeNetwork::edges_in_split(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < edges_.size(); ++i) {
    if (edges_[i].split == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> TextualEdgeNetwork::nodes_of_type(const std::string& type) const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].type == type) out.push_back(static_cast<int>(i));
  }
  return out;
}

void TextualEdgeNetwork::set_node_labels(int node, std::vector<int> labels) {
  nodes_.at(node).labels = std::move(labels);
}

void TextualEdgeNetwork::validate() const {
  for (size_t i = 0; i < edges_.size(); ++i) {
    const EdgeRecord& e = edges_[i];
    if (e.u < 0 || e.u >= static_cast<int>(nodes_.size()) || e.v < 0 ||
        e.v >= static_cast<int>(nodes_.size())) {
      throw GraphError("edge " + std::to_string(i) + " references a missing node");
    }
    if (e.doc < 0 || e.doc >= static_cast<int>(documents_.size())) {
      throw GraphError("edge " + std::to_string(i) + " references a missing document");
    }
  }
}

TextualEdgeNetwork load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open \"" + path + "\"");
  TextualEdgeNetwork net;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw ParseError("line " + std::to_string(lineno) + ": not a JSON object");
    }
    auto need_string = [&](const char* key) -> std::string {
      if (!obj.contains(key)) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": missing required key \"" + key + "\"");
      }
      if (!obj[key].is_string()) {
        throw ParseError("line " + std::to_string(lineno) + ": key \"" + key +
                         "\" must be a string");
      }
      return obj[key].get<std::string>();
    };
    std::string u = need_string("u");
    std::string v = need_string("v");
    std::string text = need_string("text");
    std::string u_type, v_type;
    if (obj.contains("u_type")) {
      if (!obj["u_type"].is_string()) {
        throw ParseError("line " + std::to_string(lineno) + ": key \"u_type\" must be a string");
      }
      u_type = obj["u_type"].get<std::string>();
    }
    if (obj.contains("v_type")) {
      if (!obj["v_type"].is_string()) {
        throw ParseError("line " + std::to_string(lineno) + ": key \"v_type\" must be a string");
      }
      v_type = obj["v_type"].get<std::string>();
    }
    int label = -1;
    if (obj.contains("label")) {
      if (!obj["label"].is_number_integer() || obj["label"].get<int64_t>() < 0) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": key \"label\" must be an integer >= 0");
      }
      label = obj["label"].get<int>();
    }
    Split split = Split::none;
    if (obj.contains("split")) {
      if (!obj["split"].is_string()) {
        throw ParseError("line " + std::to_string(lineno) + ": key \"split\" must be a string");
      }
      try {
        split = parse_split(obj["split"].get<std::string>());
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    try {
      net.intern_node(u, u_type);
      net.intern_node(v, v_type);
    } catch (const GraphError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    net.add_edge(u, v, std::move(text), label, split);
  }
  net.validate();
  return net;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& extra) {
  tokens_ = {"[PAD]", "[CLS]", "[UNK]"};
  tokens_.insert(tokens_.end(), extra.begin(), extra.end());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ValueError("duplicate vocabulary token \"" + tokens_[i] + "\"");
    }
  }
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

size_t TokenSequence::length() const {
  size_t n = 0;
  while (n < mask.size() && mask[n]) ++n;
  return n;
}

std::vector<std::string> split_text(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    bool word = std::isalnum(c) || c >= 0x80;
    if (word) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary build_vocab(const TextualEdgeNetwork& network, size_t max_size) {
  if (max_size < 3) {
    throw ValueError("build_vocab: max_size must be >= 3, got " +
                     std::to_string(max_size));
  }
  std::unordered_map<std::string, size_t> counts;
  for (size_t e = 0; e < network.num_edges(); ++e) {
    for (std::string& tok : split_text(network.edge_text(static_cast<int>(e)))) {
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  size_t keep = std::min(ranked.size(), max_size - 3);
  std::vector<std::string> extra;
  extra.reserve(keep);
  for (size_t i = 0; i < keep; ++i) extra.push_back(ranked[i].first);
  return Vocabulary(extra);
}

TokenSequence tokenize(const Vocabulary& vocab, const std::string& text,
                       size_t max_seq_len) {
  if (max_seq_len < 2) {
    throw ValueError("tokenize: max_seq_len must be >= 2, got " +
                     std::to_string(max_seq_len));
  }
  TokenSequence seq;
  seq.ids.assign(max_seq_len, Vocabulary::kPad);
  seq.mask.assign(max_seq_len, 0);
  seq.ids[0] = Vocabulary::kCls;
  seq.mask[0] = 1;
  size_t pos = 1;
  for (const std::string& tok : split_text(text)) {
    if (pos >= max_seq_len) break;
    seq.ids[pos] = vocab.id_of(tok);
    seq.mask[pos] = 1;
    ++pos;
  }
  return seq;
}

std::vector<int> neighbor_edges(const TextualEdgeNetwork& network, int node,
                                size_t cap, Rng& rng) {
  return neighbor_edges_excluding(network, node, cap, rng, -1);
}

std::vector<int> neighbor_edges_excluding(const TextualEdgeNetwork& network,
                                          int node, size_t cap, Rng& rng,
                                          int exclude_edge) {
  if (cap < 1) throw ValueError("neighbor_edges: cap must be >= 1");
  const std::vector<int>& all = network.incident_edges(node);
  std::vector<int> pool;
  pool.reserve(all.size());
  for (int e : all) {
    if (e != exclude_edge) pool.push_back(e);
  }
  if (pool.size() <= cap) return pool;
  std::vector<size_t> pick = rng.sample_without_replacement(pool.size(), cap);
  std::vector<int> out;
  out.reserve(cap);
  for (size_t i : pick) out.push_back(pool[i]);
  return out;
}

}  // namespace edgeformer
