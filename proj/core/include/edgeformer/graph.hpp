#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "edgeformer/errors.hpp"
#include "edgeformer/rng.hpp"

namespace edgeformer {

enum class Split : uint8_t { none, train, val, test };

Split parse_split(const std::string& name);
const char* split_name(Split s);

struct NodeRecord {
  std::string id;
  std::string type;        // empty = untyped
  std::vector<int> labels; // ground-truth label set, may be empty
};

struct EdgeRecord {
  int u = -1;
  int v = -1;
  int doc = -1;
  int label = -1;          // -1 = unlabeled
  Split split = Split::none;
};

// Nodes, edges, and the documents the edges carry. Read-only once built.
class TextualEdgeNetwork {
 public:
  // Returns the node's index, creating it on first sight. A conflicting
  // non-empty type on an existing node is a GraphError.
  int intern_node(const std::string& id, const std::string& type = "");

  int add_edge(const std::string& u, const std::string& v, std::string text,
               int label = -1, Split split = Split::none);
  int add_edge_indexed(int u, int v, std::string text, int label = -1,
                       Split split = Split::none);

  size_t num_nodes() const { return nodes_.size(); }
  size_t num_edges() const { return edges_.size(); }
  const NodeRecord& node(int i) const { return nodes_.at(i); }
  const EdgeRecord& edge(int i) const { return edges_.at(i); }
  const std::string& document(int d) const { return documents_.at(d); }
  const std::string& edge_text(int e) const { return documents_.at(edges_.at(e).doc); }

  // -1 when absent.
  int find_node(const std::string& id) const;
  int node_index(const std::string& id) const;  // GraphError when absent

  const std::vector<int>& incident_edges(int node) const;
  // The edge's endpoint that is not `node`; either endpoint for self-loops.
  int other_endpoint(int edge, int node) const;

  bool adjacent(int a, int b) const;
  std::vector<int> edges_in_split(Split s) const;
  std::vector<int> nodes_of_type(const std::string& type) const;

  void set_node_labels(int node, std::vector<int> labels);

  // Referential integrity; GraphError on violation.
  void validate() const;

 private:
  std::vector<NodeRecord> nodes_;
  std::unordered_map<std::string, int> index_;
  std::vector<EdgeRecord> edges_;
  std::vector<std::string> documents_;
  std::vector<std::vector<int>> incident_;
  std::unordered_set<uint64_t> pairs_;
};

// One edge object per line; see the file schema in the README.
TextualEdgeNetwork load_jsonl(const std::string& path);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;

  // Reserved tokens only.
  Vocabulary();
  // Reserved tokens followed by `extra` in the given order.
  explicit Vocabulary(const std::vector<std::string>& extra);

  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const { return tokens_.at(id); }
  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenSequence {
  std::vector<int> ids;        // fixed length max_seq_len
  std::vector<uint8_t> mask;   // prefix of trues, then falses
  size_t length() const;       // real tokens including [CLS]
};

// Lowercased alphanumeric runs; punctuation and whitespace split.
std::vector<std::string> split_text(const std::string& text);

// Most frequent tokens across all documents, capacity max_size - 3 after the
// reserved ids; frequency ties break lexicographically. max_size >= 3.
Vocabulary build_vocab(const TextualEdgeNetwork& network, size_t max_size);

// [CLS] + first (max_seq_len - 1) token ids, OOV mapped to [UNK], padded.
TokenSequence tokenize(const Vocabulary& vocab, const std::string& text,
                       size_t max_seq_len);

// All incident edges in stored order when degree <= cap; otherwise a uniform
// sample without replacement of size cap. Indices into network edges.
std::vector<int> neighbor_edges(const TextualEdgeNetwork& network, int node,
                                size_t cap, Rng& rng);

// Same, with one edge removed from the candidate set before the cap applies.
std::vector<int> neighbor_edges_excluding(const TextualEdgeNetwork& network,
                                          int node, size_t cap, Rng& rng,
                                          int exclude_edge);

}  // namespace edgeformer
