#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "edgeformer/graph.hpp"
#include "edgeformer/node_encoder.hpp"

namespace edgeformer {

struct MetricReport {
  std::string task;
  std::string variant;  // loss variant for training reports, else empty
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<double> per_class_f1;  // empty unless an F1 task
  size_t sample_count = 0;

  void set(const std::string& name, double value);
  double get(const std::string& name) const;  // ValueError when absent
  std::string to_json() const;
};

struct F1Result {
  double macro = 0.0;
  double micro = 0.0;
  std::vector<double> per_class;
};

// Single-label multi-class F1 from pooled confusion counts; empty-denominator
// classes score 0.
F1Result f1_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                   size_t num_classes);

// scores[0] is the positive. Rank counts every negative scoring >= it above
// it (pessimistic ties).
size_t rank_of_positive(const std::vector<double>& scores);

// (mean reciprocal rank, mean 1/log2(1+rank)).
std::pair<double, double> mrr_ndcg(const std::vector<size_t>& ranks);

struct LinkEvalConfig {
  size_t k = 99;           // negatives per query
  uint64_t seed = 0;
  size_t neighbor_cap = 8; // ego sampling cap
  std::map<std::string, size_t> per_type_cap;  // overrides by node type

  size_t cap_for(const std::string& type) const;
};

// Ranking protocol over a split's edges: the stored (u, v) order gives
// (query, key); each query scores its positive against k type-matched
// seeded negatives that are not its true neighbors.
MetricReport eval_link_prediction(const Model& model,
                                  const TextualEdgeNetwork& network,
                                  const Vocabulary& vocab, Split split,
                                  const LinkEvalConfig& config,
                                  const VirtualTokenFlags& flags = {});

// Argmax classification over a split's labeled edges, nodes resolved by id
// against the model's node table.
MetricReport eval_edge_classification(const Model& model,
                                      const TextualEdgeNetwork& network,
                                      const Vocabulary& vocab, Split split,
                                      const VirtualTokenFlags& flags = {});

// network node index -> model embedding row, resolved by node id.
// CheckpointError when a node is missing from the model's table.
std::vector<int> embedding_rows(const Model& model,
                                const TextualEdgeNetwork& network);

struct ProbeConfig {
  double lr = 0.001;
  size_t patience = 10;
  size_t max_epochs = 2000;
};

// Multi-label logistic regression on frozen embeddings; never touches the
// encoder. Reports macro/micro F1 and micro precision on the test split.
MetricReport logistic_probe(const std::vector<std::vector<double>>& embeddings,
                            const std::vector<std::vector<int>>& labels,
                            const std::vector<Split>& splits,
                            size_t num_classes, const ProbeConfig& config = {});

}  // namespace edgeformer
