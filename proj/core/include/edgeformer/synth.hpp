#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edgeformer/graph.hpp"

namespace edgeformer {

// Description of a generated network. Two kinds:
//  keyword-sentiment: each edge document carries one planted keyword that
//    determines the edge label, so text alone suffices for classification.
//  planted-affinity: nodes carry latent communities; intra-community edges
//    appear with probability p_in and share topical keywords, so structure
//    plus text predict links.
struct SynthSpec {
  std::string kind;                                       // see above
  std::vector<std::pair<std::string, size_t>> node_types; // name -> count
  double edges_per_node = 4.0;
  size_t num_labels = 3;            // keyword-sentiment
  std::vector<double> label_weights;  // defaults to uniform
  size_t num_communities = 2;       // planted-affinity
  double p_in = 0.9;
  size_t background_vocab = 40;
  size_t doc_len = 8;
  std::vector<double> split_weights = {0.8, 0.1, 0.1};  // train/val/test

  static SynthSpec from_json_text(const std::string& text);
  static SynthSpec from_json_file(const std::string& path);
  std::string to_json() const;

  size_t total_nodes() const;
  size_t total_edges() const;
};

struct SynthResult {
  TextualEdgeNetwork network;
  // planted-affinity: community per node (also stored as node labels).
  std::vector<int> node_community;
  // keyword-sentiment: keyword token per label id.
  std::vector<std::string> label_keywords;
};

// Deterministic per (seed, spec). GeneratorSpecError when the spec cannot be
// satisfied (more edges than distinct pairs, bad weights, ...).
SynthResult synth_generate(uint64_t seed, const SynthSpec& spec);

}  // namespace edgeformer
