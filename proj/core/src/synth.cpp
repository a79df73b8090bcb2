#include "edgeformer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace edgeformer {

namespace {

using nlohmann::json;

void require(bool ok, const std::string& msg) {
  if (!ok) throw GeneratorSpecError(msg);
}

// Cumulative-weight categorical sampler.
class Categorical {
 public:
  explicit Categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0, "negative weight in distribution");
      total += w;
      cdf_.push_back(total);
    }
    require(total > 0.0, "weights sum to zero");
    for (double& c : cdf_) c /= total;
  }
  size_t draw(Rng& rng) const {
    double u = rng.uniform();
    return static_cast<size_t>(
        std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

std::vector<double> zipf_weights(size_t n) {
  std::vector<double> w(n);
  for (size_t j = 0; j < n; ++j) w[j] = 1.0 / static_cast<double>(j + 1);
  return w;
}

Split draw_split(const Categorical& dist, Rng& rng) {
  switch (dist.draw(rng)) {
    case 0: return Split::train;
    case 1: return Split::val;
    default: return Split::test;
  }
}

}  // namespace

size_t SynthSpec::total_nodes() const {
  size_t n = 0;
  for (const auto& [name, count] : node_types) n += count;
  return n;
}

size_t SynthSpec::total_edges() const {
  return static_cast<size_t>(
      std::llround(edges_per_node * static_cast<double>(total_nodes()) / 2.0));
}

SynthSpec SynthSpec::from_json_text(const std::string& text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::exception& e) {
    throw GeneratorSpecError(std::string("generator spec is not valid JSON: ") +
                             e.what());
  }
  require(obj.is_object(), "generator spec must be a JSON object");
  SynthSpec spec;
  spec.label_weights.clear();
  for (auto& [key, value] : obj.items()) {
    if (key == "kind") {
      spec.kind = value.get<std::string>();
    } else if (key == "node_types") {
      require(value.is_object() && !value.empty(),
              "\"node_types\" must be a non-empty object of name -> count");
      for (auto& [name, count] : value.items()) {
        require(count.is_number_integer() && count.get<int64_t>() >= 1,
                "node count for type \"" + name + "\" must be an integer >= 1");
        spec.node_types.emplace_back(name, count.get<size_t>());
      }
    } else if (key == "edges_per_node") {
      spec.edges_per_node = value.get<double>();
    } else if (key == "num_labels") {
      spec.num_labels = value.get<size_t>();
    } else if (key == "label_weights") {
      spec.label_weights = value.get<std::vector<double>>();
    } else if (key == "num_communities") {
      spec.num_communities = value.get<size_t>();
    } else if (key == "p_in") {
      spec.p_in = value.get<double>();
    } else if (key == "background_vocab") {
      spec.background_vocab = value.get<size_t>();
    } else if (key == "doc_len") {
      spec.doc_len = value.get<size_t>();
    } else if (key == "split_weights") {
      spec.split_weights = value.get<std::vector<double>>();
    } else {
      throw GeneratorSpecError("unknown generator spec key \"" + key + "\"");
    }
  }
  return spec;
}

SynthSpec SynthSpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GeneratorSpecError("cannot open generator spec \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string SynthSpec::to_json() const {
  json types = json::object();
  for (const auto& [name, count] : node_types) types[name] = count;
  json obj = {
      {"kind", kind},
      {"node_types", types},
      {"edges_per_node", edges_per_node},
      {"num_labels", num_labels},
      {"num_communities", num_communities},
      {"p_in", p_in},
      {"background_vocab", background_vocab},
      {"doc_len", doc_len},
      {"split_weights", split_weights},
  };
  if (!label_weights.empty()) obj["label_weights"] = label_weights;
  return obj.dump();
}

namespace {

struct GenState {
  const SynthSpec& spec;
  Rng& rng;
  TextualEdgeNetwork net;
  std::vector<int> community;                 // per node index
  std::vector<std::vector<int>> nodes_by_type;  // per spec type index
  Categorical background;
  Categorical splits;

  GenState(const SynthSpec& s, Rng& r)
      : spec(s), rng(r), background(zipf_weights(s.background_vocab)),
        splits(s.split_weights) {}

  void make_nodes() {
    for (size_t t = 0; t < spec.node_types.size(); ++t) {
      const auto& [name, count] = spec.node_types[t];
      std::vector<int> rows;
      for (size_t i = 0; i < count; ++i) {
        int idx = net.intern_node(name + "_" + std::to_string(i), name);
        rows.push_back(idx);
        community.resize(std::max(community.size(), static_cast<size_t>(idx) + 1), 0);
        community[idx] = static_cast<int>(i % spec.num_communities);
      }
      nodes_by_type.push_back(std::move(rows));
    }
  }

  std::string background_token() {
    return "w" + std::to_string(background.draw(rng));
  }

  std::string doc_with_inserts(const std::vector<std::string>& inserts) {
    std::vector<std::string> toks;
    toks.reserve(spec.doc_len + inserts.size());
    for (size_t i = 0; i < spec.doc_len; ++i) toks.push_back(background_token());
    for (const std::string& ins : inserts) {
      size_t pos = static_cast<size_t>(rng.uniform_int(toks.size() + 1));
      toks.insert(toks.begin() + static_cast<long>(pos), ins);
    }
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
      if (i) out.push_back(' ');
      out += toks[i];
    }
    return out;
  }

  // Uniform node of the given type; restrict to a community when c >= 0.
  // Returns -1 when no candidate exists.
  int pick_node(size_t type_idx, int c) {
    const std::vector<int>& rows = nodes_by_type[type_idx];
    if (c < 0) return rows[rng.uniform_int(rows.size())];
    std::vector<int> filtered;
    for (int n : rows) {
      if (community[n] == c) filtered.push_back(n);
    }
    if (filtered.empty()) return -1;
    return filtered[rng.uniform_int(filtered.size())];
  }

  // Endpoint pair honoring the bipartite convention (exactly two types ->
  // u from the first, v from the second). cu/cv < 0 = any community.
  std::pair<int, int> pick_pair(int cu, int cv) {
    if (spec.node_types.size() == 2) {
      int u = pick_node(0, cu);
      int v = pick_node(1, cv);
      return {u, v};
    }
    // Draw over all nodes; communities filter when requested.
    std::vector<int> all;
    for (const auto& rows : nodes_by_type) all.insert(all.end(), rows.begin(), rows.end());
    auto draw_from = [&](int c, int avoid) -> int {
      std::vector<int> cand;
      for (int n : all) {
        if (n != avoid && (c < 0 || community[n] == c)) cand.push_back(n);
      }
      if (cand.empty()) return -1;
      return cand[rng.uniform_int(cand.size())];
    };
    int u = draw_from(cu, -1);
    if (u < 0) return {-1, -1};
    int v = draw_from(cv, u);
    return {u, v};
  }
};

size_t pair_capacity(const SynthSpec& spec) {
  if (spec.node_types.size() == 2) {
    return spec.node_types[0].second * spec.node_types[1].second;
  }
  size_t n = spec.total_nodes();
  return n * (n - 1) / 2;
}

void validate_spec(const SynthSpec& spec) {
  require(spec.kind == "keyword-sentiment" || spec.kind == "planted-affinity",
          "kind must be \"keyword-sentiment\" or \"planted-affinity\", got \"" +
              spec.kind + "\"");
  require(!spec.node_types.empty(), "node_types must name at least one type");
  for (const auto& [name, count] : spec.node_types) {
    require(count >= 1, "node count for type \"" + name + "\" must be >= 1");
  }
  require(spec.edges_per_node > 0.0, "edges_per_node must be positive");
  require(spec.background_vocab >= 1, "background_vocab must be >= 1");
  require(spec.doc_len >= 1, "doc_len must be >= 1");
  require(spec.split_weights.size() == 3,
          "split_weights must list train/val/test weights");
  if (spec.kind == "keyword-sentiment") {
    require(spec.num_labels >= 1, "num_labels must be >= 1");
    require(spec.label_weights.empty() ||
                spec.label_weights.size() == spec.num_labels,
            "label_weights length must equal num_labels");
  } else {
    require(spec.num_communities >= 1, "num_communities must be >= 1");
    require(spec.p_in >= 0.0 && spec.p_in <= 1.0, "p_in must lie in [0, 1]");
  }
  size_t edges = spec.total_edges();
  require(edges >= 1, "spec yields zero edges");
  size_t cap = pair_capacity(spec);
  require(edges <= cap, "infeasible: " + std::to_string(edges) +
                            " edges requested but only " + std::to_string(cap) +
                            " distinct pairs exist");
}

}  // namespace

SynthResult synth_generate(uint64_t seed, const SynthSpec& spec) {
  validate_spec(spec);
  Rng rng(seed);
  GenState st(spec, rng);
  st.make_nodes();

  size_t target = spec.total_edges();
  size_t attempts_left = 200 * target + 10000;
  SynthResult result;

  if (spec.kind == "keyword-sentiment") {
    std::vector<double> lw = spec.label_weights;
    if (lw.empty()) lw.assign(spec.num_labels, 1.0);
    Categorical labels(lw);
    for (size_t c = 0; c < spec.num_labels; ++c) {
      result.label_keywords.push_back("k" + std::to_string(c));
    }
    for (size_t e = 0; e < target;) {
      require(attempts_left-- > 0,
              "edge density too close to the maximum; could not place edge " +
                  std::to_string(e));
      auto [u, v] = st.pick_pair(-1, -1);
      if (u < 0 || v < 0 || u == v || st.net.adjacent(u, v)) continue;
      int label = static_cast<int>(labels.draw(rng));
      std::string text = st.doc_with_inserts({result.label_keywords[label]});
      st.net.add_edge_indexed(u, v, std::move(text), label,
                              draw_split(st.splits, rng));
      ++e;
    }
  } else {
    size_t k = spec.num_communities;
    for (size_t e = 0; e < target;) {
      require(attempts_left-- > 0,
              "edge density too close to the maximum; could not place edge " +
                  std::to_string(e));
      bool intra = k == 1 || rng.uniform() < spec.p_in;
      int cu, cv;
      if (intra) {
        cu = cv = static_cast<int>(rng.uniform_int(k));
      } else {
        cu = static_cast<int>(rng.uniform_int(k));
        cv = static_cast<int>(rng.uniform_int(k - 1));
        if (cv >= cu) ++cv;
      }
      auto [u, v] = st.pick_pair(cu, cv);
      if (u < 0 || v < 0 || u == v || st.net.adjacent(u, v)) continue;
      std::vector<std::string> topics;
      auto topic = [](int c, int slot) {
        return "t" + std::to_string(c) + static_cast<char>('a' + slot);
      };
      if (intra) {
        topics = {topic(cu, static_cast<int>(rng.uniform_int(3))),
                  topic(cu, static_cast<int>(rng.uniform_int(3)))};
      } else {
        topics = {topic(cu, static_cast<int>(rng.uniform_int(3))),
                  topic(cv, static_cast<int>(rng.uniform_int(3)))};
      }
      std::string text = st.doc_with_inserts(topics);
      st.net.add_edge_indexed(u, v, std::move(text), -1,
                              draw_split(st.splits, rng));
      ++e;
    }
    result.node_community = st.community;
    for (size_t n = 0; n < st.net.num_nodes(); ++n) {
      st.net.set_node_labels(static_cast<int>(n), {st.community[n]});
    }
  }

  st.net.validate();
  result.network = std::move(st.net);
  return result;
}

}  // namespace edgeformer
