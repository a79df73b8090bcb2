#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "edgeformer/checkpoint.hpp"
#include "edgeformer/edge_encoder.hpp"
#include "edgeformer/metrics.hpp"
#include "edgeformer/node_encoder.hpp"
#include "edgeformer/synth.hpp"
#include "edgeformer/trainer.hpp"

namespace ef = edgeformer;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitSpec = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheckpoint = 4;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ef::ValueError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ef::ValueError("cannot write file: " + path);
  out << text;
  if (!out) throw ef::ValueError("short write to " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ef::ValueError("cannot create directory " + dir);
}

struct SynthArgs {
  std::string spec_path;
  std::string out_dir;
  uint64_t seed = 0;
};

int run_synth(const SynthArgs& args) {
  ef::SynthSpec spec = ef::SynthSpec::from_json_text(read_text_file(args.spec_path));
  ef::SynthResult result = ef::synth_generate(args.seed, spec);
  const ef::TextualEdgeNetwork& net = result.network;
  ensure_dir(args.out_dir);

  std::string edges;
  for (int e = 0; e < static_cast<int>(net.num_edges()); ++e) {
    const ef::EdgeRecord& edge = net.edge(e);
    json row;
    row["u"] = net.node(edge.u).id;
    row["v"] = net.node(edge.v).id;
    row["text"] = net.edge_text(e);
    if (edge.label >= 0) row["label"] = edge.label;
    if (edge.split != ef::Split::none) row["split"] = ef::split_name(edge.split);
    if (!net.node(edge.u).type.empty()) row["u_type"] = net.node(edge.u).type;
    if (!net.node(edge.v).type.empty()) row["v_type"] = net.node(edge.v).type;
    edges += row.dump();
    edges += '\n';
  }
  write_text_file(args.out_dir + "/edges.jsonl", edges);

  json truth;
  truth["kind"] = spec.kind;
  truth["seed"] = args.seed;
  truth["spec"] = json::parse(spec.to_json());
  if (!result.label_keywords.empty())
    truth["label_keywords"] = result.label_keywords;
  json node_labels = json::object();
  bool any_node_labels = false;
  for (int n = 0; n < static_cast<int>(net.num_nodes()); ++n) {
    const ef::NodeRecord& node = net.node(n);
    if (node.labels.empty()) continue;
    node_labels[node.id] = node.labels;
    any_node_labels = true;
  }
  if (any_node_labels) truth["node_labels"] = node_labels;
  write_text_file(args.out_dir + "/ground_truth.json", truth.dump(2) + "\n");

  std::cout << "wrote " << net.num_edges() << " edges over " << net.num_nodes()
            << " nodes to " << args.out_dir << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string graph_path;
  std::string config_path;
  std::string out_dir;
  std::string resume_dir;
  int64_t seed = -1;  // -1 = keep the config's seed
};

int run_train(const std::string& task, const TrainArgs& args) {
  if (!args.config_path.empty() && !args.resume_dir.empty())
    throw ef::ValueError("pass either --config or --resume, not both");

  ef::TextualEdgeNetwork network = ef::load_jsonl(args.graph_path);
  network.validate();

  ef::TrainConfig config;
  ef::Model model;
  ef::Vocabulary vocab;
  bool resumed = false;
  int64_t resume_step = 0;

  if (!args.resume_dir.empty()) {
    ef::LoadedCheckpoint loaded = ef::load_checkpoint(args.resume_dir);
    config = loaded.config;
    model = std::move(loaded.model);
    vocab = std::move(loaded.vocab);
    resumed = true;
    resume_step = loaded.optimizer_step;
  } else {
    if (!args.config_path.empty())
      config = ef::TrainConfig::from_json_file(args.config_path);
    if (args.seed >= 0) config.seed = static_cast<uint64_t>(args.seed);

    vocab = ef::build_vocab(network, config.vocab_size);
    std::vector<std::string> node_ids;
    node_ids.reserve(network.num_nodes());
    for (int n = 0; n < static_cast<int>(network.num_nodes()); ++n)
      node_ids.push_back(network.node(n).id);

    int max_label = -1;
    for (int e = 0; e < static_cast<int>(network.num_edges()); ++e)
      max_label = std::max(max_label, network.edge(e).label);
    if (task == "edge" && max_label < 0)
      throw ef::ValueError("train-edge needs labeled edges in the graph file");

    ef::ModelConfig mc = config.model_config();
    mc.vocab_size = vocab.size();
    mc.num_nodes = node_ids.size();
    mc.num_labels = static_cast<size_t>(max_label + 1);
    model = ef::init_model(mc, std::move(node_ids), config.seed);
  }
  if (args.seed >= 0 && resumed) config.seed = static_cast<uint64_t>(args.seed);

  ef::apply_trainable_mask(model, task, config);
  ef::AdamW optimizer(model.params, config.adamw_config());
  if (resumed) {
    ef::load_optimizer_state(args.resume_dir, model, optimizer);
    if (optimizer.step_count() != resume_step)
      throw ef::CheckpointError("optimizer step disagrees with the manifest");
  }

  ef::TrainResult result = task == "edge"
      ? ef::train_edge_task(network, vocab, model, optimizer, config)
      : ef::train_node_task(network, vocab, model, optimizer, config);

  ensure_dir(args.out_dir);
  std::string log_text;
  for (const std::string& line : result.epoch_log) {
    log_text += line;
    log_text += '\n';
  }
  write_text_file(args.out_dir + "/epochs.jsonl", log_text);
  write_text_file(args.out_dir + "/report.json", result.report.to_json() + "\n");
  ef::save_checkpoint(args.out_dir + "/checkpoint", model, vocab, config,
                      &optimizer);

  std::cout << result.report.to_json() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string graph_path;
  std::string checkpoint_dir;
  std::string task;
  std::string split = "test";
  std::string labels_path;
  uint64_t seed = 0;
  size_t negatives = 99;
};

// Node embeddings in network order; isolated nodes fall back to the learned
// base embedding. Each node gets its own sampling stream.
std::vector<std::vector<double>> all_node_embeddings(
    const ef::Model& model, const ef::TextualEdgeNetwork& network,
    const ef::Vocabulary& vocab, const ef::TrainConfig& config, uint64_t seed) {
  std::vector<int> row_of = ef::embedding_rows(model, network);
  ef::NodeRowMap row_map = [&](int n) { return row_of[n]; };
  ef::VirtualTokenFlags flags = config.flags();
  std::vector<std::vector<double>> out;
  out.reserve(network.num_nodes());
  for (int n = 0; n < static_cast<int>(network.num_nodes()); ++n) {
    ef::Rng rng = ef::Rng(seed).fork((static_cast<uint64_t>(n) + 1) * 1000003ULL);
    ef::EgoBatch ego = ef::make_ego_batch(
        network, vocab, model.config.max_seq_len, n,
        config.cap_for(network.node(n).type), rng, -1, row_map);
    ef::Tensor h = ego.edges.empty()
        ? ef::fallback_node_embedding(model, row_of[n])
        : ef::encode_node(model, ego, flags).h_v;
    std::vector<double> v(h.data(), h.data() + h.numel());
    out.push_back(std::move(v));
  }
  return out;
}

int run_eval(const EvalArgs& args) {
  ef::LoadedCheckpoint loaded = ef::load_checkpoint(args.checkpoint_dir);
  ef::TextualEdgeNetwork network = ef::load_jsonl(args.graph_path);
  network.validate();
  ef::Split split = ef::parse_split(args.split);

  ef::MetricReport report;
  if (args.task == "edge") {
    report = ef::eval_edge_classification(loaded.model, network, loaded.vocab,
                                          split, loaded.config.flags());
  } else if (args.task == "link") {
    ef::LinkEvalConfig lc;
    lc.k = args.negatives;
    lc.seed = args.seed;
    lc.neighbor_cap = loaded.config.neighbor_cap;
    lc.per_type_cap = loaded.config.per_type_cap;
    report = ef::eval_link_prediction(loaded.model, network, loaded.vocab,
                                      split, lc, loaded.config.flags());
  } else if (args.task == "probe") {
    if (args.labels_path.empty())
      throw ef::ValueError("--task probe needs --labels <ground_truth.json>");
    json truth;
    try {
      truth = json::parse(read_text_file(args.labels_path));
    } catch (const json::exception& e) {
      throw ef::ValueError(std::string("labels file is not valid JSON: ") +
                           e.what());
    }
    if (!truth.contains("node_labels") || !truth["node_labels"].is_object())
      throw ef::ValueError("labels file has no \"node_labels\" object");

    std::vector<std::vector<int>> labels(network.num_nodes());
    int max_label = -1;
    for (int n = 0; n < static_cast<int>(network.num_nodes()); ++n) {
      const std::string& id = network.node(n).id;
      auto it = truth["node_labels"].find(id);
      if (it == truth["node_labels"].end()) continue;
      try {
        labels[n] = it->get<std::vector<int>>();
      } catch (const json::exception&) {
        throw ef::ValueError("node_labels[\"" + id + "\"] must be an int array");
      }
      for (int c : labels[n]) max_label = std::max(max_label, c);
    }
    if (max_label < 0) throw ef::ValueError("labels file labels no graph node");

    std::vector<std::vector<double>> embeddings = all_node_embeddings(
        loaded.model, network, loaded.vocab, loaded.config, args.seed);

    // Seeded 60/20/20 node split.
    std::vector<size_t> order(network.num_nodes());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    ef::Rng(args.seed).fork(11).shuffle(order);
    std::vector<ef::Split> splits(network.num_nodes(), ef::Split::train);
    const size_t n_train = (order.size() * 6) / 10;
    const size_t n_val = (order.size() * 2) / 10;
    for (size_t i = 0; i < order.size(); ++i) {
      if (i < n_train) splits[order[i]] = ef::Split::train;
      else if (i < n_train + n_val) splits[order[i]] = ef::Split::val;
      else splits[order[i]] = ef::Split::test;
    }
    report = ef::logistic_probe(embeddings, labels, splits,
                                static_cast<size_t>(max_label + 1));
  } else {
    throw ef::ValueError("unknown eval task \"" + args.task + "\"");
  }

  std::cout << report.to_json() << "\n";
  return kExitOk;
}

struct EmbedArgs {
  std::string graph_path;
  std::string checkpoint_dir;
  std::string out_path;
  bool nodes = false;
  bool edges = false;
  uint64_t seed = 0;
};

int run_embed(const EmbedArgs& args) {
  if (args.nodes == args.edges)
    throw ef::ValueError("pass exactly one of --nodes or --edges");
  ef::LoadedCheckpoint loaded = ef::load_checkpoint(args.checkpoint_dir);
  ef::TextualEdgeNetwork network = ef::load_jsonl(args.graph_path);
  network.validate();

  std::string out;
  if (args.nodes) {
    std::vector<std::vector<double>> embeddings = all_node_embeddings(
        loaded.model, network, loaded.vocab, loaded.config, args.seed);
    for (int n = 0; n < static_cast<int>(network.num_nodes()); ++n) {
      json row;
      row["id"] = network.node(n).id;
      row["vector"] = embeddings[n];
      out += row.dump();
      out += '\n';
    }
  } else {
    std::vector<int> row_of = ef::embedding_rows(loaded.model, network);
    ef::VirtualTokenFlags flags = loaded.config.flags();
    for (int e = 0; e < static_cast<int>(network.num_edges()); ++e) {
      const ef::EdgeRecord& edge = network.edge(e);
      ef::TokenSequence tokens =
          ef::tokenize(loaded.vocab, network.edge_text(e),
                       loaded.model.config.max_seq_len);
      ef::Tensor h = ef::encode_edge(loaded.model, tokens, row_of[edge.u],
                                     row_of[edge.v], flags)
                         .h_e;
      json row;
      row["id"] = e;
      row["vector"] = std::vector<double>(h.data(), h.data() + h.numel());
      out += row.dump();
      out += '\n';
    }
  }
  write_text_file(args.out_path, out);
  std::cout << "wrote " << (args.nodes ? network.num_nodes() : network.num_edges())
            << " vectors to " << args.out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-context transformer for networks whose edges carry text"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic network");
  synth->add_option("--spec", synth_args.spec_path, "Generator spec JSON")->required();
  synth->add_option("--seed", synth_args.seed, "Generator seed");
  synth->add_option("--out", synth_args.out_dir, "Output directory")->required();

  TrainArgs edge_args;
  CLI::App* train_edge = app.add_subcommand("train-edge", "Train edge classification");
  train_edge->add_option("--graph", edge_args.graph_path, "edges.jsonl file")->required();
  train_edge->add_option("--config", edge_args.config_path, "Training config JSON");
  train_edge->add_option("--out", edge_args.out_dir, "Output directory")->required();
  train_edge->add_option("--resume", edge_args.resume_dir, "Checkpoint to resume");
  train_edge->add_option("--seed", edge_args.seed, "Overrides the config seed");

  TrainArgs node_args;
  CLI::App* train_node = app.add_subcommand("train-node", "Train node link prediction");
  train_node->add_option("--graph", node_args.graph_path, "edges.jsonl file")->required();
  train_node->add_option("--config", node_args.config_path, "Training config JSON");
  train_node->add_option("--out", node_args.out_dir, "Output directory")->required();
  train_node->add_option("--resume", node_args.resume_dir, "Checkpoint to resume");
  train_node->add_option("--seed", node_args.seed, "Overrides the config seed");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--graph", eval_args.graph_path, "edges.jsonl file")->required();
  eval->add_option("--checkpoint", eval_args.checkpoint_dir, "Checkpoint directory")->required();
  eval->add_option("--task", eval_args.task, "edge | link | probe")->required();
  eval->add_option("--split", eval_args.split, "Split to score (default test)");
  eval->add_option("--labels", eval_args.labels_path, "Node labels JSON (probe)");
  eval->add_option("--seed", eval_args.seed, "Sampling seed");
  eval->add_option("--negatives", eval_args.negatives, "Negatives per query (link)");

  EmbedArgs embed_args;
  CLI::App* embed = app.add_subcommand("embed", "Export embeddings as JSON lines");
  embed->add_option("--graph", embed_args.graph_path, "edges.jsonl file")->required();
  embed->add_option("--checkpoint", embed_args.checkpoint_dir, "Checkpoint directory")->required();
  embed->add_option("--out", embed_args.out_path, "Output file")->required();
  embed->add_flag("--nodes", embed_args.nodes, "One vector per node");
  embed->add_flag("--edges", embed_args.edges, "One vector per edge");
  embed->add_option("--seed", embed_args.seed, "Ego sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (train_edge->parsed()) return run_train("edge", edge_args);
    if (train_node->parsed()) return run_train("node", node_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (embed->parsed()) return run_embed(embed_args);
  } catch (const ef::GeneratorSpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSpec;
  } catch (const ef::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ef::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
