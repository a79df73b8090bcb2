#include "edgeformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "edgeformer/errors.hpp"

namespace edgeformer {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Little-endian scalar append; the host is assumed little-endian (checked).
template <typename T>
void append_scalar(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint serialization assumes a little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_scalar(const std::string& bytes, size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

std::vector<std::string> trainable_names(const Model& model,
                                         const AdamW& optimizer) {
  std::vector<std::string> names;
  for (size_t idx : optimizer.trainable_indices())
    names.push_back(model.params.items()[idx].first);
  return names;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Model& model,
                     const Vocabulary& vocab, const TrainConfig& config,
                     const AdamW* optimizer) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create directory " + dir);

  json params = json::array();
  std::string blob;
  for (const auto& [name, tensor] : model.params.items()) {
    params.push_back({{"name", name}, {"shape", tensor.shape()}});
    for (size_t i = 0; i < tensor.numel(); ++i)
      append_scalar(blob, static_cast<float>(tensor.at(i)));
  }

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = json::parse(config.to_json());
  manifest["num_labels"] = model.config.num_labels;
  manifest["node_ids"] = model.node_ids;
  manifest["params"] = params;
  manifest["optimizer_step"] = optimizer ? optimizer->step_count() : 0;
  if (optimizer) manifest["trainable"] = trainable_names(model, *optimizer);

  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
  write_file(dir + "/params.bin", blob);

  std::string vocab_text;
  for (const std::string& token : vocab.tokens()) {
    vocab_text += token;
    vocab_text += '\n';
  }
  write_file(dir + "/vocab.txt", vocab_text);

  if (optimizer) {
    std::string opt_blob;
    const auto& m = optimizer->first_moments();
    const auto& v = optimizer->second_moments();
    for (size_t p = 0; p < m.size(); ++p) {
      for (double x : m[p]) append_scalar(opt_blob, x);
      for (double x : v[p]) append_scalar(opt_blob, x);
    }
    write_file(dir + "/opt.bin", opt_blob);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version") ||
      !manifest["format_version"].is_number_integer())
    throw CheckpointError("manifest is missing format_version");
  if (manifest["format_version"].get<int>() != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version");

  LoadedCheckpoint loaded;
  try {
    loaded.config = TrainConfig::from_json_text(manifest.at("config").dump());
    loaded.optimizer_step = manifest.at("optimizer_step").get<int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  } catch (const ValueError& e) {
    throw CheckpointError(std::string("bad config in manifest: ") + e.what());
  }

  std::string vocab_text = read_file(dir + "/vocab.txt");
  std::vector<std::string> lines;
  std::string line;
  std::istringstream vs(vocab_text);
  while (std::getline(vs, line)) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != "[PAD]" || lines[1] != "[CLS]" ||
      lines[2] != "[UNK]")
    throw CheckpointError("vocab.txt does not start with the reserved tokens");
  loaded.vocab = Vocabulary(
      std::vector<std::string>(lines.begin() + 3, lines.end()));

  std::vector<std::string> node_ids;
  size_t num_labels = 0;
  try {
    node_ids = manifest.at("node_ids").get<std::vector<std::string>>();
    num_labels = manifest.at("num_labels").get<size_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }

  ModelConfig mc = loaded.config.model_config();
  mc.vocab_size = loaded.vocab.size();
  mc.num_nodes = node_ids.size();
  mc.num_labels = num_labels;
  loaded.model = init_model(mc, node_ids, 0);

  const json& params = manifest.at("params");
  const auto& items = loaded.model.params.items();
  if (!params.is_array() || params.size() != items.size())
    throw CheckpointError("manifest parameter list does not match the model");
  std::string blob = read_file(dir + "/params.bin");
  size_t offset = 0;
  for (size_t p = 0; p < items.size(); ++p) {
    const auto& entry = params[p];
    std::string name;
    std::vector<size_t> shape;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<std::vector<size_t>>();
    } catch (const json::exception& e) {
      throw CheckpointError(std::string("malformed manifest: ") + e.what());
    }
    const Tensor& tensor = items[p].second;
    if (name != items[p].first || shape != tensor.shape())
      throw CheckpointError("parameter \"" + name +
                            "\" disagrees with the model built from the config");
    if (offset + 4 * tensor.numel() > blob.size())
      throw CheckpointError("params.bin is shorter than the manifest shapes");
    Tensor handle = tensor;
    double* data = handle.mut_data();
    for (size_t i = 0; i < tensor.numel(); ++i, offset += 4)
      data[i] = static_cast<double>(read_scalar<float>(blob, offset));
  }
  if (offset != blob.size())
    throw CheckpointError("params.bin is longer than the manifest shapes");

  loaded.has_optimizer_state = manifest.contains("trainable") &&
                               std::filesystem::exists(dir + "/opt.bin");
  return loaded;
}

void load_optimizer_state(const std::string& dir, const Model& model,
                          AdamW& optimizer) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir + "/manifest.json"));
    optimizer.set_step_count(manifest.at("optimizer_step").get<int64_t>());
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.contains("trainable"))
    throw CheckpointError("checkpoint holds no optimizer state");
  std::vector<std::string> saved;
  try {
    saved = manifest.at("trainable").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }
  if (saved != trainable_names(model, optimizer))
    throw CheckpointError(
        "checkpoint optimizer state covers a different trainable set");

  std::string blob = read_file(dir + "/opt.bin");
  auto& m = optimizer.first_moments();
  auto& v = optimizer.second_moments();
  size_t offset = 0;
  for (size_t p = 0; p < m.size(); ++p) {
    if (offset + 8 * (m[p].size() + v[p].size()) > blob.size())
      throw CheckpointError("opt.bin is shorter than the trainable set");
    for (double& x : m[p]) {
      x = read_scalar<double>(blob, offset);
      offset += 8;
    }
    for (double& x : v[p]) {
      x = read_scalar<double>(blob, offset);
      offset += 8;
    }
  }
  if (offset != blob.size())
    throw CheckpointError("opt.bin is longer than the trainable set");
}

}  // namespace edgeformer
