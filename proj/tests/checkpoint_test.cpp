#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "edgeformer/checkpoint.hpp"
#include "edgeformer/errors.hpp"
#include "edgeformer/tensor.hpp"

namespace ef = edgeformer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("ckpt_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  EXPECT_TRUE(in.good()) << file;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ef::TrainConfig small_config() {
  ef::TrainConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_node = 4;
  c.max_seq_len = 8;
  c.readout = "neighbor_token";
  c.per_type_cap = {{"item", 3}};
  c.seed = 21;
  return c;
}

struct Fixture {
  ef::TrainConfig config = small_config();
  ef::Vocabulary vocab{std::vector<std::string>{"alpha", "beta", "gamma"}};
  ef::Model model;

  explicit Fixture(size_t num_labels = 2, uint64_t seed = 31) {
    ef::ModelConfig mc = config.model_config();
    mc.vocab_size = vocab.size();
    mc.num_nodes = 4;
    mc.num_labels = num_labels;
    model = ef::init_model(mc, {"q", "a", "z", "m"}, seed);
  }
};

// Gives every parameter a constant gradient so optimizer moments move.
void run_constant_grad_steps(ef::Model& model, ef::AdamW& opt, int steps) {
  for (int s = 0; s < steps; ++s) {
    ef::Tape tape;
    ef::TapeScope scope(tape);
    ef::Tensor loss;
    bool first = true;
    for (const auto& [name, param] : model.params.items()) {
      ef::Tensor term = ef::scale(ef::sum(param), 0.25);
      loss = first ? term : ef::add(loss, term);
      first = false;
    }
    ef::backward(loss);
    opt.step(model.params);
  }
}

}  // namespace

TEST(Checkpoint, SaveLoadRoundTripKeepsModelAndConfig) {
  TempDir tmp;
  Fixture fx;
  ef::save_checkpoint(tmp.sub("ck"), fx.model, fx.vocab, fx.config);

  ef::LoadedCheckpoint loaded = ef::load_checkpoint(tmp.sub("ck"));
  EXPECT_EQ(loaded.config.to_json(), fx.config.to_json());
  EXPECT_EQ(loaded.model.node_ids, fx.model.node_ids);
  EXPECT_EQ(loaded.model.config.num_labels, 2u);
  EXPECT_EQ(loaded.vocab.tokens(), fx.vocab.tokens());
  EXPECT_EQ(loaded.optimizer_step, 0);
  EXPECT_FALSE(loaded.has_optimizer_state);

  // Parameters survive up to float32 rounding; values here are O(1) at most.
  const auto& saved = fx.model.params.items();
  const auto& back = loaded.model.params.items();
  ASSERT_EQ(saved.size(), back.size());
  for (size_t p = 0; p < saved.size(); ++p) {
    EXPECT_EQ(saved[p].first, back[p].first);
    ASSERT_EQ(saved[p].second.shape(), back[p].second.shape());
    for (size_t i = 0; i < saved[p].second.numel(); ++i) {
      EXPECT_NEAR(back[p].second.at(i), saved[p].second.at(i), 1e-7);
    }
  }
}

TEST(Checkpoint, ResaveAfterLoadIsByteIdentical) {
  TempDir tmp;
  Fixture fx;
  ef::save_checkpoint(tmp.sub("one"), fx.model, fx.vocab, fx.config);
  ef::LoadedCheckpoint loaded = ef::load_checkpoint(tmp.sub("one"));
  ef::save_checkpoint(tmp.sub("two"), loaded.model, loaded.vocab, loaded.config);

  for (const char* file : {"manifest.json", "params.bin", "vocab.txt"}) {
    EXPECT_EQ(slurp(tmp.sub("one") + "/" + file),
              slurp(tmp.sub("two") + "/" + file))
        << file;
  }
}

TEST(Checkpoint, OptimizerStateRoundTripsExactly) {
  TempDir tmp;
  Fixture fx;
  ef::apply_trainable_mask(fx.model, "edge", fx.config);
  ef::AdamW opt(fx.model.params, fx.config.adamw_config());
  run_constant_grad_steps(fx.model, opt, 3);
  ef::save_checkpoint(tmp.sub("ck"), fx.model, fx.vocab, fx.config, &opt);

  ef::LoadedCheckpoint loaded = ef::load_checkpoint(tmp.sub("ck"));
  EXPECT_TRUE(loaded.has_optimizer_state);
  EXPECT_EQ(loaded.optimizer_step, 3);

  ef::apply_trainable_mask(loaded.model, "edge", loaded.config);
  ef::AdamW opt2(loaded.model.params, loaded.config.adamw_config());
  ef::load_optimizer_state(tmp.sub("ck"), loaded.model, opt2);

  EXPECT_EQ(opt2.step_count(), 3);
  // Moments are stored as float64, so the restore is bitwise.
  EXPECT_EQ(opt.first_moments(), opt2.first_moments());
  EXPECT_EQ(opt.second_moments(), opt2.second_moments());
}

TEST(Checkpoint, OptimizerStateRejectsDifferentTrainableSet) {
  TempDir tmp;
  Fixture fx;
  ef::apply_trainable_mask(fx.model, "edge", fx.config);
  ef::AdamW opt(fx.model.params, fx.config.adamw_config());
  run_constant_grad_steps(fx.model, opt, 1);
  ef::save_checkpoint(tmp.sub("ck"), fx.model, fx.vocab, fx.config, &opt);

  ef::LoadedCheckpoint loaded = ef::load_checkpoint(tmp.sub("ck"));
  ef::apply_trainable_mask(loaded.model, "node", loaded.config);
  ef::AdamW mismatched(loaded.model.params, loaded.config.adamw_config());
  EXPECT_THROW(ef::load_optimizer_state(tmp.sub("ck"), loaded.model, mismatched),
               ef::CheckpointError);
}

TEST(Checkpoint, MissingOptimizerStateIsReported) {
  TempDir tmp;
  Fixture fx;
  ef::save_checkpoint(tmp.sub("ck"), fx.model, fx.vocab, fx.config);
  ef::AdamW opt(fx.model.params, fx.config.adamw_config());
  try {
    ef::load_optimizer_state(tmp.sub("ck"), fx.model, opt);
    FAIL() << "expected CheckpointError";
  } catch (const ef::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("no optimizer state"),
              std::string::npos);
  }
}

TEST(Checkpoint, DetectsMissingAndCorruptFiles) {
  TempDir tmp;
  Fixture fx;
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("never_saved")), ef::CheckpointError);

  ef::save_checkpoint(tmp.sub("ck"), fx.model, fx.vocab, fx.config);
  ASSERT_NO_THROW(ef::load_checkpoint(tmp.sub("ck")));

  // Truncated and padded parameter blobs.
  const std::string params = slurp(tmp.sub("ck") + "/params.bin");
  spit(tmp.sub("ck") + "/params.bin", params.substr(0, params.size() - 4));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);
  spit(tmp.sub("ck") + "/params.bin", params + std::string(4, '\0'));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);
  spit(tmp.sub("ck") + "/params.bin", params);
  ASSERT_NO_THROW(ef::load_checkpoint(tmp.sub("ck")));

  // Reserved vocab rows out of place.
  const std::string vocab = slurp(tmp.sub("ck") + "/vocab.txt");
  spit(tmp.sub("ck") + "/vocab.txt", "PAD\n" + vocab.substr(6));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);
  spit(tmp.sub("ck") + "/vocab.txt", vocab);

  // Manifest tampering: bad JSON, wrong version, shape mismatch.
  const std::string manifest = slurp(tmp.sub("ck") + "/manifest.json");
  spit(tmp.sub("ck") + "/manifest.json", manifest.substr(0, 10));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);

  nlohmann::json doc = nlohmann::json::parse(manifest);
  doc["format_version"] = 9;
  spit(tmp.sub("ck") + "/manifest.json", doc.dump(2));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);

  doc = nlohmann::json::parse(manifest);
  doc["params"][0]["shape"] = {1, 1};
  spit(tmp.sub("ck") + "/manifest.json", doc.dump(2));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);

  doc = nlohmann::json::parse(manifest);
  doc["config"]["lr"] = -1.0;
  spit(tmp.sub("ck") + "/manifest.json", doc.dump(2));
  EXPECT_THROW(ef::load_checkpoint(tmp.sub("ck")), ef::CheckpointError);

  spit(tmp.sub("ck") + "/manifest.json", manifest);
  ASSERT_NO_THROW(ef::load_checkpoint(tmp.sub("ck")));
}

TEST(Checkpoint, DetectsTruncatedOptimizerBlob) {
  TempDir tmp;
  Fixture fx;
  ef::apply_trainable_mask(fx.model, "edge", fx.config);
  ef::AdamW opt(fx.model.params, fx.config.adamw_config());
  run_constant_grad_steps(fx.model, opt, 1);
  ef::save_checkpoint(tmp.sub("ck"), fx.model, fx.vocab, fx.config, &opt);

  const std::string blob = slurp(tmp.sub("ck") + "/opt.bin");
  spit(tmp.sub("ck") + "/opt.bin", blob.substr(0, blob.size() - 8));

  ef::LoadedCheckpoint loaded = ef::load_checkpoint(tmp.sub("ck"));
  ef::apply_trainable_mask(loaded.model, "edge", loaded.config);
  ef::AdamW opt2(loaded.model.params, loaded.config.adamw_config());
  EXPECT_THROW(ef::load_optimizer_state(tmp.sub("ck"), loaded.model, opt2),
               ef::CheckpointError);
}

TEST(Checkpoint, ResumedStepMatchesUninterruptedRun) {
  // Two constant-gradient steps, checkpoint, restore, two more: identical to
  // four straight steps because moments and step count round-trip exactly.
  TempDir tmp;
  Fixture straight;
  ef::apply_trainable_mask(straight.model, "edge", straight.config);
  ef::AdamW opt_straight(straight.model.params, straight.config.adamw_config());
  run_constant_grad_steps(straight.model, opt_straight, 4);

  Fixture resumed;
  ef::apply_trainable_mask(resumed.model, "edge", resumed.config);
  ef::AdamW opt_a(resumed.model.params, resumed.config.adamw_config());
  run_constant_grad_steps(resumed.model, opt_a, 2);
  ef::save_checkpoint(tmp.sub("mid"), resumed.model, resumed.vocab,
                      resumed.config, &opt_a);

  ef::LoadedCheckpoint loaded = ef::load_checkpoint(tmp.sub("mid"));
  ef::apply_trainable_mask(loaded.model, "edge", loaded.config);
  ef::AdamW opt_b(loaded.model.params, loaded.config.adamw_config());
  ef::load_optimizer_state(tmp.sub("mid"), loaded.model, opt_b);
  run_constant_grad_steps(loaded.model, opt_b, 2);

  // float32 parameter storage perturbs the resumed trajectory, so compare at
  // that precision rather than bitwise.
  const auto& a = straight.model.params.items();
  const auto& b = loaded.model.params.items();
  ASSERT_EQ(a.size(), b.size());
  for (size_t p = 0; p < a.size(); ++p) {
    for (size_t i = 0; i < a[p].second.numel(); ++i) {
      EXPECT_NEAR(a[p].second.at(i), b[p].second.at(i), 1e-6) << a[p].first;
    }
  }
  EXPECT_EQ(opt_b.step_count(), 4);
}