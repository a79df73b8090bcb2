#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgeformer/optimizer.hpp"
#include "edgeformer/trainer.hpp"

namespace edgeformer {

// On-disk layout under one directory:
//   manifest.json  format version, config echo, label count, node id table,
//                  ordered parameter names + shapes, optimizer step,
//                  trainable parameter names when optimizer state is saved
//   params.bin     all parameters as little-endian float32, manifest order
//   vocab.txt      one token per line, line number = token id
//   opt.bin        per trainable parameter: first then second moments,
//                  little-endian float64 (present when saved with state)

struct LoadedCheckpoint {
  Model model;
  Vocabulary vocab;
  TrainConfig config;
  int64_t optimizer_step = 0;
  bool has_optimizer_state = false;
};

void save_checkpoint(const std::string& dir, const Model& model,
                     const Vocabulary& vocab, const TrainConfig& config,
                     const AdamW* optimizer = nullptr);

// CheckpointError on missing files, malformed manifest, or any disagreement
// between manifest shapes and blob sizes.
LoadedCheckpoint load_checkpoint(const std::string& dir);

// Restores moments and step count into an optimizer whose trainable set must
// match the one recorded in the manifest.
void load_optimizer_state(const std::string& dir, const Model& model,
                          AdamW& optimizer);

}  // namespace edgeformer
