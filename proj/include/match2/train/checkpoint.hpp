#pragma once

// Checkpoint directory layout:
//   manifest.json  names, shapes, dtype, config echo, format version
//   vocab.txt      vocabulary, one token per line in id order
//   *.bin          one raw little-endian float32 blob per named tensor
// Model weights live under the "model" namespace, batch-norm running
// statistics under "bn_stats", optimizer moments under "optimizer".

#include <optional>
#include <string>

#include "match2/model/config.hpp"
#include "match2/model/model.hpp"
#include "match2/text/vocab.hpp"
#include "match2/train/radam.hpp"

namespace match2 {

struct Checkpoint {
  Config config;
  Vocabulary vocab;
  ModelParams params;
  int64_t optimizer_step = 0;
  std::vector<std::vector<double>> optimizer_m, optimizer_v;  // registry order
  bool has_optimizer_state = false;
};

void save_checkpoint(const std::string& dir, const Config& config,
                     const Vocabulary& vocab, const ModelParams& params,
                     const RAdamOptimizer<float>* optimizer = nullptr);

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace match2
