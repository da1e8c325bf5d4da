#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "match2/common.hpp"

namespace match2 {

enum class Ablation { kFull, kQOnly, kAOnly };
enum class SimilarityFn { kDot, kCos, kL1, kL2, kJss };

std::string to_string(Ablation a);
std::string to_string(SimilarityFn f);
Ablation ablation_from_string(const std::string& s);
SimilarityFn similarity_fn_from_string(const std::string& s);

struct EncoderConfig {
  int64_t layers = 4;        // L
  int64_t hidden = 64;       // H
  int64_t heads = 4;
  int64_t ffn = 0;           // 0 means 4 * hidden
  int64_t max_position = 300;
  int64_t vocab_size = 0;

  int64_t ffn_size() const { return ffn > 0 ? ffn : 4 * hidden; }
  int64_t head_size() const { return hidden / heads; }
  void validate() const;
};

// Flat run configuration; every field maps to one key in the config file and
// can be overridden with --set key=value.
struct Config {
  // encoder
  int64_t layers = 4;
  int64_t hidden = 64;
  int64_t heads = 4;
  int64_t ffn = 0;
  int64_t max_position = 300;
  // text pipeline
  int64_t min_freq = 1;
  int64_t max_question = 24;
  int64_t max_answer = 256;
  // training
  double ratio = 0.6;      // main task loss ratio r
  int64_t top_k = 5;       // K negative candidates
  double p_neg = 0.5;      // chance of adding a sampled-negative instance
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double keep_decay = 0.933;
  int64_t keep_interval = 5000;
  double keep_floor = 0.5;
  int64_t batch = 32;
  int64_t epochs = 5;
  int64_t seed = 42;
  double init_stddev = 0.2;
  int64_t mlp_hidden = 0;  // 0 means hidden
  std::string ablation = "full";    // full | q-only | a-only
  std::string sim_fn = "dot";       // dot | cos | l1 | l2 | jss

  EncoderConfig encoder_config(int64_t vocab_size) const;
  Ablation ablation_mode() const { return ablation_from_string(ablation); }
  SimilarityFn similarity() const { return similarity_fn_from_string(sim_fn); }
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  static Config from_map(const std::map<std::string, std::string>& kv);
};

// Flat key = value text, '#' comments, blank lines ignored.
Config parse_config_file(const std::string& path);
std::map<std::string, std::string> read_key_values(const std::string& path);
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& sets);
void write_config_file(const Config& config, const std::string& path);

}  // namespace match2
