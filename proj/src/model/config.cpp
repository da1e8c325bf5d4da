#include "match2/model/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace match2 {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kQOnly: return "q-only";
    case Ablation::kAOnly: return "a-only";
  }
  return "full";
}

std::string to_string(SimilarityFn f) {
  switch (f) {
    case SimilarityFn::kDot: return "dot";
    case SimilarityFn::kCos: return "cos";
    case SimilarityFn::kL1: return "l1";
    case SimilarityFn::kL2: return "l2";
    case SimilarityFn::kJss: return "jss";
  }
  return "dot";
}

Ablation ablation_from_string(const std::string& s) {
  std::string low = s;
  std::transform(low.begin(), low.end(), low.begin(), ::tolower);
  if (low == "full") return Ablation::kFull;
  if (low == "q-only" || low == "q_only" || low == "qonly") return Ablation::kQOnly;
  if (low == "a-only" || low == "a_only" || low == "aonly") return Ablation::kAOnly;
  throw_error(ErrorCategory::kConfig,
              "ablation must be full, Q-only or A-only, got '" + s + "'");
}

SimilarityFn similarity_fn_from_string(const std::string& s) {
  std::string low = s;
  std::transform(low.begin(), low.end(), low.begin(), ::tolower);
  if (low == "dot") return SimilarityFn::kDot;
  if (low == "cos") return SimilarityFn::kCos;
  if (low == "l1") return SimilarityFn::kL1;
  if (low == "l2") return SimilarityFn::kL2;
  if (low == "jss") return SimilarityFn::kJss;
  throw_error(ErrorCategory::kConfig,
              "sim_fn must be one of dot, cos, l1, l2, jss; got '" + s + "'");
}

void EncoderConfig::validate() const {
  if (layers < 1)
    throw_error(ErrorCategory::kConfig, "encoder layers must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0)
    throw_error(ErrorCategory::kConfig,
                "encoder hidden size must be divisible by heads");
  if (max_position < 4)
    throw_error(ErrorCategory::kConfig, "max_position too small");
  if (vocab_size < 4)
    throw_error(ErrorCategory::kConfig, "vocab_size not set");
}

EncoderConfig Config::encoder_config(int64_t vocab_size) const {
  EncoderConfig e;
  e.layers = layers;
  e.hidden = hidden;
  e.heads = heads;
  e.ffn = ffn;
  e.max_position = max_position;
  e.vocab_size = vocab_size;
  return e;
}

void Config::validate() const {
  if (ratio < 0.0 || ratio > 1.0)
    throw_error(ErrorCategory::kConfig, "ratio must be in [0,1]");
  if (p_neg < 0.0 || p_neg > 1.0)
    throw_error(ErrorCategory::kConfig, "p_neg must be in [0,1]");
  if (top_k < 1)
    throw_error(ErrorCategory::kConfig, "top_k must be >= 1");
  if (batch < 1)
    throw_error(ErrorCategory::kConfig, "batch must be >= 1");
  if (max_question < 1 || max_answer < 1)
    throw_error(ErrorCategory::kConfig, "truncation limits must be positive");
  if (keep_decay <= 0.0 || keep_decay > 1.0)
    throw_error(ErrorCategory::kConfig, "keep_decay must be in (0,1]");
  if (keep_interval < 1)
    throw_error(ErrorCategory::kConfig, "keep_interval must be >= 1");
  ablation_from_string(ablation);
  similarity_fn_from_string(sim_fn);
  EncoderConfig probe = encoder_config(4);
  probe.validate();
}

namespace {

template <typename T>
std::string num_str(T v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw_error(ErrorCategory::kConfig,
                "config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw_error(ErrorCategory::kConfig,
                "config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> Config::to_map() const {
  return {
      {"layers", num_str(layers)},
      {"hidden", num_str(hidden)},
      {"heads", num_str(heads)},
      {"ffn", num_str(ffn)},
      {"max_position", num_str(max_position)},
      {"min_freq", num_str(min_freq)},
      {"max_question", num_str(max_question)},
      {"max_answer", num_str(max_answer)},
      {"ratio", num_str(ratio)},
      {"top_k", num_str(top_k)},
      {"p_neg", num_str(p_neg)},
      {"lr", num_str(lr)},
      {"beta1", num_str(beta1)},
      {"beta2", num_str(beta2)},
      {"epsilon", num_str(epsilon)},
      {"keep_decay", num_str(keep_decay)},
      {"keep_interval", num_str(keep_interval)},
      {"keep_floor", num_str(keep_floor)},
      {"batch", num_str(batch)},
      {"epochs", num_str(epochs)},
      {"seed", num_str(seed)},
      {"init_stddev", num_str(init_stddev)},
      {"mlp_hidden", num_str(mlp_hidden)},
      {"ablation", ablation},
      {"sim_fn", sim_fn},
  };
}

Config Config::from_map(const std::map<std::string, std::string>& kv) {
  Config c;
  for (const auto& [key, value] : kv) {
    if (key == "layers") c.layers = to_int(key, value);
    else if (key == "hidden") c.hidden = to_int(key, value);
    else if (key == "heads") c.heads = to_int(key, value);
    else if (key == "ffn") c.ffn = to_int(key, value);
    else if (key == "max_position") c.max_position = to_int(key, value);
    else if (key == "min_freq") c.min_freq = to_int(key, value);
    else if (key == "max_question") c.max_question = to_int(key, value);
    else if (key == "max_answer") c.max_answer = to_int(key, value);
    else if (key == "ratio") c.ratio = to_double(key, value);
    else if (key == "top_k") c.top_k = to_int(key, value);
    else if (key == "p_neg") c.p_neg = to_double(key, value);
    else if (key == "lr") c.lr = to_double(key, value);
    else if (key == "beta1") c.beta1 = to_double(key, value);
    else if (key == "beta2") c.beta2 = to_double(key, value);
    else if (key == "epsilon") c.epsilon = to_double(key, value);
    else if (key == "keep_decay") c.keep_decay = to_double(key, value);
    else if (key == "keep_interval") c.keep_interval = to_int(key, value);
    else if (key == "keep_floor") c.keep_floor = to_double(key, value);
    else if (key == "batch") c.batch = to_int(key, value);
    else if (key == "epochs") c.epochs = to_int(key, value);
    else if (key == "seed") c.seed = to_int(key, value);
    else if (key == "init_stddev") c.init_stddev = to_double(key, value);
    else if (key == "mlp_hidden") c.mlp_hidden = to_int(key, value);
    else if (key == "ablation") c.ablation = value;
    else if (key == "sim_fn") c.sim_fn = value;
    else
      throw_error(ErrorCategory::kConfig, "unknown config key '" + key + "'");
  }
  return c;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw_error(ErrorCategory::kConfig, "cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw_error(ErrorCategory::kConfig,
                  "config line " + std::to_string(line_no) + " is not key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw_error(ErrorCategory::kConfig, "--set expects key=value, got '" + s + "'");
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
}

Config parse_config_file(const std::string& path) {
  return Config::from_map(read_key_values(path));
}

void write_config_file(const Config& config, const std::string& path) {
  std::ofstream out(path);
  if (!out)
    throw_error(ErrorCategory::kConfig, "cannot write config file " + path);
  for (const auto& [k, v] : config.to_map()) out << k << " = " << v << "\n";
}

}  // namespace match2
