#include "match2/train/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace match2 {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(sizeof(float) == 4, "checkpoint blobs assume 4-byte floats");

std::string blob_name(const std::string& ns, const std::string& name) {
  std::string file = ns + "__" + name;
  for (auto& c : file)
    if (c == '/' || c == ' ') c = '_';
  return file + ".bin";
}

void write_blob(const fs::path& dir, const std::string& file,
                std::span<const float> values) {
  std::ofstream out(dir / file, std::ios::binary);
  if (!out)
    throw_error(ErrorCategory::kIngestion, "cannot write " + (dir / file).string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
}

std::vector<float> read_blob(const fs::path& dir, const std::string& file,
                             int64_t expect) {
  std::ifstream in(dir / file, std::ios::binary | std::ios::ate);
  if (!in)
    throw_error(ErrorCategory::kIngestion, "missing blob " + (dir / file).string());
  auto bytes = static_cast<int64_t>(in.tellg());
  if (bytes != expect * static_cast<int64_t>(sizeof(float)))
    throw_error(ErrorCategory::kIngestion,
                "blob " + file + " has " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expect * 4));
  std::vector<float> values(static_cast<size_t>(expect));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), bytes);
  return values;
}

json tensor_entry(const std::string& ns, const std::string& name,
                  const TensorT<float>& t) {
  json e;
  e["name"] = name;
  e["namespace"] = ns;
  e["shape"] = t.shape();
  e["file"] = blob_name(ns, name);
  return e;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Config& config,
                     const Vocabulary& vocab, const ModelParams& params,
                     const RAdamOptimizer<float>* optimizer) {
  fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec)
    throw_error(ErrorCategory::kIngestion, "cannot create checkpoint dir " + dir);

  json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = "float32";
  manifest["config"] = config.to_map();
  manifest["vocab_file"] = "vocab.txt";
  manifest["vocab_size"] = vocab.size();

  auto tensors = json::array();
  auto trainable = params.trainable();
  for (const auto& e : trainable.entries()) {
    tensors.push_back(tensor_entry("model", e.name, e.tensor));
    write_blob(root, blob_name("model", e.name), e.tensor.values());
  }
  auto buffers = params.buffers();
  for (const auto& e : buffers.entries()) {
    tensors.push_back(tensor_entry("bn_stats", e.name, e.tensor));
    write_blob(root, blob_name("bn_stats", e.name), e.tensor.values());
  }
  if (optimizer && optimizer->step_count() > 0) {
    manifest["optimizer_step"] = optimizer->step_count();
    const auto& ms = optimizer->first_moments();
    const auto& vs = optimizer->second_moments();
    for (size_t i = 0; i < trainable.size(); ++i) {
      const auto& name = trainable.entries()[i].name;
      std::vector<float> m32(ms[i].begin(), ms[i].end());
      std::vector<float> v32(vs[i].begin(), vs[i].end());
      json em;
      em["name"] = "m/" + name;
      em["namespace"] = "optimizer";
      em["shape"] = trainable.entries()[i].tensor.shape();
      em["file"] = blob_name("optimizer", "m/" + name);
      tensors.push_back(em);
      write_blob(root, blob_name("optimizer", "m/" + name), m32);
      json ev = em;
      ev["name"] = "v/" + name;
      ev["file"] = blob_name("optimizer", "v/" + name);
      tensors.push_back(ev);
      write_blob(root, blob_name("optimizer", "v/" + name), v32);
    }
  }
  manifest["tensors"] = std::move(tensors);

  std::ofstream out(root / "manifest.json");
  if (!out)
    throw_error(ErrorCategory::kIngestion, "cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  vocab.save((root / "vocab.txt").string());
}

Checkpoint load_checkpoint(const std::string& dir) {
  fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in)
    throw_error(ErrorCategory::kIngestion, "no manifest.json in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw_error(ErrorCategory::kIngestion, std::string("bad manifest: ") + e.what());
  }
  if (manifest.at("format_version").get<int>() != 1)
    throw_error(ErrorCategory::kIngestion, "unsupported checkpoint format version");

  Checkpoint ckpt;
  std::map<std::string, std::string> kv =
      manifest.at("config").get<std::map<std::string, std::string>>();
  ckpt.config = Config::from_map(kv);
  ckpt.vocab = Vocabulary::load(
      (root / manifest.value("vocab_file", "vocab.txt")).string());

  ModelConfig mc;
  mc.encoder = ckpt.config.encoder_config(ckpt.vocab.size());
  mc.limits = BatchLimits{ckpt.config.max_question, ckpt.config.max_answer};
  mc.ablation = ckpt.config.ablation_mode();
  mc.sim_fn = ckpt.config.similarity();
  mc.mlp_hidden = ckpt.config.mlp_hidden;
  mc.init_stddev = ckpt.config.init_stddev;
  Rng dummy(0);
  ckpt.params = ModelParams::init(mc, dummy);

  // index manifest entries
  struct Entry {
    std::string file;
    Shape shape;
  };
  std::map<std::string, Entry> by_key;  // "<ns>/<name>"
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    e.file = t.at("file").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    by_key[t.at("namespace").get<std::string>() + "/" + t.at("name").get<std::string>()] = e;
  }

  auto fill = [&](const std::string& ns, ParamRegistry<float>& reg) {
    for (auto& e : reg.entries()) {
      auto it = by_key.find(ns + "/" + e.name);
      if (it == by_key.end())
        throw_error(ErrorCategory::kIngestion,
                    "checkpoint is missing tensor " + ns + "/" + e.name);
      if (it->second.shape != e.tensor.shape())
        throw_error(ErrorCategory::kIngestion,
                    "checkpoint shape mismatch for " + e.name + ": stored " +
                        shape_str(it->second.shape) + " vs expected " +
                        shape_str(e.tensor.shape()));
      auto values = read_blob(root, it->second.file, e.tensor.numel());
      std::copy(values.begin(), values.end(), e.tensor.values().begin());
    }
  };
  auto trainable = ckpt.params.trainable();
  fill("model", trainable);
  auto buffers = ckpt.params.buffers();
  fill("bn_stats", buffers);

  if (manifest.contains("optimizer_step")) {
    ckpt.optimizer_step = manifest.at("optimizer_step").get<int64_t>();
    ckpt.has_optimizer_state = true;
    for (const auto& e : trainable.entries()) {
      for (auto* dest : {&ckpt.optimizer_m, &ckpt.optimizer_v}) {
        std::string prefix = dest == &ckpt.optimizer_m ? "m/" : "v/";
        auto it = by_key.find("optimizer/" + prefix + e.name);
        if (it == by_key.end())
          throw_error(ErrorCategory::kIngestion,
                      "checkpoint is missing optimizer state for " + e.name);
        auto values = read_blob(root, it->second.file, e.tensor.numel());
        dest->emplace_back(values.begin(), values.end());
      }
    }
  }
  return ckpt;
}

}  // namespace match2
