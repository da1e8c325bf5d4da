#include "match2/eval/heatmap.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "match2/text/tokenize.hpp"
#include "match2/train/trainer.hpp"

namespace match2 {

namespace {

namespace fs = std::filesystem;

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

void write_matrix(const fs::path& path, const std::vector<std::string>& rows,
                  const std::vector<std::string>& cols,
                  const std::vector<std::vector<double>>& values) {
  std::ofstream out(path);
  if (!out)
    throw_error(ErrorCategory::kIngestion, "cannot write heatmap " + path.string());
  out << "token";
  for (const auto& c : cols) out << "," << csv_quote(c);
  out << "\n";
  out.precision(9);
  for (size_t i = 0; i < rows.size(); ++i) {
    out << csv_quote(rows[i]);
    for (double v : values[i]) out << "," << v;
    out << "\n";
  }
}

}  // namespace

HeatmapExport export_heatmap(ModelParams& params, const Vocabulary& vocab,
                             const DatasetRecord& record, const std::string& out_dir) {
  if (!params.has_a_branch())
    throw_error(ErrorCategory::kContract,
                "heatmap export needs the matching-pattern branch (full or A-only)");
  fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);

  Instance inst;
  inst.record_id = record.id;
  inst.qu = record.user_question;
  inst.qa = record.archived_question;
  inst.ans = record.archived_answer;
  Batch batch = encode_batch({inst}, vocab, params.config.limits);
  RunContext<float> ctx;  // infer
  auto outputs = model_forward(ctx, params, batch);

  auto tokens_of = [&](const std::string& text, int64_t limit) {
    auto toks = tokenize(text);
    if (static_cast<int64_t>(toks.size()) > limit) toks.resize(static_cast<size_t>(limit));
    return toks;
  };
  auto qu_tokens = tokens_of(record.user_question, params.config.limits.max_question);
  auto qa_tokens = tokens_of(record.archived_question, params.config.limits.max_question);
  auto ans_tokens = tokens_of(record.archived_answer, params.config.limits.max_answer);
  int64_t m = static_cast<int64_t>(qu_tokens.size());
  int64_t n = static_cast<int64_t>(qa_tokens.size());
  int64_t w = static_cast<int64_t>(ans_tokens.size());
  int64_t layers = params.config.encoder.layers;
  int64_t max_q = params.config.limits.max_question;
  int64_t max_a = params.config.limits.max_answer;

  HeatmapExport result;
  auto emit = [&](const std::string& file, const std::vector<std::string>& rows,
                  const std::vector<std::string>& cols,
                  const std::vector<std::vector<double>>& values) {
    auto path = root / file;
    write_matrix(path, rows, cols, values);
    result.files.push_back(path.string());
  };

  // layer-averaged matching patterns, true extents only
  auto pattern_mean = [&](const Tensor& pattern, int64_t rows_n) {
    std::vector<std::vector<double>> out(static_cast<size_t>(rows_n),
                                         std::vector<double>(static_cast<size_t>(w), 0));
    for (int64_t i = 0; i < rows_n; ++i)
      for (int64_t t = 0; t < w; ++t) {
        double acc = 0;
        for (int64_t l = 0; l < layers; ++l)
          acc += pattern.values()[((l * max_q) + i) * max_a + t];
        out[static_cast<size_t>(i)][static_cast<size_t>(t)] =
            acc / static_cast<double>(layers);
      }
    return out;
  };
  emit("pu_mean.csv", qu_tokens, ans_tokens, pattern_mean(outputs.pattern_u, m));
  emit("pa_mean.csv", qa_tokens, ans_tokens, pattern_mean(outputs.pattern_a, n));

  auto ps_layer = [&](int64_t l) {
    std::vector<std::vector<double>> out(static_cast<size_t>(m),
                                         std::vector<double>(static_cast<size_t>(n), 0));
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        out[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            outputs.pattern_sim.values()[((l * max_q) + i) * max_q + j];
    return out;
  };
  std::vector<std::vector<double>> ps_mean(static_cast<size_t>(m),
                                           std::vector<double>(static_cast<size_t>(n), 0));
  for (int64_t l = 0; l < layers; ++l) {
    auto mat = ps_layer(l);
    emit("ps_layer" + std::to_string(l) + ".csv", qu_tokens, qa_tokens, mat);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        ps_mean[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
            mat[static_cast<size_t>(i)][static_cast<size_t>(j)] /
            static_cast<double>(layers);
  }
  emit("ps_mean.csv", qu_tokens, qa_tokens, ps_mean);
  return result;
}

ParsedCsv parse_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw_error(ErrorCategory::kIngestion, "cannot read heatmap csv " + path);
  ParsedCsv parsed;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // split respecting quoted fields
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (header) {
      parsed.col_names.assign(fields.begin() + 1, fields.end());
      header = false;
    } else {
      parsed.row_names.push_back(fields[0]);
      std::vector<double> row;
      for (size_t i = 1; i < fields.size(); ++i) row.push_back(std::stod(fields[i]));
      parsed.values.push_back(std::move(row));
    }
  }
  return parsed;
}

}  // namespace match2
