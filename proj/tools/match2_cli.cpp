// Command-line front end: ingestion, training, evaluation, prediction,
// gradient checking, heatmap export, and BM25 index building.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "match2/eval/heatmap.hpp"
#include "match2/eval/metrics.hpp"
#include "match2/model/gradsuite.hpp"
#include "match2/retrieval/bm25.hpp"
#include "match2/train/checkpoint.hpp"
#include "match2/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace match2;

namespace {

struct TrainArgs {
  std::string data_dir, config_file, out_dir;
  int64_t seed = -1;
  std::vector<std::string> sets;
};

struct EvalArgs {
  std::string data_file, model_dir, report_file;
  int64_t groups = 20;
};

struct PredictArgs {
  std::string model_dir, qu, qa, ans;
};

struct GradcheckArgs {
  std::string module = "all";
  double h = 1e-3;
  double tol = 1e-3;
};

struct HeatmapArgs {
  std::string model_dir, data_file, record_id, out_dir;
};

struct IndexArgs {
  std::string answers_file, out_dir;
};

void report_line_errors(const std::vector<LineError>& errors, const std::string& path) {
  for (const auto& e : errors)
    std::cerr << path << ":" << e.line << ": rejected: " << e.reason << "\n";
}

std::vector<DatasetRecord> load_records_or_die(const std::string& path) {
  auto result = load_dataset(path);
  report_line_errors(result.errors, path);
  if (result.records.empty())
    throw_error(ErrorCategory::kIngestion, "no usable records in " + path);
  return result.records;
}

Trainer make_trainer_from_checkpoint(const std::string& model_dir) {
  auto ckpt = load_checkpoint(model_dir);
  return Trainer(ckpt.config, ckpt.vocab, std::move(ckpt.params));
}

int run_train(const TrainArgs& args) {
  auto kv = read_key_values(args.config_file);
  apply_overrides(kv, args.sets);
  Config config = Config::from_map(kv);
  if (args.seed >= 0) config.seed = args.seed;
  config.validate();

  auto train_records = load_records_or_die((fs::path(args.data_dir) / "train.jsonl").string());
  std::vector<DatasetRecord> dev_records;
  auto dev_path = fs::path(args.data_dir) / "dev.jsonl";
  if (fs::exists(dev_path)) {
    auto dev = load_dataset(dev_path.string());
    report_line_errors(dev.errors, dev_path.string());
    dev_records = std::move(dev.records);
  }

  std::vector<std::string> corpus;
  for (const auto& r : train_records) {
    corpus.push_back(r.user_question);
    corpus.push_back(r.archived_question);
    corpus.push_back(r.archived_answer);
  }
  Vocabulary vocab = Vocabulary::build(corpus, config.min_freq);

  // answer pool for negative sampling: answers.jsonl if present, else the
  // training answers keyed by record id
  std::optional<InvertedIndex> index;
  if (config.ablation_mode() != Ablation::kQOnly && config.p_neg > 0.0) {
    std::vector<AnswerDoc> pool;
    auto pool_path = fs::path(args.data_dir) / "answers.jsonl";
    if (fs::exists(pool_path)) {
      pool = load_answer_pool(pool_path.string());
    } else {
      for (const auto& r : train_records) pool.push_back({r.id, r.archived_answer});
    }
    index = InvertedIndex::build(pool);
  }

  std::cout << "records: " << train_records.size() << " train";
  if (!dev_records.empty()) std::cout << ", " << dev_records.size() << " dev";
  std::cout << "; vocab: " << vocab.size() << " tokens\n";

  Trainer trainer(config, vocab);
  std::cout << "model: " << to_string(config.ablation_mode()) << ", sim_fn "
            << to_string(config.similarity()) << ", "
            << trainer.params().param_count() << " trainable values\n";

  Rng epoch_rng(static_cast<uint64_t>(config.seed) * 0x9e3779b9ULL + 1);
  double best_dev = -1.0;
  bool saved = false;
  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto stats = trainer.run_epoch(train_records, index ? &*index : nullptr, epoch_rng);
    std::cout << "epoch " << epoch << "/" << config.epochs << " loss " << stats.mean_loss
              << " train_acc " << stats.accuracy << " keep_rate "
              << trainer.current_keep_rate();
    if (!dev_records.empty()) {
      double dev_acc = trainer.evaluate_accuracy(dev_records);
      std::cout << " dev_acc " << dev_acc;
      if (dev_acc > best_dev) {
        best_dev = dev_acc;
        save_checkpoint(args.out_dir, config, vocab, trainer.params(),
                        &trainer.optimizer());
        saved = true;
        std::cout << " (checkpoint saved)";
      }
    }
    std::cout << "\n";
  }
  if (!saved)
    save_checkpoint(args.out_dir, config, vocab, trainer.params(), &trainer.optimizer());
  std::cout << "checkpoint: " << args.out_dir << "\n";
  return 0;
}

int run_eval(const EvalArgs& args) {
  Trainer trainer = make_trainer_from_checkpoint(args.model_dir);
  auto records = load_records_or_die(args.data_file);
  auto predictions = trainer.predict_records(records);
  std::vector<int> pred_labels(records.size()), gold(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    pred_labels[i] = predictions[i].label;
    gold[i] = records[i].label;
  }
  auto metrics = classification_metrics(pred_labels, gold);
  auto groups = group_analysis(records, pred_labels, args.groups);

  std::cout << "records " << records.size() << "\n";
  std::cout << "accuracy " << metrics.accuracy << "\n";
  std::cout << "precision " << metrics.precision
            << (metrics.precision_defined ? "" : " (no positive predictions)") << "\n";
  std::cout << "recall " << metrics.recall
            << (metrics.recall_defined ? "" : " (no positive labels)") << "\n";
  std::cout << "f1 " << metrics.f1 << "\n";
  std::cout << "confusion tp " << metrics.tp << " fp " << metrics.fp << " tn "
            << metrics.tn << " fn " << metrics.fn << "\n";

  if (!args.report_file.empty()) {
    nlohmann::json report;
    report["records"] = records.size();
    report["accuracy"] = metrics.accuracy;
    report["precision"] = metrics.precision;
    report["precision_defined"] = metrics.precision_defined;
    report["recall"] = metrics.recall;
    report["recall_defined"] = metrics.recall_defined;
    report["f1"] = metrics.f1;
    report["confusion"] = {{"tp", metrics.tp}, {"fp", metrics.fp},
                           {"tn", metrics.tn}, {"fn", metrics.fn}};
    auto garr = nlohmann::json::array();
    for (const auto& g : groups)
      garr.push_back({{"lo", g.lo},
                      {"hi", g.hi},
                      {"correct_positive", g.correct_positive},
                      {"total_positive", g.total_positive},
                      {"correct_negative", g.correct_negative},
                      {"total_negative", g.total_negative}});
    report["groups"] = std::move(garr);
    std::ofstream out(args.report_file);
    if (!out)
      throw_error(ErrorCategory::kIngestion, "cannot write report " + args.report_file);
    out << report.dump(2) << "\n";
    std::ofstream csv(args.report_file + ".groups.csv");
    csv << group_analysis_csv(groups);
    std::cout << "report: " << args.report_file << " (+ .groups.csv)\n";
  }
  return 0;
}

int run_predict(const PredictArgs& args) {
  Trainer trainer = make_trainer_from_checkpoint(args.model_dir);
  auto p = trainer.predict_one(args.qu, args.qa, args.ans);
  nlohmann::json out;
  out["y_q"] = p.y_q;
  out["label"] = p.label;
  if (trainer.params().has_a_branch()) {
    out["y_u"] = p.y_u;
    out["y_a"] = p.y_a;
  }
  std::cout << out.dump() << "\n";
  return 0;
}

int run_gradcheck(const GradcheckArgs& args) {
  auto report = run_gradcheck_suite(args.module, args.h, args.tol);
  for (const auto& check : report.checks)
    std::cout << (check.max_rel_err < args.tol ? "ok   " : "FAIL ") << check.name
              << " max_rel_err " << check.max_rel_err << "\n";
  std::cout << (report.passed ? "PASS" : "FAIL") << " " << report.checks.size()
            << " checks, worst " << report.worst << ", tol " << report.tolerance
            << ", " << report.seconds << "s\n";
  return report.passed ? 0 : 1;
}

int run_heatmap(const HeatmapArgs& args) {
  Trainer trainer = make_trainer_from_checkpoint(args.model_dir);
  auto records = load_records_or_die(args.data_file);
  const DatasetRecord* chosen = nullptr;
  for (const auto& r : records)
    if (r.id == args.record_id) chosen = &r;
  if (!chosen)
    throw_error(ErrorCategory::kLookup,
                "record id '" + args.record_id + "' not found in " + args.data_file);
  auto result = export_heatmap(trainer.params(), trainer.vocab(), *chosen, args.out_dir);
  for (const auto& f : result.files) std::cout << f << "\n";
  return 0;
}

int run_index(const IndexArgs& args) {
  auto pool = load_answer_pool(args.answers_file);
  auto index = InvertedIndex::build(pool);
  fs::create_directories(args.out_dir);
  auto path = (fs::path(args.out_dir) / "index.json").string();
  index.save(path);
  std::cout << "indexed " << index.doc_count() << " answers, avg length "
            << index.avg_length() << "\n";
  std::cout << "index: " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matching-over-matching similar question identification"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", train_args.data_dir, "directory with train.jsonl (+ dev.jsonl, answers.jsonl)")->required();
  train->add_option("--config", train_args.config_file, "key = value config file")->required();
  train->add_option("--out", train_args.out_dir, "checkpoint output directory")->required();
  train->add_option("--seed", train_args.seed, "override the config seed");
  train->add_option("--set", train_args.sets, "override a config key, key=value");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--data", eval_args.data_file, "JSONL dataset file")->required();
  eval->add_option("--model", eval_args.model_dir, "checkpoint directory")->required();
  eval->add_option("--groups", eval_args.groups, "Jaccard analysis buckets");
  eval->add_option("--report", eval_args.report_file, "write a JSON report here");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "score one question pair");
  predict->add_option("--model", predict_args.model_dir)->required();
  predict->add_option("--qu", predict_args.qu, "user question")->required();
  predict->add_option("--qa", predict_args.qa, "archived question")->required();
  predict->add_option("--ans", predict_args.ans, "archived answer")->required();

  GradcheckArgs grad_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->set_help_flag("--help", "print help");  // frees -h for the step size
  gradcheck->add_option("--module", grad_args.module, "all|encoder|pattern|gate|head");
  gradcheck->add_option("--h", grad_args.h, "finite-difference step");
  gradcheck->add_option("--tol", grad_args.tol, "max relative error tolerance");

  HeatmapArgs heatmap_args;
  auto* heatmap = app.add_subcommand("heatmap", "export matching-pattern CSVs");
  heatmap->add_option("--model", heatmap_args.model_dir)->required();
  heatmap->add_option("--data", heatmap_args.data_file)->required();
  heatmap->add_option("--record", heatmap_args.record_id)->required();
  heatmap->add_option("--out", heatmap_args.out_dir)->required();

  IndexArgs index_args;
  auto* index = app.add_subcommand("index", "build a BM25 answer index");
  index->add_option("--answers", index_args.answers_file, "answer pool JSONL")->required();
  index->add_option("--out", index_args.out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (predict->parsed()) return run_predict(predict_args);
    if (gradcheck->parsed()) return run_gradcheck(grad_args);
    if (heatmap->parsed()) return run_heatmap(heatmap_args);
    if (index->parsed()) return run_index(index_args);
  } catch (const Error& e) {
    nlohmann::json err;
    err["category"] = to_string(e.category());
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["category"] = "internal";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
