#include "support/synthetic.hpp"

#include <string>

namespace match2::testing {

namespace {

constexpr int64_t kTopics = 6;

std::string tok(const char* stem, int64_t i) { return stem + std::to_string(i); }

void fill_pool(SynthDataset& data) {
  for (const auto& rec : data.train) data.pool.push_back({rec.id, rec.archived_answer});
}

}  // namespace

SynthDataset make_keyword_corpus(Rng& rng, int64_t train_n, int64_t dev_n) {
  SynthDataset data;
  auto make = [&rng](int64_t index, const std::string& split) {
    DatasetRecord rec;
    int64_t topic = static_cast<int64_t>(rng.uniform_index(kTopics));
    bool positive = rng.bernoulli(0.5);
    int64_t qu_topic =
        positive ? topic
                 : (topic + 1 + static_cast<int64_t>(rng.uniform_index(kTopics - 1))) %
                       kTopics;
    rec.id = split + std::to_string(index);
    rec.user_question = "need " + tok("t", qu_topic) + " " + tok("f", rng.uniform_index(4));
    rec.archived_question =
        "ask " + tok("t", topic) + " " + tok("f", rng.uniform_index(4));
    rec.archived_answer = "explain " + tok("t", topic) + " with " +
                          tok("b", topic) + " " + tok("b", rng.uniform_index(kTopics));
    rec.label = positive ? 1 : 0;
    return rec;
  };
  for (int64_t i = 0; i < train_n; ++i) data.train.push_back(make(i, "tr"));
  for (int64_t i = 0; i < dev_n; ++i) data.dev.push_back(make(i, "dv"));
  fill_pool(data);
  return data;
}

SynthDataset make_bridge_corpus(Rng& rng, int64_t train_n, int64_t dev_n) {
  SynthDataset data;
  auto make = [&rng](int64_t index, const std::string& split) {
    DatasetRecord rec;
    int64_t topic = static_cast<int64_t>(rng.uniform_index(kTopics));  // answer topic
    bool positive = rng.bernoulli(0.5);
    int64_t qu_topic =
        positive ? topic
                 : (topic + 1 + static_cast<int64_t>(rng.uniform_index(kTopics - 1))) %
                       kTopics;
    rec.id = split + std::to_string(index);
    // user vocabulary only; zero token overlap with the archived question
    rec.user_question = "need " + tok("u", qu_topic) + " " + tok("f", rng.uniform_index(4));
    // generic archived question, carries no topic information
    rec.archived_question =
        "ask " + tok("g", rng.uniform_index(4)) + " " + tok("g", rng.uniform_index(4));
    // the answer states its topic in both vocabularies
    rec.archived_answer = "info " + tok("u", topic) + " " + tok("a", topic) + " " +
                          tok("x", rng.uniform_index(4));
    rec.label = positive ? 1 : 0;
    return rec;
  };
  for (int64_t i = 0; i < train_n; ++i) data.train.push_back(make(i, "tr"));
  for (int64_t i = 0; i < dev_n; ++i) data.dev.push_back(make(i, "dv"));
  fill_pool(data);
  return data;
}

SynthDataset make_overlap_corpus(Rng& rng, int64_t train_n, int64_t dev_n) {
  SynthDataset data;
  auto make = [&rng](int64_t index, const std::string& split) {
    DatasetRecord rec;
    int64_t thing = static_cast<int64_t>(rng.uniform_index(kTopics));
    int64_t intent = static_cast<int64_t>(rng.uniform_index(2));
    // positives in the majority so a blind model predicts "similar"
    bool positive = rng.bernoulli(0.6);
    int64_t answer_intent = positive ? intent : 1 - intent;
    rec.id = split + std::to_string(index);
    rec.user_question = "how fix " + tok("w", thing) + " " + tok("i", intent);
    rec.archived_question = "how fix " + tok("w", thing);
    rec.archived_answer =
        "for " + tok("i", answer_intent) + " do " + tok("z", thing) + " steps";
    rec.label = positive ? 1 : 0;
    return rec;
  };
  for (int64_t i = 0; i < train_n; ++i) data.train.push_back(make(i, "tr"));
  for (int64_t i = 0; i < dev_n; ++i) data.dev.push_back(make(i, "dv"));
  fill_pool(data);
  return data;
}

Config toy_config(const std::string& ablation, int64_t epochs, int64_t seed) {
  Config c;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffn = 32;
  c.max_position = 24;
  c.min_freq = 1;
  c.max_question = 6;
  c.max_answer = 8;
  c.ratio = 0.6;
  c.top_k = 5;
  c.p_neg = 0.5;
  c.lr = 2e-3;  // desk-scale runs converge far faster than the full-data rate
  c.batch = 8;
  c.epochs = epochs;
  c.seed = seed;
  c.ablation = ablation;
  c.sim_fn = "dot";
  return c;
}

}  // namespace match2::testing
