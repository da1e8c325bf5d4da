#include <doctest.h>

#include "match2/model/model.hpp"
#include "match2/train/trainer.hpp"
#include "support/synthetic.hpp"

using namespace match2;
namespace tt = match2::testing;

namespace {

Vocabulary vocab_for(const std::vector<DatasetRecord>& records) {
  std::vector<std::string> corpus;
  for (const auto& r : records) {
    corpus.push_back(r.user_question);
    corpus.push_back(r.archived_question);
    corpus.push_back(r.archived_answer);
  }
  return Vocabulary::build(corpus, 1);
}

}  // namespace

TEST_CASE("v_q is exactly the pooled feature of the question-pair encoder") {
  Rng rng(3);
  auto data = tt::make_keyword_corpus(rng, 4, 0);
  auto vocab = vocab_for(data.train);
  Trainer trainer(tt::toy_config("full", 1), vocab);
  auto& params = trainer.params();

  auto instances = instances_from_records(data.train, 0.6f);
  auto batch = encode_batch(instances, vocab, params.config.limits);
  RunContext<float> ctx;
  auto outputs = model_forward(ctx, params, batch);
  auto direct = encode(ctx, batch.qq, *params.qq_encoder);
  REQUIRE(outputs.v_q.shape() == direct.pooled.shape());
  for (size_t i = 0; i < direct.pooled.values().size(); ++i)
    CHECK(outputs.v_q.values()[i] == direct.pooled.values()[i]);
}

TEST_CASE("v_q dimension equals the hidden size") {
  Rng rng(5);
  auto data = tt::make_keyword_corpus(rng, 2, 0);
  auto vocab = vocab_for(data.train);
  auto config = tt::toy_config("full", 1);
  config.hidden = 16;
  Trainer trainer(config, vocab);
  auto instances = instances_from_records(data.train, 0.6f);
  auto batch = encode_batch(instances, vocab, trainer.params().config.limits);
  RunContext<float> ctx;
  auto outputs = model_forward(ctx, trainer.params(), batch);
  CHECK(outputs.v_q.shape() == Shape{2, 16});
  CHECK(outputs.y_q.shape() == Shape{2});
  CHECK(outputs.v_q.all_finite());
}

TEST_CASE("swapping the questions changes v_q in general") {
  Rng rng(7);
  auto data = tt::make_keyword_corpus(rng, 2, 0);
  auto vocab = vocab_for(data.train);
  Trainer trainer(tt::toy_config("full", 1), vocab);

  Instance fwd;
  fwd.qu = data.train[0].user_question;
  fwd.qa = data.train[0].archived_question;
  fwd.ans = data.train[0].archived_answer;
  Instance rev = fwd;
  std::swap(rev.qu, rev.qa);

  auto b1 = encode_batch({fwd}, vocab, trainer.params().config.limits);
  auto b2 = encode_batch({rev}, vocab, trainer.params().config.limits);
  RunContext<float> ctx;
  auto o1 = model_forward(ctx, trainer.params(), b1);
  auto o2 = model_forward(ctx, trainer.params(), b2);
  bool any_differs = false;
  for (size_t i = 0; i < o1.v_q.values().size(); ++i)
    if (o1.v_q.values()[i] != o2.v_q.values()[i]) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("identical questions give a well-defined vector and a separable task") {
  // label = exact string equality of the two questions; Q-only must fit it
  Rng rng(11);
  std::vector<DatasetRecord> records;
  for (int i = 0; i < 24; ++i) {
    int64_t topic = static_cast<int64_t>(rng.uniform_index(5));
    bool same = rng.bernoulli(0.5);
    std::string q = "topic t" + std::to_string(topic) + " words";
    DatasetRecord rec;
    rec.id = "r" + std::to_string(i);
    rec.user_question = q;
    rec.archived_question =
        same ? q : ("topic t" + std::to_string((topic + 1) % 5) + " words");
    rec.archived_answer = "answer text a" + std::to_string(topic);
    rec.label = same ? 1 : 0;
    records.push_back(rec);
  }
  auto vocab = vocab_for(records);
  auto config = tt::toy_config("q-only", 150);
  Trainer trainer(config, vocab);
  Rng epoch_rng(13);
  double acc = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    trainer.run_epoch(records, nullptr, epoch_rng);
    acc = trainer.evaluate_accuracy(records);
    if (acc >= 1.0) break;
  }
  CHECK(acc == 1.0);
}

TEST_CASE("published defaults match the pinned training regime") {
  Config c;
  CHECK(c.ratio == 0.6);
  CHECK(c.top_k == 5);
  CHECK(c.p_neg == 0.5);
  CHECK(c.lr == 5e-5);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.epsilon == 1e-6);
  CHECK(c.keep_decay == 0.933);
  CHECK(c.keep_interval == 5000);
  CHECK(c.batch == 32);
  CHECK(c.max_question == 24);
  CHECK(c.max_answer == 256);
  CHECK(c.layers == 4);
  CHECK(c.hidden == 64);
  CHECK(c.heads == 4);
  CHECK(c.max_position == 300);
  CHECK(c.init_stddev == 0.2);
  // the alternate benchmark shape stays expressible
  auto kv = c.to_map();
  kv["max_question"] = "32";
  kv["max_answer"] = "100";
  kv["batch"] = "48";
  auto quora = Config::from_map(kv);
  quora.validate();
  CHECK(quora.max_question == 32);
  CHECK(quora.batch == 48);
}

TEST_CASE("both question-answer encodings share one encoder") {
  Rng rng(17);
  auto data = tt::make_keyword_corpus(rng, 2, 0);
  auto vocab = vocab_for(data.train);
  Trainer trainer(tt::toy_config("full", 1), vocab);
  auto& params = trainer.params();
  REQUIRE(params.qa_encoder.has_value());
  REQUIRE(params.qq_encoder.has_value());
  // distinct parameter sets for the two encoders
  CHECK(!params.qa_encoder->tok_emb.same_storage(params.qq_encoder->tok_emb));
  // swapping which pair plays "user" swaps the auxiliary outputs exactly
  Instance inst;
  inst.qu = data.train[0].user_question;
  inst.qa = data.train[0].archived_question;
  inst.ans = data.train[0].archived_answer;
  Instance swapped = inst;
  std::swap(swapped.qu, swapped.qa);
  auto b1 = encode_batch({inst}, vocab, params.config.limits);
  auto b2 = encode_batch({swapped}, vocab, params.config.limits);
  RunContext<float> ctx;
  auto o1 = model_forward(ctx, params, b1);
  auto o2 = model_forward(ctx, params, b2);
  CHECK(o1.y_u.values()[0] == o2.y_a.values()[0]);
  CHECK(o1.y_a.values()[0] == o2.y_u.values()[0]);
}
