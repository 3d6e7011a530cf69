#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cvrt/errors.hpp"
#include "cvrt/model.hpp"
#include "cvrt/tokenizer.hpp"
#include "cvrt/trainer.hpp"

using namespace cvrt;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.vocab_size = 30;
  cfg.oov_buckets = 5;
  cfg.embed_dim = 8;
  cfg.num_blocks = 1;
  cfg.qk_dim = 4;
  cfg.ff1_dim = 12;
  cfg.ff2_layers = 1;
  cfg.out_dim = 8;
  cfg.max_seq_len = 6;
  cfg.relative_caps = {2};
  return cfg;
}

std::vector<TrainExample> toy_data(int n, int table_rows) {
  Rng rng(123);
  std::vector<TrainExample> data(n);
  for (auto& ex : data) {
    ex.x.resize(3);
    ex.y.resize(4);
    ex.z.resize(2);
    for (int& id : ex.x) id = static_cast<int>(rng.below(table_rows));
    for (int& id : ex.y) id = static_cast<int>(rng.below(table_rows));
    for (int& id : ex.z) id = static_cast<int>(rng.below(table_rows));
  }
  return data;
}

TrainConfig toy_train(int64_t steps) {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_steps = steps;
  tc.anneal_steps = 10;
  tc.quantized = false;
  tc.seed = 7;
  return tc;
}

SubwordVocab word_vocab(std::vector<std::string> words) {
  SubwordVocab v;
  v.subwords = std::move(words);
  v.oov_buckets = 50;
  v.finalize();
  return v;
}

double max_shadow_diff(const Model& a, const Model& b) {
  double m = 0.0;
  for (size_t p = 0; p < a.params.params.size(); ++p)
    for (size_t i = 0; i < a.params.params[p].shadow.v.size(); ++i)
      m = std::max(m, std::fabs(a.params.params[p].shadow.v[i] -
                                b.params.params[p].shadow.v[i]));
  return m;
}

std::string temp_file(const char* name, const std::string& body) {
  std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_CASE("cosine schedule hits both endpoints exactly") {
  CHECK(cosine_lr(0, 1.0, 0.001, 1000) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cosine_lr(1000, 1.0, 0.001, 1000) == doctest::Approx(0.001).epsilon(1e-9));
  CHECK(cosine_lr(500, 1.0, 0.001, 1000) == doctest::Approx(0.5005).epsilon(1e-12));
  CHECK(cosine_lr(0, 0.1, 0.0001, 60000) == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(cosine_lr(60000, 0.1, 0.0001, 60000) == doctest::Approx(0.0001).epsilon(1e-9));
  CHECK(cosine_lr(250, 1.0, 0.001, 1000) > cosine_lr(500, 1.0, 0.001, 1000));
}

TEST_CASE("first adadelta step matches the reference recurrence") {
  Tensor shadow(1, 1, {0.0});
  Tensor grad(1, 1, {1.0});
  AdadeltaState st;
  adadelta_update(shadow, grad, st, 0.9, 1e-6, 2.0);

  CHECK(st.eg2.v[0] == doctest::Approx(0.1).epsilon(1e-12));
  double dx = -std::sqrt(1e-6 / (0.1 + 1e-6));
  CHECK(shadow.v[0] == doctest::Approx(2.0 * dx).epsilon(1e-12));
  CHECK(-dx == doctest::Approx(3.16e-3).epsilon(1e-2));
}

TEST_CASE("zero gradient leaves parameters fixed while accumulators decay") {
  Tensor shadow(1, 2, {0.5, -0.25});
  AdadeltaState st;
  adadelta_update(shadow, Tensor(1, 2, {1.0, 1.0}), st, 0.9, 1e-6, 1.0);
  Tensor after_first = shadow;
  double eg2 = st.eg2.v[0];

  adadelta_update(shadow, Tensor(1, 2), st, 0.9, 1e-6, 1.0);
  CHECK(shadow.v[0] == after_first.v[0]);
  CHECK(shadow.v[1] == after_first.v[1]);
  CHECK(st.eg2.v[0] == doctest::Approx(0.9 * eg2).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales only oversized norms") {
  Tensor g(1, 2, {3.0, 4.0});
  CHECK(clip_to_norm(g, 1.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(g.v[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(g.v[1] == doctest::Approx(0.8).epsilon(1e-12));

  Tensor small(1, 2, {0.3, 0.4});
  clip_to_norm(small, 1.0);
  CHECK(small.v[0] == 0.3);
  CHECK(small.v[1] == 0.4);
}

TEST_CASE("corpus ingestion skips and counts malformed records") {
  SubwordVocab vocab = word_vocab({"hello", "hi", "there", "ok"});
  std::string path = temp_file("cvrt_corpus.ndjson",
                               R"({"context": "hello there", "response": "hi"})"
                               "\n"
                               R"({"context": "ok", "response": "ok ok"})"
                               "\n"
                               R"({"context": "no response here"})"
                               "\n"
                               "not json at all\n"
                               R"({"context": "", "response": "hi"})"
                               "\n"
                               R"({"context": "hello", "response": "there", "extra_contexts": ["hi", "ok"]})"
                               "\n");

  CorpusStats stats;
  auto data = load_corpus(path, vocab, 60, false, false, &stats);
  CHECK(stats.kept == 3);
  CHECK(stats.skipped == 3);
  CHECK(data[0].x.size() == 2);
  CHECK(data[0].z.empty());

  CorpusStats mstats;
  auto mdata = load_corpus(path, vocab, 60, true, false, &mstats);
  CHECK(mstats.kept == 3);
  CHECK(mdata[0].z.empty());          // no extra_contexts given
  CHECK(mdata[2].z.size() == 2);      // "ok hi", most recent first
  CHECK(mdata[2].z[0] == vocab.index.at("ok"));
  CHECK(mdata[2].z[1] == vocab.index.at("hi"));

  std::string empty = temp_file("cvrt_corpus_empty.ndjson", "garbage\n{\n");
  CHECK_THROWS_AS(load_corpus(empty, vocab, 60, false, false, nullptr), DataError);
  fs::remove(path);
  fs::remove(empty);
}

TEST_CASE("identical seeds give identical training runs") {
  ModelConfig cfg = toy_config();
  auto data = toy_data(8, cfg.table_rows());

  Model a = init_model(cfg, 1);
  Model b = init_model(cfg, 1);
  Trainer ta(a, toy_train(3));
  Trainer tb(b, toy_train(3));
  ta.run(data);
  tb.run(data);

  CHECK(a.cfg.trained_steps == 3);
  CHECK(max_shadow_diff(a, b) == 0.0);

  Model c = init_model(cfg, 1);
  TrainConfig qcfg = toy_train(3);
  qcfg.quantized = true;
  Model d = init_model(cfg, 1);
  Trainer tc(c, qcfg);
  Trainer td(d, qcfg);
  tc.run(data);
  td.run(data);
  CHECK(max_shadow_diff(c, d) == 0.0);
  CHECK(max_shadow_diff(a, c) > 0.0);  // precision regime does change the path
}

TEST_CASE("zero max steps changes nothing") {
  ModelConfig cfg = toy_config();
  Model m = init_model(cfg, 2);
  Model ref = init_model(cfg, 2);
  auto data = toy_data(8, cfg.table_rows());

  Trainer t(m, toy_train(0));
  t.run(data);
  CHECK(m.cfg.trained_steps == 0);
  CHECK(max_shadow_diff(m, ref) == 0.0);
}

TEST_CASE("losses fall on a tiny memorization task") {
  ModelConfig cfg = toy_config();
  Model m = init_model(cfg, 3);
  auto data = toy_data(8, cfg.table_rows());

  TrainConfig tc = toy_train(30);
  Trainer t(m, tc);
  double first = 0.0, last = 0.0;
  t.run(data, [&](const StepInfo& info) {
    if (info.step == 1) first = info.loss;
    last = info.loss;
    CHECK(std::isfinite(info.loss));
    return true;
  });
  CHECK(m.cfg.trained_steps == 30);
  CHECK(last < first);
}

TEST_CASE("resume continues the step counter and schedule") {
  ModelConfig cfg = toy_config();
  Model m = init_model(cfg, 4);
  auto data = toy_data(8, cfg.table_rows());

  TrainConfig tc = toy_train(6);
  Trainer t(m, tc);
  t.run(data, [&](const StepInfo& info) { return info.step < 3; });
  CHECK(m.cfg.trained_steps == 3);

  Trainer t2(m, tc);
  std::vector<int64_t> steps;
  std::vector<double> lrs;
  t2.run(data, [&](const StepInfo& info) {
    steps.push_back(info.step);
    lrs.push_back(info.lr);
    return true;
  });
  REQUIRE(steps.size() == 3);
  CHECK(steps[0] == 4);
  CHECK(lrs[0] == doctest::Approx(cosine_lr(3, tc.lr_start, tc.lr_end, 6)).epsilon(1e-12));
  CHECK(m.cfg.trained_steps == 6);

  // Fully trained checkpoints are a no-op to rerun.
  Trainer t3(m, tc);
  t3.run(data, [&](const StepInfo&) {
    FAIL("no step expected");
    return true;
  });
  CHECK(m.cfg.trained_steps == 6);
}

TEST_CASE("non-finite gradients skip the step and eventually abort") {
  ModelConfig cfg = toy_config();
  Model m = init_model(cfg, 5);
  m.params.at("block0.ff1.w1").shadow.v[0] = std::nan("");
  auto data = toy_data(4, cfg.table_rows());

  TrainConfig tc = toy_train(10);
  tc.max_skip_streak = 2;
  Trainer t(m, tc);

  std::vector<const TrainExample*> batch;
  for (const auto& ex : data) batch.push_back(&ex);

  Tensor before = m.params.at("input.ff2.0.w").shadow;
  StepInfo s1 = t.step(batch);
  CHECK(s1.skipped);
  CHECK(s1.total_skips == 1);
  CHECK(m.cfg.trained_steps == 0);
  double diff = 0.0;
  for (size_t i = 0; i < before.v.size(); ++i)
    diff = std::max(diff, std::fabs(before.v[i] - m.params.at("input.ff2.0.w").shadow.v[i]));
  CHECK(diff == 0.0);

  StepInfo s2 = t.step(batch);
  CHECK(s2.skipped);
  CHECK_THROWS_AS(t.step(batch), DivergenceError);
}

TEST_CASE("training a batch smaller than configured is rejected") {
  ModelConfig cfg = toy_config();
  Model m = init_model(cfg, 6);
  auto data = toy_data(3, cfg.table_rows());
  Trainer t(m, toy_train(2));
  CHECK_THROWS_AS(t.run(data), DataError);
}

TEST_CASE("multi-context training reports all three sub-losses") {
  ModelConfig cfg = toy_config();
  cfg.multi_context = true;
  Model m = init_model(cfg, 7);
  auto data = toy_data(8, cfg.table_rows());

  TrainConfig tc = toy_train(2);
  tc.multi = true;
  Trainer t(m, tc);
  t.run(data, [&](const StepInfo& info) {
    CHECK(std::isfinite(info.loss_x));
    CHECK(std::isfinite(info.loss_z));
    CHECK(std::isfinite(info.loss_xz));
    CHECK(info.loss ==
          doctest::Approx(info.loss_x + info.loss_z + info.loss_xz).epsilon(1e-9));
    return true;
  });
  CHECK(m.cfg.trained_steps == 2);
}

TEST_CASE("checkpoint hook fires on the configured period") {
  ModelConfig cfg = toy_config();
  Model m = init_model(cfg, 8);
  auto data = toy_data(8, cfg.table_rows());

  Trainer t(m, toy_train(6));
  std::vector<int64_t> saves;
  t.run(data, nullptr, 2, [&](int64_t step) { saves.push_back(step); });
  CHECK(saves == std::vector<int64_t>{2, 4, 6});
}
