#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgsr/corpus.hpp"
#include "mgsr/trainer.hpp"

using namespace mgsr;
using ad::Tensor;
using nlohmann::json;

namespace {

lm::ModelConfig tiny_model_config(std::uint64_t seed = 1) {
  lm::ModelConfig c;
  c.vocab_size = 31;
  c.context_len = 32;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.seed = seed;
  return c;
}

train::TrainConfig quick_config(int epochs) {
  train::TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.weights = {1.0, 0.0, 0.0};
  c.policy.kind = scrg::PolicyKind::FixedDataset;
  c.seed = 3;
  return c;
}

corpus::GeneratedCorpus small_corpus() {
  corpus::GrammarConfig g;
  g.seed = 5;
  g.train_size = 48;
  g.val_size = 8;
  g.test_size = 8;
  return corpus::gen_synthetic_corpus(g);
}

// Metrics equality modulo wallclock, which is never reproducible.
bool same_metrics(const std::vector<train::MetricsRecord>& a,
                  const std::vector<train::MetricsRecord>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].epoch != b[i].epoch ||
        a[i].loss_sft != b[i].loss_sft || a[i].loss_dac != b[i].loss_dac ||
        a[i].loss_span != b[i].loss_span || a[i].loss_total != b[i].loss_total ||
        a[i].validation_loss != b[i].validation_loss || a[i].p_gen != b[i].p_gen ||
        a[i].corrected_fraction != b[i].corrected_fraction)
      return false;
  }
  return true;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("adam first step moves by roughly lr against the gradient") {
  train::ParamList params;
  params.emplace_back("p", Tensor::leaf({2}, {1.0, -2.0}));
  Tensor loss = ad::sum(ad::mul(params[0].second, params[0].second));
  ad::backward(loss);  // grad = 2x = {2, -4}
  train::Adam opt(0.01);
  std::vector<train::ParamList*> groups = {&params};
  opt.step(groups);
  // bias-corrected m-hat/(sqrt(v-hat)+eps) == sign(g) on step one
  CHECK(params[0].second.values()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(params[0].second.values()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("adam state follows parameter order across groups") {
  train::ParamList a, b;
  a.emplace_back("a", Tensor::leaf({1}, {1.0}));
  b.emplace_back("b", Tensor::leaf({1}, {1.0}));
  std::vector<train::ParamList*> groups = {&a, &b};
  train::Adam opt(0.1);
  for (int t = 0; t < 3; ++t) {
    a[0].second.zero_grad();
    b[0].second.zero_grad();
    ad::backward(ad::add(ad::sum(a[0].second), ad::sum(b[0].second)));
    opt.step(groups);
    CHECK(a[0].second.values()[0] == doctest::Approx(b[0].second.values()[0]));
  }
}

TEST_CASE("clip_global_norm") {
  train::ParamList params;
  params.emplace_back("p", Tensor::leaf({2}, {0.0, 0.0}));
  std::vector<train::ParamList*> groups = {&params};

  ad::backward(ad::sum(ad::mul(params[0].second, Tensor::constant({2}, {3.0, 4.0}))));
  CHECK(train::clip_global_norm(groups, 1.0) == doctest::Approx(5.0));
  CHECK(params[0].second.grad()[0] == doctest::Approx(0.6));
  CHECK(params[0].second.grad()[1] == doctest::Approx(0.8));

  params[0].second.zero_grad();
  ad::backward(ad::sum(ad::mul(params[0].second, Tensor::constant({2}, {0.3, 0.4}))));
  CHECK(train::clip_global_norm(groups, 1.0) == doctest::Approx(0.5));
  CHECK(params[0].second.grad()[0] == doctest::Approx(0.3));
}

TEST_CASE("train config JSON round trip") {
  train::TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 7;
  c.weights = {0.5, 0.25, 0.125};
  c.policy.kind = scrg::PolicyKind::Mixed;
  c.policy.mixed_ratio = 0.75;
  c.objective = div::Objective::JSD;
  c.clip_mode = div::ClipMode::hard();
  c.dac_components = div::DacComponents::TargetOnly;
  c.select_by = train::SelectBy::ValidationRouge;
  c.seed = 99;

  json j = c;
  train::TrainConfig back = j.get<train::TrainConfig>();
  json j2 = back;
  CHECK(j == j2);
  CHECK(back.epochs == 7);
  CHECK(back.policy.kind == scrg::PolicyKind::Mixed);
  CHECK(back.clip_mode.kind == div::ClipModeKind::Hard);
  CHECK(back.select_by == train::SelectBy::ValidationRouge);

  // missing keys fall back to defaults
  train::TrainConfig d = json::parse("{\"epochs\": 3}").get<train::TrainConfig>();
  CHECK(d.epochs == 3);
  CHECK(d.learning_rate == doctest::Approx(5e-4));
}

TEST_CASE("train config validation") {
  train::TrainConfig c = quick_config(1);
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS(c.validate());
  c = quick_config(1);
  c.epochs = -1;
  CHECK_THROWS(c.validate());
  c = quick_config(1);
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = quick_config(1);
  c.weights.w_dac = -0.5;
  CHECK_THROWS(c.validate());
  c = quick_config(1);
  c.validation_fraction = 1.5;
  CHECK_THROWS(c.validate());
}

TEST_CASE("metrics records serialize with sorted keys") {
  train::MetricsRecord r;
  r.step = 3;
  r.epoch = 1;
  r.loss_total = 0.5;
  std::ostringstream out;
  train::write_metrics(r, out);
  const json j = json::parse(out.str());
  CHECK(j["step"] == 3);
  CHECK(j["loss_total"] == 0.5);
  CHECK(out.str().find("\"epoch\"") < out.str().find("\"step\""));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  lm::TransformerLM model(tiny_model_config());

  SUBCASE("model only") {
    const std::string bytes = train::checkpoint_bytes(model, nullptr);
    std::istringstream in(bytes);
    train::Checkpoint ck = train::load_checkpoint(in);
    CHECK(ck.model_config == model.config());
    CHECK(ck.subnet == nullptr);
    CHECK(train::checkpoint_bytes(*ck.model, nullptr) == bytes);
  }

  SUBCASE("model plus sub-network") {
    div::SubNetwork subnet(model.config().vocab_size, 17, 8);
    const std::string bytes = train::checkpoint_bytes(model, &subnet);
    std::istringstream in(bytes);
    train::Checkpoint ck = train::load_checkpoint(in);
    REQUIRE(ck.subnet != nullptr);
    CHECK(train::checkpoint_bytes(*ck.model, ck.subnet.get()) == bytes);
    for (size_t i = 0; i < subnet.parameters().size(); ++i)
      CHECK(ck.subnet->parameters()[i].second.values() ==
            subnet.parameters()[i].second.values());
  }

  SUBCASE("file round trip") {
    const auto path = temp_file("mgsr_ckpt_roundtrip.ckpt");
    train::save_checkpoint(model, nullptr, path.string());
    train::Checkpoint ck = train::load_checkpoint(path.string());
    CHECK(train::checkpoint_bytes(*ck.model, nullptr) ==
          train::checkpoint_bytes(model, nullptr));
    std::filesystem::remove(path);
  }
}

TEST_CASE("checkpoint corruption is detected") {
  lm::TransformerLM model(tiny_model_config());
  const std::string bytes = train::checkpoint_bytes(model, nullptr);

  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream in1(bad);
  CHECK_THROWS_WITH_AS(train::load_checkpoint(in1), doctest::Contains("magic"),
                       std::runtime_error);

  bad = bytes;
  bad[4] = 99;  // version field
  std::istringstream in2(bad);
  CHECK_THROWS_WITH_AS(train::load_checkpoint(in2), doctest::Contains("version"),
                       std::runtime_error);

  std::istringstream in3(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(train::load_checkpoint(in3));
}

TEST_CASE("load_checkpoint_into rejects mismatched configurations") {
  lm::TransformerLM model(tiny_model_config());
  const auto path = temp_file("mgsr_ckpt_mismatch.ckpt");
  train::save_checkpoint(model, nullptr, path.string());

  lm::TransformerLM same(tiny_model_config(8));  // differing seed is fine
  CHECK_NOTHROW(train::load_checkpoint_into(same, path.string()));
  for (size_t i = 0; i < model.parameters().size(); ++i)
    CHECK(same.parameters()[i].second.values() ==
          model.parameters()[i].second.values());

  auto other_cfg = tiny_model_config();
  other_cfg.d_model = 32;
  other_cfg.d_ff = 64;
  lm::TransformerLM other(other_cfg);
  CHECK_THROWS(train::load_checkpoint_into(other, path.string()));
  std::filesystem::remove(path);
}

TEST_CASE("zero epochs returns the initial parameters") {
  const auto c = small_corpus();
  auto mc = tiny_model_config();
  mc.vocab_size = c.vocab.size();
  lm::TransformerLM model(mc);
  const std::string init = train::checkpoint_bytes(model, nullptr);
  const auto res = train_teacher(quick_config(0), model, c.train, c.val);
  CHECK(res.checkpoint == init);
  CHECK(res.metrics.empty());
  CHECK_FALSE(res.nan_abort);
}

TEST_CASE("training is reproducible and the loss goes down") {
  const auto c = small_corpus();
  auto mc = tiny_model_config();
  mc.vocab_size = c.vocab.size();

  lm::TransformerLM m1(mc);
  lm::TransformerLM m2(mc);
  const auto cfg = quick_config(4);
  const auto r1 = train_teacher(cfg, m1, c.train, c.val);
  const auto r2 = train_teacher(cfg, m2, c.train, c.val);
  CHECK(r1.checkpoint == r2.checkpoint);
  CHECK(same_metrics(r1.metrics, r2.metrics));
  REQUIRE_FALSE(r1.metrics.empty());
  CHECK(r1.metrics.back().loss_sft < r1.metrics.front().loss_sft);
  CHECK(r1.best_validation > 0.0);

  // loss_total is the weighted sum of the parts in every record
  for (const auto& r : r1.metrics)
    CHECK(r.loss_total == doctest::Approx(cfg.weights.w_sft * r.loss_sft +
                                          cfg.weights.w_dac * r.loss_dac +
                                          cfg.weights.w_span * r.loss_span)
                              .epsilon(1e-12));
}

TEST_CASE("distill with weights (1,0,0) on the fixed dataset matches SFT") {
  const auto c = small_corpus();
  auto mc = tiny_model_config();
  mc.vocab_size = c.vocab.size();
  auto teacher_cfg = mc;
  teacher_cfg.seed = 31;
  lm::TransformerLM teacher(teacher_cfg);
  const std::string teacher_before = train::checkpoint_bytes(teacher, nullptr);

  lm::TransformerLM sft_model(mc);
  lm::TransformerLM dist_model(mc);
  div::SubNetwork subnet(mc.vocab_size, 71);
  const auto cfg = quick_config(2);

  const auto sft = train_teacher(cfg, sft_model, c.train, c.val);
  const auto dist = train::distill(cfg, dist_model, teacher, subnet, c.train,
                                   c.val, c.lexicon, &c.train_spans);
  CHECK(dist.checkpoint == sft.checkpoint);
  CHECK(same_metrics(dist.metrics, sft.metrics));
  CHECK(train::checkpoint_bytes(teacher, nullptr) == teacher_before);
}

TEST_CASE("full distillation runs and keeps the teacher frozen") {
  const auto c = small_corpus();
  auto mc = tiny_model_config();
  mc.vocab_size = c.vocab.size();
  auto tcfg = mc;
  tcfg.seed = 31;
  lm::TransformerLM teacher(tcfg);
  const std::string teacher_before = train::checkpoint_bytes(teacher, nullptr);
  lm::TransformerLM student(mc);
  div::SubNetwork subnet(mc.vocab_size, 71);

  train::TrainConfig cfg = quick_config(1);
  cfg.weights = {1.0, 1.0, 1.0};
  cfg.policy.kind = scrg::PolicyKind::ScrgOnPolicy;
  const auto res = train::distill(cfg, student, teacher, subnet, c.train, c.val,
                                  c.lexicon, &c.train_spans);
  CHECK_FALSE(res.nan_abort);
  REQUIRE_FALSE(res.metrics.empty());
  for (const auto& r : res.metrics) {
    CHECK(std::isfinite(r.loss_dac));
    CHECK(std::isfinite(r.loss_span));
    CHECK(r.loss_total == doctest::Approx(r.loss_sft + r.loss_dac + r.loss_span)
                              .epsilon(1e-9));
  }
  CHECK(train::checkpoint_bytes(teacher, nullptr) == teacher_before);
}

TEST_CASE("a non-finite loss aborts with the pre-step checkpoint") {
  const auto c = small_corpus();
  auto mc = tiny_model_config();
  mc.vocab_size = c.vocab.size();
  lm::TransformerLM model(mc);
  const std::string init = train::checkpoint_bytes(model, nullptr);

  train::TrainConfig cfg = quick_config(2);
  cfg.weights.w_sft = 1e308;  // overflows the weighted total on step one
  const auto res = train_teacher(cfg, model, c.train, c.val);
  CHECK(res.nan_abort);
  CHECK(res.checkpoint == init);
}
