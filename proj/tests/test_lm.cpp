#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgsr/lm.hpp"

using namespace mgsr;

namespace {

lm::ModelConfig tiny_config(std::uint64_t seed = 1) {
  lm::ModelConfig c;
  c.vocab_size = 11;
  c.context_len = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("config invariants") {
  lm::ModelConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.d_model = 9;  // not divisible by heads
  CHECK_THROWS(c.validate());
  c = tiny_config();
  c.vocab_size = 3;
  CHECK_THROWS(c.validate());
  c = tiny_config();
  c.context_len = 7;
  CHECK_THROWS(c.validate());
}

TEST_CASE("forward rows are distributions") {
  const lm::TransformerLM model(tiny_config());
  const auto dists = model.forward({{1, 2, 3}, {4, 5, 6, 0}});
  CHECK(dists.size() == 4);
  for (const auto& d : dists) {
    double s = 0;
    for (double p : d) {
      CHECK(p >= 0.0);
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("causality: later tokens cannot affect earlier outputs") {
  const lm::TransformerLM model(tiny_config(9));
  const auto a = model.forward({{1, 2}, {3, 4, 5, 6}});
  const auto b = model.forward({{1, 2}, {3, 4, 9, 10}});
  // Row i conditions on response[<i]; rows 0..2 share their prefixes.
  for (int i = 0; i < 3; ++i)
    for (size_t k = 0; k < a[i].size(); ++k) CHECK(a[i][k] == b[i][k]);
}

TEST_CASE("zeroed output head gives uniform rows") {
  lm::TransformerLM model(tiny_config());
  for (auto& v : model.param("head.w").mutable_values()) v = 0.0;
  for (auto& v : model.param("head.b").mutable_values()) v = 0.0;
  const auto dists = model.forward({{1}, {2, 3}});
  for (const auto& d : dists)
    for (double p : d) CHECK(p == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("greedy decode and tie-break") {
  CHECK(lm::greedy_token({0.1, 0.7, 0.2}) == 1);
  CHECK(lm::greedy_token({0.25, 0.25, 0.25, 0.25}) == 0);
}

TEST_CASE("sampling is seeded and temperature-checked") {
  const lm::TransformerLM model(tiny_config(4));
  lm::DecodeMode mode{lm::DecodeKind::Sample, 1.0, 42};
  const std::vector<int> prompt = {1, 2}, prefix = {3};
  const int a = model.next_token(prompt, prefix, mode);
  const int b = model.next_token(prompt, prefix, mode);
  CHECK(a == b);
  Rng rng(1);
  CHECK_THROWS(lm::sample_token({0.5, 0.5}, 0.0, rng));
  CHECK_THROWS(lm::sample_token({0.5, 0.5}, -1.0, rng));
}

TEST_CASE("generate stops and is idempotent under greedy") {
  const lm::TransformerLM model(tiny_config(6));
  lm::DecodeMode greedy;
  const std::vector<int> prompt = {1, 2};
  const auto empty = model.generate(prompt, 0, greedy, 0);
  CHECK(empty.response.empty());
  const auto a = model.generate(prompt, 8, greedy, 0);
  const auto b = model.generate(prompt, 8, greedy, 0);
  CHECK(a.response == b.response);
  CHECK(a.response.size() <= 8);
}

TEST_CASE("stop token ends generation immediately") {
  lm::TransformerLM model(tiny_config());
  // Bias the head so token 0 dominates every position.
  for (auto& v : model.param("head.w").mutable_values()) v = 0.0;
  auto& b = model.param("head.b").mutable_values();
  for (auto& v : b) v = 0.0;
  b[0] = 50.0;
  const std::vector<int> prompt = {1};
  const auto g = model.generate(prompt, 8, lm::DecodeMode{}, 0);
  CHECK(g.response == std::vector<int>{0});
}

TEST_CASE("token range and context errors") {
  const lm::TransformerLM model(tiny_config());
  CHECK_THROWS(model.forward({{1}, {11}}));
  CHECK_THROWS(model.forward({{-1}, {2}}));
  CHECK_THROWS(model.forward(
      {{1, 2, 3, 4, 5, 6, 7, 8}, {1, 2, 3, 4, 5, 6, 7, 8, 9}}));
}

TEST_CASE("teacher config has more parameters than student") {
  lm::ModelConfig teacher = tiny_config();
  teacher.n_layers = 2;
  teacher.d_model = 32;
  teacher.d_ff = 64;
  lm::ModelConfig student = tiny_config();
  CHECK(lm::TransformerLM(teacher).parameter_count() >
        lm::TransformerLM(student).parameter_count());
}
