#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgsr/corpus.hpp"
#include "mgsr/evaluate.hpp"
#include "mgsr/rng.hpp"

using namespace mgsr;
using nlohmann::json;

namespace {

// Straightforward full-table LCS, kept separate from the implementation.
int lcs_reference(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
  return dp[a.size()][b.size()];
}

std::vector<int> random_tokens(Rng& rng, size_t max_len, int vocab) {
  std::vector<int> out(1 + rng.next_below(max_len));
  for (auto& t : out) t = static_cast<int>(rng.next_below(vocab));
  return out;
}

lm::TransformerLM tiny_model(int vocab) {
  lm::ModelConfig c;
  c.vocab_size = vocab;
  c.context_len = 32;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.seed = 12;
  return lm::TransformerLM(c);
}

}  // namespace

TEST_CASE("rouge_l worked examples") {
  // "the cat sat on the mat" vs "the cat is on the mat": LCS 5 of 6 tokens.
  const auto s = eval::rouge_l(std::vector<int>{0, 1, 2, 3, 0, 4},
                               std::vector<int>{0, 1, 5, 3, 0, 4});
  CHECK(s.precision == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(s.recall == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(std::abs(s.f1 - 5.0 / 6.0) <= 1e-12);

  const auto same = eval::rouge_l(std::vector<int>{7, 8}, std::vector<int>{7, 8});
  CHECK(same.f1 == doctest::Approx(1.0));
  CHECK(eval::rouge_l(std::vector<int>{1}, std::vector<int>{2}).f1 == 0.0);
  CHECK(eval::rouge_l({}, std::vector<int>{1}).f1 == 0.0);
  CHECK(eval::rouge_l(std::vector<int>{1}, {}).precision == 0.0);
}

TEST_CASE("rouge_l agrees with an independent LCS on 200 random pairs") {
  Rng rng(30);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_tokens(rng, 20, 6);
    const auto b = random_tokens(rng, 20, 6);
    const int lcs = lcs_reference(a, b);
    const auto s = eval::rouge_l(a, b);
    const double p = static_cast<double>(lcs) / a.size();
    const double r = static_cast<double>(lcs) / b.size();
    CHECK(s.precision == doctest::Approx(p).epsilon(1e-12));
    CHECK(s.recall == doctest::Approx(r).epsilon(1e-12));
    if (lcs > 0)
      CHECK(s.f1 == doctest::Approx(2 * p * r / (p + r)).epsilon(1e-12));
    else
      CHECK(s.f1 == 0.0);
    // swapping operands swaps precision and recall
    const auto sw = eval::rouge_l(b, a);
    CHECK(sw.precision == doctest::Approx(s.recall));
    CHECK(sw.f1 == doctest::Approx(s.f1));
  }
}

TEST_CASE("evaluate_multiseed") {
  const auto model = tiny_model(11);
  scrg::Dataset data;
  data.push_back({{1, 2, 3}, {4, 5, 0}});
  data.push_back({{2, 2}, {1, 0}});

  SUBCASE("errors on empty input") {
    const std::vector<std::uint64_t> seeds = {10};
    CHECK_THROWS(eval::evaluate_multiseed(model, {}, seeds, {}));
    CHECK_THROWS(eval::evaluate_multiseed(model, data, {}, {}));
  }

  SUBCASE("single seed mean matches the grand mean") {
    const std::vector<std::uint64_t> seeds = {10};
    lm::DecodeMode mode;
    mode.kind = lm::DecodeKind::Sample;
    const auto r = eval::evaluate_multiseed(model, data, seeds, mode);
    REQUIRE(r.per_seed.size() == 1);
    CHECK(r.mean.f1 == doctest::Approx(r.per_seed[0].mean.f1));
  }

  SUBCASE("duplicated seed reproduces the same per-seed result") {
    const std::vector<std::uint64_t> seeds = {10, 10};
    lm::DecodeMode mode;
    mode.kind = lm::DecodeKind::Sample;
    const auto r = eval::evaluate_multiseed(model, data, seeds, mode);
    REQUIRE(r.per_seed.size() == 2);
    CHECK(r.per_seed[0].mean.f1 == r.per_seed[1].mean.f1);
    CHECK(r.per_seed[0].mean.precision == r.per_seed[1].mean.precision);
  }

  SUBCASE("grand mean is the arithmetic mean of per-seed means") {
    lm::DecodeMode mode;
    mode.kind = lm::DecodeKind::Sample;
    const auto r = eval::evaluate_multiseed(model, data, eval::kDefaultEvalSeeds, mode);
    double acc = 0.0;
    for (const auto& s : r.per_seed) acc += s.mean.f1;
    CHECK(r.mean.f1 == doctest::Approx(acc / r.per_seed.size()).epsilon(1e-12));
  }

  SUBCASE("dump emits one parsable line per prompt and seed") {
    const std::vector<std::uint64_t> seeds = {10, 20};
    std::ostringstream dump;
    lm::DecodeMode mode;
    eval::evaluate_multiseed(model, data, seeds, mode, 24, 0, &dump);
    std::istringstream in(dump.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      const json j = json::parse(line);
      CHECK(j.contains("prompt_id"));
      CHECK(j.contains("seed"));
      CHECK(j.contains("f1"));
      ++lines;
    }
    CHECK(lines == 4);
  }
}

TEST_CASE("export_density") {
  Rng rng(32);
  ProbVector teacher(12);
  double z = 0;
  for (auto& v : teacher) {
    v = rng.next_double() + 0.05;
    z += v;
  }
  for (auto& v : teacher) v /= z;

  SUBCASE("full selection makes both curves coincide") {
    const auto sel = div::dac_clip(teacher, {1.0, 0.0}, div::ClipMode::hard());
    const auto d = eval::export_density(teacher, sel, 64);
    REQUIRE(d.grid.size() == 64);
    for (size_t i = 0; i < d.grid.size(); ++i)
      CHECK(d.density_all[i] == doctest::Approx(d.density_clipped[i]).epsilon(1e-9));
  }

  SUBCASE("densities are non-negative and integrate to about one") {
    const auto sel = div::dac_clip(teacher, {0.15, 0.02}, div::ClipMode::hard());
    const auto d = eval::export_density(teacher, sel, 256);
    double integral = 0.0;
    for (size_t i = 0; i + 1 < d.grid.size(); ++i) {
      CHECK(d.density_all[i] >= 0.0);
      CHECK(d.density_clipped[i] >= 0.0);
      integral += 0.5 * (d.density_all[i] + d.density_all[i + 1]) *
                  (d.grid[i + 1] - d.grid[i]);
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
  }

  SUBCASE("small grids are rejected") {
    const auto sel = div::dac_clip(teacher, {1.0, 0.0}, div::ClipMode::hard());
    CHECK_THROWS(eval::export_density(teacher, sel, 15));
  }

  SUBCASE("csv output has a header and one row per grid point") {
    const auto sel = div::dac_clip(teacher, {1.0, 0.0}, div::ClipMode::hard());
    const auto d = eval::export_density(teacher, sel, 16);
    std::ostringstream out;
    eval::write_density_csv(d, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "grid,density_all,density_clipped");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 16);
  }
}

TEST_CASE("synthetic corpus generation") {
  corpus::GrammarConfig g;
  g.seed = 77;
  g.train_size = 64;
  g.val_size = 16;
  g.test_size = 16;
  const auto c = corpus::gen_synthetic_corpus(g);

  SUBCASE("shape and basic invariants") {
    CHECK(c.train.size() == 64);
    CHECK(c.val.size() == 16);
    CHECK(c.test.size() == 16);
    CHECK(c.vocab.id(corpus::kEosToken) == 0);
    for (const auto& e : c.train) {
      CHECK_FALSE(e.prompt.empty());
      REQUIRE_FALSE(e.response.empty());
      CHECK(e.response.back() == 0);
      for (int t : e.prompt) CHECK(t < c.vocab.size());
    }
  }

  SUBCASE("gold spans validate and match the heuristic chunker") {
    REQUIRE(c.train_spans.size() == c.train.size());
    for (size_t i = 0; i < c.train.size(); ++i) {
      const auto& gold = c.train_spans.at(static_cast<std::int64_t>(i)).spans;
      const auto& resp = c.train[i].response;
      CHECK_NOTHROW(spans::validate_spans(gold, static_cast<int>(resp.size())));
      CHECK(spans::chunk_heuristic(resp, c.lexicon) == gold);
    }
  }

  SUBCASE("same seed, same corpus; different seed, different corpus") {
    const auto again = corpus::gen_synthetic_corpus(g);
    CHECK(again.train.size() == c.train.size());
    bool all_equal = true;
    for (size_t i = 0; i < c.train.size(); ++i)
      all_equal = all_equal && again.train[i].prompt == c.train[i].prompt &&
                  again.train[i].response == c.train[i].response;
    CHECK(all_equal);

    auto g2 = g;
    g2.seed = 78;
    const auto other = corpus::gen_synthetic_corpus(g2);
    bool any_diff = false;
    for (size_t i = 0; i < c.train.size(); ++i)
      any_diff = any_diff || other.train[i].prompt != c.train[i].prompt;
    CHECK(any_diff);
  }

  SUBCASE("written corpus round trips through the loaders") {
    const auto dir = std::filesystem::temp_directory_path() / "mgsr_corpus_rt";
    std::filesystem::remove_all(dir);
    corpus::write_synthetic_corpus(c, dir.string());
    const auto vocab = corpus::Vocab::load((dir / "vocab.txt").string());
    CHECK(vocab.tokens == c.vocab.tokens);
    const auto train = corpus::load_corpus((dir / "train.tsv").string(), vocab);
    REQUIRE(train.size() == c.train.size());
    for (size_t i = 0; i < train.size(); ++i) {
      CHECK(train[i].prompt == c.train[i].prompt);
      CHECK(train[i].response == c.train[i].response);
    }
    const auto ann = spans::load_annotations((dir / "spans.train.txt").string());
    CHECK(ann.size() == c.train_spans.size());
    CHECK(spans::load_lexicon((dir / "lexicon.txt").string()) == c.lexicon);
    std::filesystem::remove_all(dir);
  }

  SUBCASE("bad split sizes are rejected") {
    corpus::GrammarConfig bad;
    bad.train_size = 0;
    CHECK_THROWS(corpus::gen_synthetic_corpus(bad));
  }
}
