#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgsr/rng.hpp"
#include "mgsr/scrg.hpp"

using namespace mgsr;

namespace {

// Table model over vocab 4: the next-token distribution is a pure function of
// the prefix length (and optionally the prefix content).
class TablePolicy final : public scrg::PolicyModel {
 public:
  using Fn = std::function<ProbVector(std::span<const int>, std::span<const int>)>;
  explicit TablePolicy(Fn fn) : fn_(std::move(fn)) {}
  ProbVector next_dist(std::span<const int> prompt,
                       std::span<const int> prefix) const override {
    return fn_(prompt, prefix);
  }

 private:
  Fn fn_;
};

ProbVector peaked(int i) {
  ProbVector p(4, 0.05);
  p[i] = 0.85;
  return p;
}

// Student says 1 2 3 0; teacher says 1 3 3 0 on the student's prefixes.
TablePolicy student_abc() {
  return TablePolicy([](auto, auto prefix) {
    switch (prefix.size()) {
      case 0: return peaked(1);
      case 1: return peaked(2);
      case 2: return peaked(3);
      default: return peaked(0);
    }
  });
}

TablePolicy teacher_axc() {
  return TablePolicy([](auto, auto prefix) {
    switch (prefix.size()) {
      case 0: return peaked(1);
      case 1: return peaked(3);
      case 2: return peaked(3);
      default: return peaked(0);
    }
  });
}

ProbVector random_simplex(Rng& rng, size_t n) {
  ProbVector p(n);
  double s = 0;
  for (auto& x : p) {
    x = -std::log(rng.next_double() + 1e-300);
    s += x;
  }
  for (auto& x : p) x /= s;
  return p;
}

scrg::GenerationOptions greedy_opts() {
  scrg::GenerationOptions o;
  o.max_len = 6;
  o.student_decode = lm::DecodeKind::Greedy;
  return o;
}

}  // namespace

TEST_CASE("token_kld_profile values") {
  const std::vector<ProbVector> same = {{0.5, 0.5}, {0.25, 0.75}};
  for (double v : scrg::token_kld_profile(same, same))
    CHECK(v == doctest::Approx(0.0));

  const auto p = scrg::token_kld_profile({{0.75, 0.25}}, {{0.5, 0.5}});
  const double expect = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.1308).epsilon(1e-3));

  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_simplex(rng, 6);
    const auto b = random_simplex(rng, 6);
    CHECK(scrg::token_kld_profile({a}, {b})[0] >= -1e-12);
  }
  CHECK_THROWS(scrg::token_kld_profile({{1.0}}, {}));
}

TEST_CASE("detect_error_token") {
  const std::vector<int> s = {1, 1, 2, 1, 2};
  const std::vector<int> t = {1, 1, 3, 1, 3};
  const std::vector<double> k = {0.0, 0.0, 0.8, 0.0, 1.2};
  CHECK(scrg::detect_error_token(s, t, k).value() == 4);
  CHECK_FALSE(scrg::detect_error_token(s, s, k).has_value());
  const std::vector<double> k1 = {0.0, 0.5, 0.0, 0.0, 0.0};
  const std::vector<int> t1 = {1, 2, 2, 1, 2};
  CHECK(scrg::detect_error_token(s, t1, k1).value() == 1);
  // Ties break toward the smallest index.
  const std::vector<double> tie = {0.0, 0.0, 0.7, 0.0, 0.7};
  CHECK(scrg::detect_error_token(s, t, tie).value() == 2);
  CHECK_THROWS(scrg::detect_error_token(s, t, std::vector<double>{1.0}));
}

TEST_CASE("detect_error_token matches brute force on 1000 random profiles") {
  Rng rng(77);
  for (int t = 0; t < 1000; ++t) {
    const size_t n = 1 + rng.next_below(6);
    std::vector<int> a(n), b(n);
    std::vector<double> k(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.next_below(4));
      b[i] = static_cast<int>(rng.next_below(4));
      k[i] = rng.next_double();
    }
    std::optional<int> expect;
    for (size_t i = 0; i < n; ++i) {
      if (a[i] == b[i]) continue;
      if (!expect || k[i] > k[*expect]) expect = static_cast<int>(i);
    }
    CHECK(scrg::detect_error_token(a, b, k) == expect);
  }
}

TEST_CASE("correct_and_regenerate fixture") {
  const auto student = student_abc();
  const auto teacher = teacher_axc();
  const std::vector<int> prompt = {1};
  scrg::GeneratedSample in;
  in.prompt = prompt;
  in.tokens = {1, 2, 3, 0};
  in.provenance.assign(4, scrg::Provenance::Student);

  const auto out =
      scrg::correct_and_regenerate(student, teacher, prompt, in, greedy_opts(), 3);
  REQUIRE(out.corrected_position.has_value());
  CHECK(*out.corrected_position == 1);
  CHECK(out.tokens[0] == 1);                                     // prefix kept
  CHECK(out.tokens[1] == 3);                                     // teacher token
  CHECK(out.provenance[1] == scrg::Provenance::TeacherCorrected);
  CHECK(out.tokens == std::vector<int>{1, 3, 3, 0});             // student suffix
  CHECK_NOTHROW(out.validate());
}

TEST_CASE("correct_and_regenerate leaves matching samples unchanged") {
  const auto student = student_abc();
  const std::vector<int> prompt = {1};
  scrg::GeneratedSample in;
  in.prompt = prompt;
  in.tokens = {1, 2, 3, 0};
  in.provenance.assign(4, scrg::Provenance::Student);
  const auto out =
      scrg::correct_and_regenerate(student, student, prompt, in, greedy_opts(), 3);
  CHECK(out.tokens == in.tokens);
  CHECK_FALSE(out.corrected_position.has_value());
}

TEST_CASE("correct_and_regenerate rejects prompt mismatch") {
  const auto student = student_abc();
  scrg::GeneratedSample in;
  in.prompt = {1};
  in.tokens = {1};
  in.provenance = {scrg::Provenance::Student};
  const std::vector<int> other = {2};
  CHECK_THROWS(
      scrg::correct_and_regenerate(student, student, other, in, greedy_opts(), 3));
}

TEST_CASE("GeneratedSample invariants") {
  scrg::GeneratedSample s;
  s.tokens = {1, 2};
  s.provenance = {scrg::Provenance::Student};
  CHECK_THROWS(s.validate());
  s.provenance = {scrg::Provenance::Student, scrg::Provenance::TeacherCorrected};
  CHECK_THROWS(s.validate());  // corrected tag without corrected_position
  s.corrected_position = 1;
  CHECK_NOTHROW(s.validate());
  s.per_token_kld = std::vector<double>{0.1};
  CHECK_THROWS(s.validate());
}

TEST_CASE("sample_batch degenerate policies coincide") {
  const auto student = student_abc();
  const auto teacher = teacher_axc();
  scrg::Dataset data = {{{1}, {1, 2, 0}}, {{2}, {2, 0}}, {{3}, {3, 3, 0}}};
  scrg::GenerationPolicy fixed{scrg::PolicyKind::FixedDataset, 0.5, 99};
  scrg::GenerationPolicy mixed0{scrg::PolicyKind::Mixed, 0.0, 99};
  scrg::GenerationPolicy mixed1{scrg::PolicyKind::Mixed, 1.0, 99};
  scrg::GenerationPolicy stu{scrg::PolicyKind::Student, 0.5, 99};
  const auto opts = greedy_opts();
  for (std::int64_t step = 0; step < 4; ++step) {
    const auto a = scrg::sample_batch(fixed, data, student, teacher, 5, step, opts);
    const auto b = scrg::sample_batch(mixed0, data, student, teacher, 5, step, opts);
    const auto c = scrg::sample_batch(mixed1, data, student, teacher, 5, step, opts);
    const auto d = scrg::sample_batch(stu, data, student, teacher, 5, step, opts);
    REQUIRE(a.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
      CHECK(a[i].tokens == b[i].tokens);
      CHECK(a[i].dataset_index == b[i].dataset_index);
      CHECK(c[i].tokens == d[i].tokens);
      CHECK(a[i].provenance.front() == scrg::Provenance::Dataset);
      CHECK(c[i].provenance.front() == scrg::Provenance::Student);
      CHECK(a[i].dataset_index.has_value());
      CHECK_FALSE(c[i].dataset_index.has_value());
    }
  }
}

TEST_CASE("sample_batch is reproducible") {
  const auto student = student_abc();
  const auto teacher = teacher_axc();
  scrg::Dataset data = {{{1}, {1, 2, 0}}, {{2}, {2, 0}}};
  scrg::GenerationPolicy pol{scrg::PolicyKind::ScrgOnPolicy, 0.5, 7};
  const auto opts = greedy_opts();
  const auto a = scrg::sample_batch(pol, data, student, teacher, 8, 3, opts);
  const auto b = scrg::sample_batch(pol, data, student, teacher, 8, 3, opts);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].corrected_position == b[i].corrected_position);
  }
}

TEST_CASE("off-policy buffer respects capacity and falls back when empty") {
  const auto student = student_abc();
  const auto teacher = teacher_axc();
  scrg::Dataset data = {{{1}, {1, 2, 0}}};
  scrg::GenerationPolicy pol{scrg::PolicyKind::ScrgOffPolicy, 0.5, 13};
  scrg::ReplayBuffer buffer;
  buffer.capacity = 100;
  buffer.p_gen = 0.5;
  const auto opts = greedy_opts();
  scrg::BatchStats stats;
  int fallbacks = 0;
  for (std::int64_t step = 0; step < 250; ++step) {
    scrg::sample_batch(pol, data, student, teacher, 4, step, opts, &buffer, &stats);
    CHECK(buffer.size() <= 100);
    fallbacks += stats.buffer_fallbacks;
  }
  CHECK(buffer.size() == 100);
  CHECK(fallbacks >= 0);
  CHECK_THROWS(
      scrg::sample_batch(pol, data, student, teacher, 4, 0, opts, nullptr));
}

TEST_CASE("replay buffer is FIFO and rejects empty draws") {
  scrg::ReplayBuffer buffer;
  buffer.capacity = 2;
  Rng rng(1);
  CHECK_THROWS(buffer.draw(rng));
  scrg::GeneratedSample s;
  for (int i = 0; i < 3; ++i) {
    s.tokens = {i};
    s.provenance = {scrg::Provenance::Student};
    buffer.insert(s, i);
  }
  CHECK(buffer.size() == 2);
  CHECK(buffer.entries.front().sample.tokens == std::vector<int>{1});
}

TEST_CASE("update_schedule plateau rule") {
  scrg::ReplayBuffer b;
  b.p_gen = 0.3;
  const std::vector<double> improving = {2.0, 1.5};
  CHECK(scrg::update_schedule(b, improving) == doctest::Approx(0.3));

  b.p_gen = 0.95;
  const std::vector<double> flat = {1.0, 1.0};
  CHECK(scrg::update_schedule(b, flat) == doctest::Approx(1.0));

  // Alternating improve/plateau over 10 epochs: 5 plateau triggers.
  b.p_gen = 0.2;
  std::vector<double> hist = {10.0};
  double v = 10.0;
  for (int i = 0; i < 10; ++i) {
    v += (i % 2 == 0) ? 0.0 : -1.0;
    hist.push_back(v);
    scrg::update_schedule(b, hist);
  }
  CHECK(b.p_gen == doctest::Approx(std::min(1.0, 0.2 + 5 * 0.1)));
}

TEST_CASE("sample dump is valid JSONL") {
  scrg::GeneratedSample s;
  s.prompt = {1, 2};
  s.tokens = {3, 0};
  s.provenance = {scrg::Provenance::Student, scrg::Provenance::TeacherCorrected};
  s.corrected_position = 1;
  s.per_token_kld = std::vector<double>{0.1, 0.9};
  std::ostringstream out;
  scrg::dump_samples_jsonl(std::vector<scrg::GeneratedSample>{s}, out);
  const auto j = nlohmann::json::parse(out.str());
  CHECK(j["tokens"] == std::vector<int>{3, 0});
  CHECK(j["corrected_position"] == 1);
  CHECK(j["provenance"][1] == "teacher_corrected");
}

TEST_CASE("policy names round-trip") {
  for (const char* name : {"fixed", "student", "teacher", "mixed", "scrg-on",
                           "scrg-off"})
    CHECK(scrg::policy_name(scrg::policy_from_name(name)) == name);
  CHECK(scrg::policy_from_name("mixed:0.25") == scrg::PolicyKind::Mixed);
  CHECK_THROWS(scrg::policy_from_name("bogus"));
}
