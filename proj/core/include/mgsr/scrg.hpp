#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mgsr/lm.hpp"
#include "mgsr/prob.hpp"
#include "mgsr/rng.hpp"

namespace mgsr::scrg {

enum class Provenance { Student, TeacherCorrected, Dataset };
std::string provenance_name(Provenance p);

/// A prompt plus response tokens with per-token provenance and an optional
/// corrected position.
struct GeneratedSample {
  std::vector<int> prompt;
  std::vector<int> tokens;
  std::vector<Provenance> provenance;
  std::optional<int> corrected_position;
  std::optional<std::vector<double>> per_token_kld;
  // Set when tokens are a verbatim dataset response, so callers can look up
  // sidecar annotations by entry index.
  std::optional<std::int64_t> dataset_index;

  void validate() const;
};

/// Next-token distribution source. The transformer adapts to this; test
/// fixtures plug in hand-built table models.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;
  virtual ProbVector next_dist(std::span<const int> prompt,
                               std::span<const int> prefix) const = 0;
  // Distributions at every position of `tokens` (position i conditioned on
  // tokens[<i]). Default loops over next_dist.
  virtual std::vector<ProbVector> sequence_dists(std::span<const int> prompt,
                                                 std::span<const int> tokens) const;
};

class LmPolicy final : public PolicyModel {
 public:
  explicit LmPolicy(const lm::TransformerLM& model) : model_(&model) {}
  ProbVector next_dist(std::span<const int> prompt,
                       std::span<const int> prefix) const override;
  std::vector<ProbVector> sequence_dists(std::span<const int> prompt,
                                         std::span<const int> tokens) const override;

 private:
  const lm::TransformerLM* model_;
};

enum class PolicyKind {
  FixedDataset,
  Student,
  Teacher,
  Mixed,
  ScrgOnPolicy,
  ScrgOffPolicy,
};
std::string policy_name(PolicyKind k);
PolicyKind policy_from_name(const std::string& name);  // accepts "mixed:R" flags too

struct GenerationPolicy {
  PolicyKind kind = PolicyKind::FixedDataset;
  double mixed_ratio = 0.5;  // Mixed only
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct DatasetEntry {
  std::vector<int> prompt;
  std::vector<int> response;
};
using Dataset = std::vector<DatasetEntry>;

struct ReplayBuffer {
  std::size_t capacity = 1000;
  double p_gen = 0.5;  // probability of generating fresh samples

  struct Entry {
    GeneratedSample sample;
    std::int64_t step = 0;
  };
  std::deque<Entry> entries;

  std::size_t size() const { return entries.size(); }
  void insert(GeneratedSample sample, std::int64_t step);
  const GeneratedSample& draw(Rng& rng) const;
};

struct GenerationOptions {
  int max_len = 24;
  int stop_token = 0;
  // Student decoding during generation/regeneration.
  lm::DecodeKind student_decode = lm::DecodeKind::Sample;
  double student_temperature = 1.0;
  // Teacher token selection during correction; greedy by default.
  bool teacher_greedy = true;
  double teacher_temperature = 1.0;
};

struct BatchStats {
  int fresh = 0;
  int from_buffer = 0;
  int corrected = 0;
  int buffer_fallbacks = 0;
};

// Element i = KLD(student_i || teacher_i) with 1e-12 clamping.
std::vector<double> token_kld_profile(const std::vector<ProbVector>& student_dists,
                                      const std::vector<ProbVector>& teacher_dists);

// argmax of the profile restricted to mismatch positions; ties toward the
// smallest index; empty candidate set -> nullopt.
std::optional<int> detect_error_token(std::span<const int> student_tokens,
                                      std::span<const int> teacher_tokens,
                                      std::span<const double> kld_profile);

// Plain autoregressive decoding through a PolicyModel.
std::vector<int> generate_tokens(const PolicyModel& model,
                                 std::span<const int> prompt,
                                 const GenerationOptions& opts,
                                 lm::DecodeKind decode, double temperature,
                                 Rng& rng);

// Detects the worst-divergence mismatched token in `sample`, substitutes the
// teacher token there and re-generates the suffix with the student. Returns
// the sample unchanged when student and teacher tokens agree everywhere.
GeneratedSample correct_and_regenerate(const PolicyModel& student,
                                       const PolicyModel& teacher,
                                       std::span<const int> prompt,
                                       const GeneratedSample& sample,
                                       const GenerationOptions& opts,
                                       std::uint64_t seed);

// One training batch according to the generation policy. `buffer` is required
// for ScrgOffPolicy. Per-sample seeds are derived from (rng_seed, step, i) so
// results are independent of evaluation order.
std::vector<GeneratedSample> sample_batch(const GenerationPolicy& policy,
                                          const Dataset& dataset,
                                          const PolicyModel& student,
                                          const PolicyModel& teacher,
                                          std::size_t batch_size,
                                          std::int64_t step,
                                          const GenerationOptions& opts,
                                          ReplayBuffer* buffer = nullptr,
                                          BatchStats* stats = nullptr);

// Plateau-triggered schedule: p_gen grows by delta (clamped to 1) whenever the
// latest validation loss fails to improve on the previous one by eps_plateau.
double update_schedule(ReplayBuffer& buffer,
                       std::span<const double> validation_loss_history,
                       double delta = 0.1, double eps_plateau = 1e-3);

// One JSON object per line: prompt ids, token ids, provenance tags,
// corrected_position, per-token KLD.
void dump_samples_jsonl(std::span<const GeneratedSample> samples, std::ostream& out);

}  // namespace mgsr::scrg
