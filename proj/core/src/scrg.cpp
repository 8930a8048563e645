#include "mgsr/scrg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mgsr::scrg {

using nlohmann::json;

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Student: return "student";
    case Provenance::TeacherCorrected: return "teacher_corrected";
    case Provenance::Dataset: return "dataset";
  }
  return "student";
}

void GeneratedSample::validate() const {
  if (provenance.size() != tokens.size())
    throw std::invalid_argument("GeneratedSample: provenance length mismatch");
  int corrected = 0;
  for (auto p : provenance)
    if (p == Provenance::TeacherCorrected) ++corrected;
  if (corrected > 1)
    throw std::invalid_argument("GeneratedSample: more than one corrected token");
  if (corrected_position.has_value() != (corrected == 1))
    throw std::invalid_argument(
        "GeneratedSample: corrected_position must be set iff a corrected tag exists");
  if (corrected_position &&
      (*corrected_position < 0 ||
       *corrected_position >= static_cast<int>(tokens.size()) ||
       provenance[*corrected_position] != Provenance::TeacherCorrected))
    throw std::invalid_argument("GeneratedSample: corrected_position inconsistent");
  if (per_token_kld && per_token_kld->size() != tokens.size())
    throw std::invalid_argument("GeneratedSample: per_token_kld length mismatch");
}

std::vector<ProbVector> PolicyModel::sequence_dists(std::span<const int> prompt,
                                                    std::span<const int> tokens) const {
  std::vector<ProbVector> out;
  out.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i)
    out.push_back(next_dist(prompt, tokens.subspan(0, i)));
  return out;
}

ProbVector LmPolicy::next_dist(std::span<const int> prompt,
                               std::span<const int> prefix) const {
  return model_->next_dist(prompt, prefix);
}

std::vector<ProbVector> LmPolicy::sequence_dists(std::span<const int> prompt,
                                                 std::span<const int> tokens) const {
  if (tokens.empty()) return {};
  lm::TokenSequence seq;
  seq.prompt.assign(prompt.begin(), prompt.end());
  seq.response.assign(tokens.begin(), tokens.end());
  return model_->forward(seq);
}

std::string policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::FixedDataset: return "fixed";
    case PolicyKind::Student: return "student";
    case PolicyKind::Teacher: return "teacher";
    case PolicyKind::Mixed: return "mixed";
    case PolicyKind::ScrgOnPolicy: return "scrg-on";
    case PolicyKind::ScrgOffPolicy: return "scrg-off";
  }
  return "fixed";
}

PolicyKind policy_from_name(const std::string& name) {
  if (name == "fixed") return PolicyKind::FixedDataset;
  if (name == "student") return PolicyKind::Student;
  if (name == "teacher") return PolicyKind::Teacher;
  if (name == "mixed" || name.starts_with("mixed:")) return PolicyKind::Mixed;
  if (name == "scrg-on") return PolicyKind::ScrgOnPolicy;
  if (name == "scrg-off") return PolicyKind::ScrgOffPolicy;
  throw std::invalid_argument("unknown generation policy: " + name);
}

void GenerationPolicy::validate() const {
  if (mixed_ratio < 0.0 || mixed_ratio > 1.0)
    throw std::invalid_argument("GenerationPolicy: mixed ratio must be in [0,1]");
}

void ReplayBuffer::insert(GeneratedSample sample, std::int64_t step) {
  if (p_gen < 0.0 || p_gen > 1.0)
    throw std::invalid_argument("ReplayBuffer: p_gen must be in [0,1]");
  entries.push_back({std::move(sample), step});
  while (entries.size() > capacity) entries.pop_front();
}

const GeneratedSample& ReplayBuffer::draw(Rng& rng) const {
  if (entries.empty()) throw std::out_of_range("ReplayBuffer: draw from empty buffer");
  return entries[rng.next_below(entries.size())].sample;
}

std::vector<double> token_kld_profile(const std::vector<ProbVector>& student_dists,
                                      const std::vector<ProbVector>& teacher_dists) {
  if (student_dists.size() != teacher_dists.size())
    throw std::invalid_argument("token_kld_profile: length mismatch " +
                                std::to_string(student_dists.size()) + " vs " +
                                std::to_string(teacher_dists.size()));
  std::vector<double> out(student_dists.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const auto& s = student_dists[i];
    const auto& t = teacher_dists[i];
    if (s.size() != t.size())
      throw std::invalid_argument("token_kld_profile: vocab mismatch at position " +
                                  std::to_string(i));
    double v = 0.0;
    for (size_t k = 0; k < s.size(); ++k) {
      const double sk = s[k] < 1e-12 ? 1e-12 : s[k];
      const double tk = t[k] < 1e-12 ? 1e-12 : t[k];
      v += s[k] * (std::log(sk) - std::log(tk));
    }
    out[i] = v;
  }
  return out;
}

std::optional<int> detect_error_token(std::span<const int> student_tokens,
                                      std::span<const int> teacher_tokens,
                                      std::span<const double> kld_profile) {
  if (student_tokens.size() != teacher_tokens.size() ||
      student_tokens.size() != kld_profile.size())
    throw std::invalid_argument("detect_error_token: length mismatch");
  std::optional<int> best;
  for (size_t i = 0; i < student_tokens.size(); ++i) {
    if (student_tokens[i] == teacher_tokens[i]) continue;
    if (!best || kld_profile[i] > kld_profile[*best]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<int> generate_tokens(const PolicyModel& model, std::span<const int> prompt,
                                 const GenerationOptions& opts, lm::DecodeKind decode,
                                 double temperature, Rng& rng) {
  std::vector<int> tokens;
  for (int i = 0; i < opts.max_len; ++i) {
    const ProbVector dist = model.next_dist(prompt, tokens);
    const int tok = decode == lm::DecodeKind::Greedy
                        ? lm::greedy_token(dist)
                        : lm::sample_token(dist, temperature, rng);
    tokens.push_back(tok);
    if (tok == opts.stop_token) break;
  }
  return tokens;
}

namespace {

int teacher_token_at(const ProbVector& dist, const GenerationOptions& opts, Rng& rng) {
  return opts.teacher_greedy
             ? lm::greedy_token(dist)
             : lm::sample_token(dist, opts.teacher_temperature, rng);
}

GeneratedSample fresh_student_sample(const PolicyModel& student,
                                     std::span<const int> prompt,
                                     const GenerationOptions& opts, Rng& rng) {
  GeneratedSample s;
  s.prompt.assign(prompt.begin(), prompt.end());
  s.tokens = generate_tokens(student, prompt, opts, opts.student_decode,
                             opts.student_temperature, rng);
  s.provenance.assign(s.tokens.size(), Provenance::Student);
  return s;
}

GeneratedSample dataset_sample(const DatasetEntry& e, std::int64_t index) {
  GeneratedSample s;
  s.prompt = e.prompt;
  s.tokens = e.response;
  s.provenance.assign(s.tokens.size(), Provenance::Dataset);
  s.dataset_index = index;
  return s;
}

}  // namespace

GeneratedSample correct_and_regenerate(const PolicyModel& student,
                                       const PolicyModel& teacher,
                                       std::span<const int> prompt,
                                       const GeneratedSample& sample,
                                       const GenerationOptions& opts,
                                       std::uint64_t seed) {
  if (!std::equal(prompt.begin(), prompt.end(), sample.prompt.begin(),
                  sample.prompt.end()))
    throw std::invalid_argument("correct_and_regenerate: prompt/sample mismatch");
  if (sample.tokens.empty()) return sample;

  const auto student_dists = student.sequence_dists(prompt, sample.tokens);
  const auto teacher_dists = teacher.sequence_dists(prompt, sample.tokens);
  const auto profile = token_kld_profile(student_dists, teacher_dists);

  Rng rng(seed);
  std::vector<int> teacher_tokens(sample.tokens.size());
  for (size_t i = 0; i < teacher_tokens.size(); ++i)
    teacher_tokens[i] = teacher_token_at(teacher_dists[i], opts, rng);

  const auto j = detect_error_token(sample.tokens, teacher_tokens, profile);
  if (!j) return sample;

  GeneratedSample out;
  out.prompt = sample.prompt;
  out.tokens.assign(sample.tokens.begin(), sample.tokens.begin() + *j);
  out.provenance.assign(sample.provenance.begin(), sample.provenance.begin() + *j);
  out.tokens.push_back(teacher_tokens[*j]);
  out.provenance.push_back(Provenance::TeacherCorrected);
  out.corrected_position = *j;

  // Re-generate the suffix from the corrected prefix unless the correction
  // itself ended the sequence.
  if (teacher_tokens[*j] != opts.stop_token) {
    while (static_cast<int>(out.tokens.size()) < opts.max_len) {
      const ProbVector dist = student.next_dist(prompt, out.tokens);
      const int tok = opts.student_decode == lm::DecodeKind::Greedy
                          ? lm::greedy_token(dist)
                          : lm::sample_token(dist, opts.student_temperature, rng);
      out.tokens.push_back(tok);
      out.provenance.push_back(Provenance::Student);
      if (tok == opts.stop_token) break;
    }
  }
  out.validate();
  return out;
}

std::vector<GeneratedSample> sample_batch(const GenerationPolicy& policy,
                                          const Dataset& dataset,
                                          const PolicyModel& student,
                                          const PolicyModel& teacher,
                                          std::size_t batch_size, std::int64_t step,
                                          const GenerationOptions& opts,
                                          ReplayBuffer* buffer, BatchStats* stats) {
  policy.validate();
  if (dataset.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  if (policy.kind == PolicyKind::ScrgOffPolicy && buffer == nullptr)
    throw std::invalid_argument("sample_batch: off-policy mode needs a replay buffer");

  BatchStats local;
  std::vector<GeneratedSample> out;
  out.reserve(batch_size);

  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::uint64_t id = static_cast<std::uint64_t>(step) * batch_size + i;
    // Independent per-sample streams: branch decisions, dataset picks and
    // generation never share draws, so degenerate policies coincide exactly.
    Rng branch_rng(derive_seed(policy.rng_seed, id, 1));
    Rng pick_rng(derive_seed(policy.rng_seed, id, 2));
    const std::uint64_t gen_seed = derive_seed(policy.rng_seed, id, 3);

    const std::size_t entry_index = pick_rng.next_below(dataset.size());
    const DatasetEntry& entry = dataset[entry_index];

    auto fresh_corrected = [&](bool correct) {
      Rng gen_rng(gen_seed);
      GeneratedSample s = fresh_student_sample(student, entry.prompt, opts, gen_rng);
      ++local.fresh;
      if (correct) {
        s = correct_and_regenerate(student, teacher, entry.prompt, s, opts,
                                   derive_seed(gen_seed, 1));
        if (s.corrected_position) ++local.corrected;
      }
      return s;
    };

    switch (policy.kind) {
      case PolicyKind::FixedDataset:
        out.push_back(dataset_sample(entry, static_cast<std::int64_t>(entry_index)));
        break;
      case PolicyKind::Student:
        out.push_back(fresh_corrected(false));
        break;
      case PolicyKind::Teacher: {
        Rng gen_rng(gen_seed);
        GeneratedSample s;
        s.prompt = entry.prompt;
        s.tokens = generate_tokens(teacher, entry.prompt, opts,
                                   opts.teacher_greedy ? lm::DecodeKind::Greedy
                                                       : lm::DecodeKind::Sample,
                                   opts.teacher_temperature, gen_rng);
        s.provenance.assign(s.tokens.size(), Provenance::Dataset);
        out.push_back(std::move(s));
        ++local.fresh;
        break;
      }
      case PolicyKind::Mixed:
        if (policy.mixed_ratio > 0.0 &&
            branch_rng.next_double() < policy.mixed_ratio)
          out.push_back(fresh_corrected(false));
        else
          out.push_back(dataset_sample(entry, static_cast<std::int64_t>(entry_index)));
        break;
      case PolicyKind::ScrgOnPolicy:
        out.push_back(fresh_corrected(true));
        break;
      case PolicyKind::ScrgOffPolicy: {
        const bool generate = buffer->p_gen >= 1.0 ||
                              branch_rng.next_double() < buffer->p_gen;
        if (generate) {
          GeneratedSample s = fresh_corrected(true);
          buffer->insert(s, step);
          out.push_back(std::move(s));
        } else if (buffer->entries.empty()) {
          ++local.buffer_fallbacks;
          GeneratedSample s = fresh_corrected(true);
          buffer->insert(s, step);
          out.push_back(std::move(s));
        } else {
          out.push_back(buffer->draw(pick_rng));
          ++local.from_buffer;
        }
        break;
      }
    }
  }
  if (stats) *stats = local;
  return out;
}

double update_schedule(ReplayBuffer& buffer,
                       std::span<const double> validation_loss_history,
                       double delta, double eps_plateau) {
  if (validation_loss_history.size() < 2) return buffer.p_gen;
  const double prev = validation_loss_history[validation_loss_history.size() - 2];
  const double last = validation_loss_history.back();
  if (last > prev - eps_plateau)
    buffer.p_gen = std::min(1.0, buffer.p_gen + delta);
  return buffer.p_gen;
}

void dump_samples_jsonl(std::span<const GeneratedSample> samples, std::ostream& out) {
  for (const auto& s : samples) {
    json j;
    j["prompt"] = s.prompt;
    j["tokens"] = s.tokens;
    std::vector<std::string> prov;
    prov.reserve(s.provenance.size());
    for (auto p : s.provenance) prov.push_back(provenance_name(p));
    j["provenance"] = prov;
    j["corrected_position"] =
        s.corrected_position ? json(*s.corrected_position) : json(nullptr);
    j["per_token_kld"] = s.per_token_kld ? json(*s.per_token_kld) : json(nullptr);
    out << j.dump() << '\n';
  }
}

}  // namespace mgsr::scrg
