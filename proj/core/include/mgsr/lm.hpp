#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgsr/prob.hpp"
#include "mgsr/rng.hpp"
#include "mgsr/tensor.hpp"

namespace mgsr::lm {

struct ModelConfig {
  int vocab_size = 0;
  int context_len = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_ff = 0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TokenSequence {
  std::vector<int> prompt;
  std::vector<int> response;

  std::size_t total_length() const { return prompt.size() + response.size(); }
};

enum class DecodeKind { Greedy, Sample };

struct DecodeMode {
  DecodeKind kind = DecodeKind::Greedy;
  double temperature = 1.0;
  std::uint64_t rng_seed = 0;
};

// Greedy argmax with ties broken toward the smallest index.
int greedy_token(const ProbVector& dist);
// Temperature-scaled categorical draw. temperature must be > 0.
int sample_token(const ProbVector& dist, double temperature, Rng& rng);

/// Small pre-norm decoder-only transformer with learned positional
/// embeddings, usable as teacher or student.
class TransformerLM {
 public:
  explicit TransformerLM(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, ad::Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& parameters() const {
    return params_;
  }
  ad::Tensor& param(const std::string& name);
  std::int64_t parameter_count() const;
  void set_trainable(bool trainable);
  void zero_grads();

  // Distributions over the next token at every response position, as a
  // [response_len, vocab] tensor on the differentiation graph. Row i is
  // q(. | prompt, response[<i]).
  ad::Tensor forward_response(const TokenSequence& seq) const;
  // Value-only variant.
  std::vector<ProbVector> forward(const TokenSequence& seq) const;

  // Distribution of the token following prompt + prefix.
  ProbVector next_dist(std::span<const int> prompt,
                       std::span<const int> prefix) const;

  int next_token(std::span<const int> prompt, std::span<const int> prefix,
                 const DecodeMode& mode) const;

  // Autoregressive decoding until stop_token or max_len tokens.
  TokenSequence generate(std::span<const int> prompt, int max_len,
                         const DecodeMode& mode, int stop_token) const;

 private:
  ad::Tensor forward_all(std::span<const int> tokens) const;  // [n, vocab]
  void check_tokens(std::span<const int> prompt, std::span<const int> response) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, ad::Tensor>> params_;
};

}  // namespace mgsr::lm
