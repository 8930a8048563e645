#include "mgsr/lm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mgsr::lm {

using ad::Tensor;

void ModelConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("ModelConfig: vocab_size must be >= 4");
  if (context_len < 8) throw std::invalid_argument("ModelConfig: context_len must be >= 8");
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1)
    throw std::invalid_argument("ModelConfig: layer/head/width fields must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
}

int greedy_token(const ProbVector& dist) {
  return static_cast<int>(argmax_index(dist));
}

int sample_token(const ProbVector& dist, double temperature, Rng& rng) {
  if (temperature <= 0.0)
    throw std::invalid_argument("sample_token: temperature must be > 0");
  std::vector<double> w(dist.size());
  double z = 0.0;
  for (size_t k = 0; k < dist.size(); ++k) {
    const double p = dist[k] < 1e-12 ? 1e-12 : dist[k];
    w[k] = std::exp(std::log(p) / temperature);
    z += w[k];
  }
  const double u = rng.next_double() * z;
  double acc = 0.0;
  for (size_t k = 0; k < w.size(); ++k) {
    acc += w[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(w.size()) - 1;
}

namespace {

std::vector<double> normal_init(std::int64_t n, double stddev, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = stddev * rng.next_normal();
  return v;
}

}  // namespace

TransformerLM::TransformerLM(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::int64_t M = cfg_.vocab_size, d = cfg_.d_model, ff = cfg_.d_ff;
  auto weight = [&](std::string name, ad::Shape shape) {
    const std::int64_t n = std::accumulate(shape.begin(), shape.end(),
                                           std::int64_t{1}, std::multiplies<>());
    params_.emplace_back(std::move(name), Tensor::leaf(shape, normal_init(n, 0.02, rng)));
  };
  auto zeros = [&](std::string name, ad::Shape shape) {
    const std::int64_t n = std::accumulate(shape.begin(), shape.end(),
                                           std::int64_t{1}, std::multiplies<>());
    params_.emplace_back(std::move(name),
                         Tensor::leaf(shape, std::vector<double>(n, 0.0)));
  };
  auto ones = [&](std::string name, ad::Shape shape) {
    const std::int64_t n = std::accumulate(shape.begin(), shape.end(),
                                           std::int64_t{1}, std::multiplies<>());
    params_.emplace_back(std::move(name),
                         Tensor::leaf(shape, std::vector<double>(n, 1.0)));
  };

  weight("tok_emb", {M, d});
  weight("pos_emb", {cfg_.context_len, d});
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    ones(p + "ln1.g", {d});
    zeros(p + "ln1.b", {d});
    weight(p + "attn.wq", {d, d});
    zeros(p + "attn.bq", {d});
    weight(p + "attn.wk", {d, d});
    zeros(p + "attn.bk", {d});
    weight(p + "attn.wv", {d, d});
    zeros(p + "attn.bv", {d});
    weight(p + "attn.wo", {d, d});
    zeros(p + "attn.bo", {d});
    ones(p + "ln2.g", {d});
    zeros(p + "ln2.b", {d});
    weight(p + "mlp.w1", {d, ff});
    zeros(p + "mlp.b1", {ff});
    weight(p + "mlp.w2", {ff, d});
    zeros(p + "mlp.b2", {d});
  }
  ones("ln_f.g", {d});
  zeros("ln_f.b", {d});
  weight("head.w", {d, M});
  zeros("head.b", {M});
}

ad::Tensor& TransformerLM::param(const std::string& name) {
  for (auto& [n, t] : params_)
    if (n == name) return t;
  throw std::out_of_range("TransformerLM: no parameter named " + name);
}

std::int64_t TransformerLM::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void TransformerLM::set_trainable(bool trainable) {
  for (auto& [name, t] : params_) t.set_requires_grad(trainable);
}

void TransformerLM::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void TransformerLM::check_tokens(std::span<const int> prompt,
                                 std::span<const int> response) const {
  auto check = [&](std::span<const int> ids) {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw std::out_of_range("TransformerLM: token id " + std::to_string(id) +
                                " out of vocab range [0," +
                                std::to_string(cfg_.vocab_size) + ")");
  };
  check(prompt);
  check(response);
  if (prompt.empty())
    throw std::invalid_argument("TransformerLM: prompt must be non-empty");
  if (prompt.size() + response.size() > static_cast<size_t>(cfg_.context_len))
    throw std::invalid_argument("TransformerLM: sequence length " +
                                std::to_string(prompt.size() + response.size()) +
                                " exceeds context_len " +
                                std::to_string(cfg_.context_len));
}

Tensor TransformerLM::forward_all(std::span<const int> tokens) const {
  const std::int64_t n = static_cast<std::int64_t>(tokens.size());
  const std::int64_t d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const std::int64_t dh = d / heads;
  auto& self = const_cast<TransformerLM&>(*this);

  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  Tensor x = ad::add(ad::gather_rows(self.param("tok_emb"), tokens),
                     ad::gather_rows(self.param("pos_emb"), pos));

  // Causal mask: additive, -1e30 above the diagonal.
  std::vector<double> maskv(static_cast<size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) maskv[i * n + j] = -1e30;
  const Tensor mask = Tensor::constant({n, n}, std::move(maskv));
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor h = ad::layer_norm(x, self.param(p + "ln1.g"), self.param(p + "ln1.b"));
    Tensor q = ad::add(ad::matmul(h, self.param(p + "attn.wq")), self.param(p + "attn.bq"));
    Tensor k = ad::add(ad::matmul(h, self.param(p + "attn.wk")), self.param(p + "attn.bk"));
    Tensor v = ad::add(ad::matmul(h, self.param(p + "attn.wv")), self.param(p + "attn.bv"));
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      Tensor qh = ad::slice_cols(q, hd * dh, dh);
      Tensor kh = ad::slice_cols(k, hd * dh, dh);
      Tensor vh = ad::slice_cols(v, hd * dh, dh);
      Tensor scores = ad::add(
          ad::scale(ad::matmul(qh, ad::transpose(kh)), att_scale), mask);
      Tensor att = ad::softmax(scores);
      head_outs.push_back(ad::matmul(att, vh));
    }
    Tensor merged = heads == 1 ? head_outs[0] : ad::concat(head_outs, 1);
    Tensor attn_out = ad::add(ad::matmul(merged, self.param(p + "attn.wo")),
                              self.param(p + "attn.bo"));
    x = ad::add(x, attn_out);

    Tensor h2 = ad::layer_norm(x, self.param(p + "ln2.g"), self.param(p + "ln2.b"));
    Tensor mlp = ad::add(
        ad::matmul(ad::gelu(ad::add(ad::matmul(h2, self.param(p + "mlp.w1")),
                                    self.param(p + "mlp.b1"))),
                   self.param(p + "mlp.w2")),
        self.param(p + "mlp.b2"));
    x = ad::add(x, mlp);
  }

  Tensor out = ad::layer_norm(x, self.param("ln_f.g"), self.param("ln_f.b"));
  Tensor logits = ad::add(ad::matmul(out, self.param("head.w")), self.param("head.b"));
  return ad::softmax(logits);
}

Tensor TransformerLM::forward_response(const TokenSequence& seq) const {
  check_tokens(seq.prompt, seq.response);
  if (seq.response.empty())
    throw std::invalid_argument("forward_response: empty response");
  std::vector<int> tokens(seq.prompt);
  tokens.insert(tokens.end(), seq.response.begin(), seq.response.end());
  Tensor all = forward_all(tokens);
  return ad::slice_rows(all, static_cast<std::int64_t>(seq.prompt.size()) - 1,
                        static_cast<std::int64_t>(seq.response.size()));
}

std::vector<ProbVector> TransformerLM::forward(const TokenSequence& seq) const {
  ad::NoGradGuard ng;
  Tensor rows = forward_response(seq);
  const std::int64_t m = rows.shape()[0], M = rows.shape()[1];
  std::vector<ProbVector> out(m);
  for (std::int64_t i = 0; i < m; ++i)
    out[i].assign(rows.values().begin() + i * M, rows.values().begin() + (i + 1) * M);
  return out;
}

ProbVector TransformerLM::next_dist(std::span<const int> prompt,
                                    std::span<const int> prefix) const {
  check_tokens(prompt, prefix);
  ad::NoGradGuard ng;
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), prefix.begin(), prefix.end());
  Tensor all = forward_all(tokens);
  const std::int64_t n = all.shape()[0], M = all.shape()[1];
  return ProbVector(all.values().begin() + (n - 1) * M,
                    all.values().begin() + n * M);
}

int TransformerLM::next_token(std::span<const int> prompt,
                              std::span<const int> prefix,
                              const DecodeMode& mode) const {
  const ProbVector dist = next_dist(prompt, prefix);
  if (mode.kind == DecodeKind::Greedy) return greedy_token(dist);
  Rng rng(mode.rng_seed);
  return sample_token(dist, mode.temperature, rng);
}

TokenSequence TransformerLM::generate(std::span<const int> prompt, int max_len,
                                      const DecodeMode& mode, int stop_token) const {
  if (mode.kind == DecodeKind::Sample && mode.temperature <= 0.0)
    throw std::invalid_argument("generate: temperature must be > 0");
  TokenSequence seq;
  seq.prompt.assign(prompt.begin(), prompt.end());
  Rng rng(mode.rng_seed);
  const int room = cfg_.context_len - static_cast<int>(prompt.size());
  const int limit = std::min(max_len, room);
  for (int i = 0; i < limit; ++i) {
    const ProbVector dist = next_dist(seq.prompt, seq.response);
    const int tok = mode.kind == DecodeKind::Greedy
                        ? greedy_token(dist)
                        : sample_token(dist, mode.temperature, rng);
    seq.response.push_back(tok);
    if (tok == stop_token) break;
  }
  return seq;
}

}  // namespace mgsr::lm
