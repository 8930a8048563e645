#include "mgsr/divergences.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "mgsr/rng.hpp"

namespace mgsr::div {

using ad::Tensor;

namespace {

constexpr double kClamp = 1e-12;

double clamped_log(double x) { return std::log(x < kClamp ? kClamp : x); }

void check_pair(const ProbVector& p, const ProbVector& q, const char* name) {
  require_simplex(p, name);
  require_simplex(q, name);
  if (p.size() != q.size())
    throw std::invalid_argument(std::string(name) + ": length mismatch " +
                                std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
}

double kl_raw(const ProbVector& p, const ProbVector& q) {
  double s = 0.0;
  for (size_t k = 0; k < p.size(); ++k)
    s += p[k] * (clamped_log(p[k]) - clamped_log(q[k]));
  return s;
}

void check_alpha(double a, const char* name) {
  if (!(a > 0.0 && a < 1.0))
    throw std::invalid_argument(std::string(name) + ": parameter must be in (0,1)");
}

}  // namespace

double forward_kl(const ProbVector& p, const ProbVector& q) {
  check_pair(p, q, "forward_kl");
  return kl_raw(p, q);
}

double reverse_kl(const ProbVector& p, const ProbVector& q) {
  check_pair(p, q, "reverse_kl");
  return kl_raw(q, p);
}

double symmetric_kl(const ProbVector& p, const ProbVector& q) {
  check_pair(p, q, "symmetric_kl");
  return 0.5 * (kl_raw(p, q) + kl_raw(q, p));
}

double jsd(const ProbVector& p, const ProbVector& q, double beta) {
  check_pair(p, q, "jsd");
  check_alpha(beta, "jsd");
  ProbVector m(p.size());
  for (size_t k = 0; k < p.size(); ++k) m[k] = beta * p[k] + (1.0 - beta) * q[k];
  return beta * kl_raw(p, m) + (1.0 - beta) * kl_raw(q, m);
}

double tvd(const ProbVector& p, const ProbVector& q) {
  check_pair(p, q, "tvd");
  double s = 0.0;
  for (size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return 0.5 * s;
}

double skew_forward_kl(const ProbVector& p, const ProbVector& q, double alpha) {
  check_pair(p, q, "skew_forward_kl");
  check_alpha(alpha, "skew_forward_kl");
  ProbVector m(p.size());
  for (size_t k = 0; k < p.size(); ++k) m[k] = alpha * p[k] + (1.0 - alpha) * q[k];
  return kl_raw(p, m);
}

double skew_reverse_kl(const ProbVector& p, const ProbVector& q, double alpha) {
  check_pair(p, q, "skew_reverse_kl");
  check_alpha(alpha, "skew_reverse_kl");
  ProbVector m(p.size());
  for (size_t k = 0; k < p.size(); ++k) m[k] = alpha * q[k] + (1.0 - alpha) * p[k];
  return kl_raw(q, m);
}

namespace {

Tensor kl_t(const Tensor& p, const Tensor& q) {
  return ad::sum(ad::mul(p, ad::sub(ad::log(p), ad::log(q))));
}

Tensor mix(const Tensor& a, const Tensor& b, double wa) {
  return ad::add(ad::scale(a, wa), ad::scale(b, 1.0 - wa));
}

}  // namespace

Tensor forward_kl(const Tensor& p, const Tensor& q) { return kl_t(p, q); }
Tensor reverse_kl(const Tensor& p, const Tensor& q) { return kl_t(q, p); }

Tensor symmetric_kl(const Tensor& p, const Tensor& q) {
  return ad::scale(ad::add(kl_t(p, q), kl_t(q, p)), 0.5);
}

Tensor jsd(const Tensor& p, const Tensor& q, double beta) {
  check_alpha(beta, "jsd");
  Tensor m = mix(p, q, beta);
  return ad::add(ad::scale(kl_t(p, m), beta), ad::scale(kl_t(q, m), 1.0 - beta));
}

Tensor tvd(const Tensor& p, const Tensor& q) {
  return ad::scale(ad::sum(ad::abs(ad::sub(p, q))), 0.5);
}

Tensor skew_forward_kl(const Tensor& p, const Tensor& q, double alpha) {
  check_alpha(alpha, "skew_forward_kl");
  return kl_t(p, mix(p, q, alpha));
}

Tensor skew_reverse_kl(const Tensor& p, const Tensor& q, double alpha) {
  check_alpha(alpha, "skew_reverse_kl");
  return kl_t(q, mix(q, p, alpha));
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::FKL: return "fkl";
    case Objective::RKL: return "rkl";
    case Objective::SKL: return "skl";
    case Objective::JSD: return "jsd";
    case Objective::TVD: return "tvd";
    case Objective::SFKL: return "sfkl";
    case Objective::SRKL: return "srkl";
    case Objective::DACKL: return "dackl";
  }
  return "fkl";
}

Objective objective_from_name(const std::string& name) {
  if (name == "fkl") return Objective::FKL;
  if (name == "rkl") return Objective::RKL;
  if (name == "skl") return Objective::SKL;
  if (name == "jsd") return Objective::JSD;
  if (name == "tvd") return Objective::TVD;
  if (name == "sfkl") return Objective::SFKL;
  if (name == "srkl") return Objective::SRKL;
  if (name == "dackl") return Objective::DACKL;
  throw std::invalid_argument("unknown objective: " + name);
}

Tensor baseline_divergence(Objective o, const Tensor& teacher, const Tensor& student,
                           double alpha, double beta) {
  switch (o) {
    case Objective::FKL: return forward_kl(teacher, student);
    case Objective::RKL: return reverse_kl(teacher, student);
    case Objective::SKL: return symmetric_kl(teacher, student);
    case Objective::JSD: return jsd(teacher, student, beta);
    case Objective::TVD: return tvd(teacher, student);
    case Objective::SFKL: return skew_forward_kl(teacher, student, alpha);
    case Objective::SRKL: return skew_reverse_kl(teacher, student, alpha);
    case Objective::DACKL:
      throw std::invalid_argument("baseline_divergence: dackl needs the sub-network path");
  }
  throw std::invalid_argument("baseline_divergence: bad objective");
}

std::string dac_components_name(DacComponents c) {
  switch (c) {
    case DacComponents::TargetOnly: return "target";
    case DacComponents::HighDensityOnly: return "density";
    case DacComponents::Both: return "both";
  }
  return "both";
}

DacComponents dac_components_from_name(const std::string& name) {
  if (name == "target") return DacComponents::TargetOnly;
  if (name == "density") return DacComponents::HighDensityOnly;
  if (name == "both") return DacComponents::Both;
  throw std::invalid_argument("unknown DAC component set: " + name);
}

// ---------------------------------------------------------------------------
// Sub-network
// ---------------------------------------------------------------------------

SubNetwork::SubNetwork(int vocab_size, std::uint64_t seed, int hidden)
    : vocab_size_(vocab_size) {
  if (vocab_size < 1 || hidden < 1)
    throw std::invalid_argument("SubNetwork: vocab_size and hidden must be positive");
  Rng rng(seed);
  auto weight = [&](std::string name, std::int64_t r, std::int64_t c) {
    std::vector<double> v(static_cast<size_t>(r * c));
    for (auto& x : v) x = 0.02 * rng.next_normal();
    params_.emplace_back(std::move(name), Tensor::leaf({r, c}, std::move(v)));
  };
  auto bias = [&](std::string name, std::int64_t n) {
    params_.emplace_back(std::move(name),
                         Tensor::leaf({n}, std::vector<double>(n, 0.0)));
  };
  weight("subnet.w1", 3ll * vocab_size, hidden);
  bias("subnet.b1", hidden);
  weight("subnet.w2", hidden, hidden);
  bias("subnet.b2", hidden);
  weight("subnet.w3", hidden, 2);
  // Start from a permissive clip (u near 1, l near 0): a zero bias would put
  // both thresholds at 0.5, excluding every class and saturating the sigmoid
  // gradients before training can move them.
  params_.emplace_back("subnet.b3", Tensor::leaf({2}, {4.0, -4.0}));
}

void SubNetwork::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void SubNetwork::set_trainable(bool trainable) {
  for (auto& [name, t] : params_) t.set_requires_grad(trainable);
}

std::pair<Tensor, Tensor> SubNetwork::predict(const Tensor& teacher,
                                              const Tensor& student) const {
  if (teacher.size() != vocab_size_ || student.size() != vocab_size_)
    throw std::invalid_argument(
        "SubNetwork: input width mismatch, expected vocab " +
        std::to_string(vocab_size_) + ", got " + std::to_string(teacher.size()) +
        " / " + std::to_string(student.size()));
  auto& self = const_cast<SubNetwork&>(*this);
  auto p = [&](const std::string& n) -> Tensor& {
    for (auto& [name, t] : self.params_)
      if (name == n) return t;
    throw std::out_of_range("SubNetwork: no parameter " + n);
  };
  std::vector<Tensor> parts{teacher, ad::sort_descending(teacher), student};
  Tensor x = ad::reshape(ad::concat(parts, 0), {1, 3ll * vocab_size_});
  Tensor h1 = ad::gelu(ad::add(ad::matmul(x, p("subnet.w1")), p("subnet.b1")));
  Tensor h2 = ad::gelu(ad::add(ad::matmul(h1, p("subnet.w2")), p("subnet.b2")));
  Tensor out = ad::sigmoid(ad::add(ad::matmul(h2, p("subnet.w3")), p("subnet.b3")));
  Tensor u = ad::reshape(ad::slice_cols(out, 0, 1), {1});
  Tensor l = ad::minimum(ad::reshape(ad::slice_cols(out, 1, 1), {1}), u);
  return {u, l};
}

QuantilePair predict_quantiles(const SubNetwork& subnet, const ProbVector& teacher,
                               const ProbVector& student) {
  ad::NoGradGuard ng;
  auto [u, l] = subnet.predict(prob_tensor(teacher), prob_tensor(student));
  return {u.item(), l.item()};
}

// ---------------------------------------------------------------------------
// Clipping
// ---------------------------------------------------------------------------

namespace {

std::vector<int> hard_indices(const ProbVector& teacher, double u, double l,
                              DacComponents components) {
  const int arg = static_cast<int>(argmax_index(teacher));
  std::vector<int> idx;
  if (components != DacComponents::TargetOnly) {
    for (size_t k = 0; k < teacher.size(); ++k)
      if (teacher[k] >= l && teacher[k] <= u) idx.push_back(static_cast<int>(k));
  }
  if (components != DacComponents::HighDensityOnly &&
      !std::binary_search(idx.begin(), idx.end(), arg)) {
    idx.insert(std::lower_bound(idx.begin(), idx.end(), arg), arg);
  }
  if (idx.empty()) idx.push_back(arg);  // keep the loss well-defined
  return idx;
}

}  // namespace

ClipSelection dac_clip(const ProbVector& teacher, const QuantilePair& q,
                       const ClipMode& mode, DacComponents components) {
  return dac_clip(teacher, Tensor::scalar(q.u), Tensor::scalar(q.l), mode,
                  components);
}

ClipSelection dac_clip(const ProbVector& teacher, const Tensor& u, const Tensor& l,
                       const ClipMode& mode, DacComponents components) {
  require_simplex(teacher, "dac_clip", 1e-6);
  ClipSelection sel;
  sel.kind = mode.kind;
  if (mode.kind == ClipModeKind::Hard) {
    sel.indices = hard_indices(teacher, u.item(), l.item(), components);
    return sel;
  }
  const int M = static_cast<int>(teacher.size());
  const int arg = static_cast<int>(argmax_index(teacher));
  const Tensor t = prob_tensor(teacher);
  const double inv_tau = 1.0 / mode.tau;
  Tensor w = ad::mul(ad::sigmoid(ad::scale(ad::sub(t, l), inv_tau)),
                     ad::sigmoid(ad::scale(ad::sub(u, t), inv_tau)));
  std::vector<double> onehot(M, 0.0);
  onehot[arg] = 1.0;
  const Tensor m1 = Tensor::constant({M}, onehot);
  std::vector<double> inv(M, 1.0);
  inv[arg] = 0.0;
  const Tensor m0 = Tensor::constant({M}, inv);
  switch (components) {
    case DacComponents::Both:
      sel.weights = ad::add(ad::mul(w, m0), m1);
      break;
    case DacComponents::HighDensityOnly:
      sel.weights = w;
      break;
    case DacComponents::TargetOnly:
      sel.weights = m1;
      break;
  }
  return sel;
}

Tensor prob_tensor(const ProbVector& p) {
  return Tensor::constant({static_cast<std::int64_t>(p.size())}, p);
}

Tensor renormalize(const Tensor& v) { return ad::div(v, ad::sum(v)); }

Tensor dac_kl_loss(const ProbVector& teacher, const Tensor& student,
                   const SubNetwork& subnet, const ClipMode& mode,
                   DacComponents components) {
  require_simplex(teacher, "dac_kl_loss", 1e-6);
  if (static_cast<int>(teacher.size()) != subnet.vocab_size() ||
      student.size() != subnet.vocab_size())
    throw std::invalid_argument("dac_kl_loss: width mismatch with sub-network");
  const Tensor t = prob_tensor(teacher);
  auto [u, l] = subnet.predict(t, student);
  ClipSelection sel = dac_clip(teacher, u, l, mode, components);
  Tensor ts, ss;
  if (sel.kind == ClipModeKind::Hard) {
    ts = ad::gather(t, sel.indices);
    ss = ad::gather(student, sel.indices);
  } else {
    ts = ad::mul(t, sel.weights);
    ss = ad::mul(student, sel.weights);
  }
  return forward_kl(renormalize(ts), renormalize(ss));
}

double dac_kl_loss(const ProbVector& teacher, const ProbVector& student,
                   const SubNetwork& subnet, const ClipMode& mode,
                   DacComponents components) {
  ad::NoGradGuard ng;
  return dac_kl_loss(teacher, prob_tensor(student), subnet, mode, components).item();
}

Tensor dac_kl_sequence(const std::vector<ProbVector>& teacher_dists,
                       const Tensor& student_dists, const SubNetwork& subnet,
                       const ClipMode& mode, DacComponents components) {
  if (teacher_dists.empty()) {
    std::cerr << "warning: dac_kl_sequence over an empty sequence\n";
    return Tensor::scalar(0.0);
  }
  if (student_dists.shape().size() != 2 ||
      student_dists.shape()[0] != static_cast<std::int64_t>(teacher_dists.size()))
    throw std::invalid_argument("dac_kl_sequence: teacher/student length mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (size_t i = 0; i < teacher_dists.size(); ++i) {
    Tensor si = ad::row(student_dists, static_cast<std::int64_t>(i));
    total = ad::add(total, dac_kl_loss(teacher_dists[i], si, subnet, mode, components));
  }
  return ad::scale(total, 1.0 / static_cast<double>(teacher_dists.size()));
}

// ---------------------------------------------------------------------------
// Span loss, SFT, overall
// ---------------------------------------------------------------------------

Tensor span_correlation_loss(const Tensor& student_dists, const Tensor& teacher_dists,
                             const std::vector<spans::Span>& span_list) {
  if (student_dists.shape() != teacher_dists.shape())
    throw std::invalid_argument("span_correlation_loss: shape mismatch " +
                                ad::shape_str(student_dists.shape()) + " vs " +
                                ad::shape_str(teacher_dists.shape()));
  const std::int64_t n = student_dists.shape()[0];
  spans::validate_spans(span_list, static_cast<int>(n));
  if (span_list.empty()) return Tensor::scalar(0.0);

  Tensor total = Tensor::scalar(0.0);
  for (const auto& sp : span_list) {
    if (sp.length < 2) continue;  // no adjacent pairs
    Tensor span_sum = Tensor::scalar(0.0);
    for (int j = sp.start; j < sp.start + sp.length - 1; ++j) {
      Tensor cs = ad::mul(ad::row(student_dists, j), ad::row(student_dists, j + 1));
      Tensor ct = ad::mul(ad::row(teacher_dists, j), ad::row(teacher_dists, j + 1));
      Tensor d = ad::sub(cs, ct);
      span_sum = ad::add(span_sum, ad::sqrt(ad::sum(ad::mul(d, d))));
    }
    total = ad::add(total, ad::scale(span_sum, 1.0 / sp.length));
  }
  return ad::scale(total, 1.0 / static_cast<double>(span_list.size()));
}

double span_correlation_loss(const std::vector<ProbVector>& student_dists,
                             const std::vector<ProbVector>& teacher_dists,
                             const std::vector<spans::Span>& span_list) {
  if (student_dists.size() != teacher_dists.size())
    throw std::invalid_argument("span_correlation_loss: length mismatch");
  if (student_dists.empty()) return 0.0;
  ad::NoGradGuard ng;
  const auto M = static_cast<std::int64_t>(student_dists[0].size());
  auto pack = [&](const std::vector<ProbVector>& rows) {
    std::vector<double> flat;
    flat.reserve(rows.size() * M);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::constant({static_cast<std::int64_t>(rows.size()), M},
                            std::move(flat));
  };
  return span_correlation_loss(pack(student_dists), pack(teacher_dists), span_list)
      .item();
}

Tensor sft_loss(const Tensor& model_dists, const std::vector<int>& targets) {
  if (model_dists.shape().size() != 2 ||
      model_dists.shape()[0] != static_cast<std::int64_t>(targets.size()))
    throw std::invalid_argument("sft_loss: need one target per distribution row");
  return ad::scale(ad::sum(ad::log(ad::pick(model_dists, targets))),
                   -1.0 / static_cast<double>(targets.size()));
}

void LossWeights::validate() const {
  for (double w : {w_sft, w_dac, w_span})
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
}

Tensor overall_loss(const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  auto check = [](const Tensor& t, const char* name) {
    if (t.defined() && std::isnan(t.item()))
      throw std::runtime_error(std::string("overall_loss: NaN in ") + name + " term");
  };
  check(parts.sft, "sft");
  check(parts.dac, "dac");
  check(parts.span, "span");
  Tensor total = Tensor::scalar(0.0);
  if (parts.sft.defined()) total = ad::add(total, ad::scale(parts.sft, weights.w_sft));
  if (parts.dac.defined()) total = ad::add(total, ad::scale(parts.dac, weights.w_dac));
  if (parts.span.defined())
    total = ad::add(total, ad::scale(parts.span, weights.w_span));
  return total;
}

}  // namespace mgsr::div
