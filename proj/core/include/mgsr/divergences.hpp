#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgsr/prob.hpp"
#include "mgsr/spans.hpp"
#include "mgsr/tensor.hpp"

namespace mgsr::div {

// ---------------------------------------------------------------------------
// Baseline divergences. The value-level overloads validate simplex inputs;
// the tensor-level overloads are differentiable w.r.t. their arguments and
// clamp at 1e-12 inside logarithms.
// ---------------------------------------------------------------------------

double forward_kl(const ProbVector& p, const ProbVector& q);
double reverse_kl(const ProbVector& p, const ProbVector& q);
double symmetric_kl(const ProbVector& p, const ProbVector& q);
double jsd(const ProbVector& p, const ProbVector& q, double beta = 0.5);
double tvd(const ProbVector& p, const ProbVector& q);
double skew_forward_kl(const ProbVector& p, const ProbVector& q, double alpha = 0.1);
double skew_reverse_kl(const ProbVector& p, const ProbVector& q, double alpha = 0.1);

ad::Tensor forward_kl(const ad::Tensor& p, const ad::Tensor& q);
ad::Tensor reverse_kl(const ad::Tensor& p, const ad::Tensor& q);
ad::Tensor symmetric_kl(const ad::Tensor& p, const ad::Tensor& q);
ad::Tensor jsd(const ad::Tensor& p, const ad::Tensor& q, double beta = 0.5);
ad::Tensor tvd(const ad::Tensor& p, const ad::Tensor& q);
ad::Tensor skew_forward_kl(const ad::Tensor& p, const ad::Tensor& q, double alpha = 0.1);
ad::Tensor skew_reverse_kl(const ad::Tensor& p, const ad::Tensor& q, double alpha = 0.1);

enum class Objective { FKL, RKL, SKL, JSD, TVD, SFKL, SRKL, DACKL };
std::string objective_name(Objective o);
Objective objective_from_name(const std::string& name);
// Teacher-vs-student baseline divergence by enum (teacher as first operand).
ad::Tensor baseline_divergence(Objective o, const ad::Tensor& teacher,
                               const ad::Tensor& student, double alpha = 0.1,
                               double beta = 0.5);

// ---------------------------------------------------------------------------
// DAC-KL: adaptive clipping of the teacher distribution by learned
// probability thresholds.
// ---------------------------------------------------------------------------

/// Predicted clipping thresholds, 0 <= l <= u <= 1.
struct QuantilePair {
  double u = 1.0;
  double l = 0.0;
};

enum class ClipModeKind { Hard, Soft };

struct ClipMode {
  ClipModeKind kind = ClipModeKind::Soft;
  double tau = 0.01;  // soft sigmoid temperature

  static ClipMode hard() { return {ClipModeKind::Hard, 0.0}; }
  static ClipMode soft(double tau = 0.01) { return {ClipModeKind::Soft, tau}; }
};

// Which parts of the teacher distribution the clipped loss keeps.
enum class DacComponents { TargetOnly, HighDensityOnly, Both };
std::string dac_components_name(DacComponents c);
DacComponents dac_components_from_name(const std::string& name);

struct ClipSelection {
  ClipModeKind kind = ClipModeKind::Hard;
  std::vector<int> indices;  // hard mode: sorted selected class indices
  ad::Tensor weights;        // soft mode: length-M weights in [0,1]
};

/// Two-hidden-layer MLP predicting the (u, l) clipping thresholds from
/// [teacher | sort_desc(teacher) | student], squashed by a sigmoid.
class SubNetwork {
 public:
  SubNetwork(int vocab_size, std::uint64_t seed, int hidden = 64);

  int vocab_size() const { return vocab_size_; }
  std::vector<std::pair<std::string, ad::Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& parameters() const {
    return params_;
  }
  void zero_grads();
  void set_trainable(bool trainable);

  // Differentiable (u, l) tensors, each of shape {1}, with l clamped to [0,u].
  std::pair<ad::Tensor, ad::Tensor> predict(const ad::Tensor& teacher,
                                            const ad::Tensor& student) const;

 private:
  int vocab_size_;
  std::vector<std::pair<std::string, ad::Tensor>> params_;
};

QuantilePair predict_quantiles(const SubNetwork& subnet, const ProbVector& teacher,
                               const ProbVector& student);

// Hard selection {k : l <= v_k <= u} plus the teacher argmax; soft selection
// as a differentiable sigmoid mask with the argmax weight forced to 1.
ClipSelection dac_clip(const ProbVector& teacher, const QuantilePair& q,
                       const ClipMode& mode,
                       DacComponents components = DacComponents::Both);
ClipSelection dac_clip(const ProbVector& teacher, const ad::Tensor& u,
                       const ad::Tensor& l, const ClipMode& mode,
                       DacComponents components = DacComponents::Both);

// Clipped-and-renormalized forward KL between teacher and student at one
// position. teacher is treated as fixed; gradients reach the student always
// and the sub-network thresholds in soft mode.
ad::Tensor dac_kl_loss(const ProbVector& teacher, const ad::Tensor& student,
                       const SubNetwork& subnet, const ClipMode& mode,
                       DacComponents components = DacComponents::Both);
double dac_kl_loss(const ProbVector& teacher, const ProbVector& student,
                   const SubNetwork& subnet, const ClipMode& mode,
                   DacComponents components = DacComponents::Both);

// Mean of per-position dac_kl_loss over a sequence; 0 with a warning on an
// empty sequence. student_dists has one [M] row per position.
ad::Tensor dac_kl_sequence(const std::vector<ProbVector>& teacher_dists,
                           const ad::Tensor& student_dists,
                           const SubNetwork& subnet, const ClipMode& mode,
                           DacComponents components = DacComponents::Both);

// ---------------------------------------------------------------------------
// Span-level correlation consistency and the supervised / combined losses.
// ---------------------------------------------------------------------------

// Mean over spans of the mean adjacent-pair L2 distance between
// student and teacher Hadamard-product correlations.
ad::Tensor span_correlation_loss(const ad::Tensor& student_dists,
                                 const ad::Tensor& teacher_dists,
                                 const std::vector<spans::Span>& span_list);
double span_correlation_loss(const std::vector<ProbVector>& student_dists,
                             const std::vector<ProbVector>& teacher_dists,
                             const std::vector<spans::Span>& span_list);

// Mean negative log-likelihood of the targets under the model rows.
ad::Tensor sft_loss(const ad::Tensor& model_dists, const std::vector<int>& targets);

struct LossWeights {
  double w_sft = 1.0;
  double w_dac = 1.0;
  double w_span = 1.0;

  void validate() const;
};

struct LossParts {
  ad::Tensor sft;
  ad::Tensor dac;
  ad::Tensor span;
};

// w_sft*sft + w_dac*dac + w_span*span; a NaN part is an error naming the term.
ad::Tensor overall_loss(const LossParts& parts, const LossWeights& weights);

// Helpers shared with other modules.
ad::Tensor prob_tensor(const ProbVector& p);  // constant [M] tensor
ad::Tensor renormalize(const ad::Tensor& v);  // v / sum(v)

}  // namespace mgsr::div
