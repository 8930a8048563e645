#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mgsr/divergences.hpp"
#include "mgsr/lm.hpp"
#include "mgsr/scrg.hpp"
#include "mgsr/spans.hpp"

namespace mgsr::train {

enum class SelectBy { ValidationLoss, ValidationRouge };
std::string select_by_name(SelectBy s);
SelectBy select_by_from_name(const std::string& s);

struct TrainConfig {
  double learning_rate = 5e-4;
  int epochs = 20;
  int batch_size = 16;
  div::LossWeights weights;
  scrg::GenerationPolicy policy;
  div::Objective objective = div::Objective::DACKL;
  div::ClipMode clip_mode = div::ClipMode::soft();
  div::DacComponents dac_components = div::DacComponents::Both;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  double validation_fraction = 0.05;  // used when no validation split is given
  std::uint64_t seed = 0;
  scrg::GenerationOptions gen;
  std::size_t buffer_capacity = 1000;
  double p_gen_init = 0.5;
  double p_gen_delta = 0.1;
  double plateau_eps = 1e-3;
  double skew_alpha = 0.1;
  double jsd_beta = 0.5;
  SelectBy select_by = SelectBy::ValidationLoss;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricsRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss_sft = 0.0;
  double loss_dac = 0.0;
  double loss_span = 0.0;
  double loss_total = 0.0;
  double validation_loss = 0.0;
  double p_gen = 0.0;
  double corrected_fraction = 0.0;
  double wallclock_s = 0.0;
};

// One JSON object per line, keys sorted.
void write_metrics(const MetricsRecord& r, std::ostream& out);

using ParamList = std::vector<std::pair<std::string, ad::Tensor>>;

/// Adam with bias correction; state is keyed by parameter order.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<ParamList*>& param_groups);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<ParamList*>& param_groups,
                        double max_norm);

struct TrainResult {
  std::string checkpoint;  // serialized best checkpoint bytes
  std::vector<MetricsRecord> metrics;
  double best_validation = 0.0;
  bool nan_abort = false;  // training stopped on a non-finite loss
};

// Supervised fine-tuning with the SFT loss only; the degenerate case of the
// distillation loop with weights (1,0,0) and the fixed-dataset policy.
TrainResult train_teacher(const TrainConfig& config, lm::TransformerLM& model,
                          const scrg::Dataset& train_set,
                          const scrg::Dataset& val_set,
                          std::ostream* metrics_out = nullptr);

// Full distillation step loop. The teacher is never modified; the sub-network
// updates jointly with the student when the DAC objective is active.
// gold_spans, when given, maps training-set indices to annotations; generated
// samples fall back to the heuristic chunker over `lexicon`.
TrainResult distill(const TrainConfig& config, lm::TransformerLM& student,
                    const lm::TransformerLM& teacher, div::SubNetwork& subnet,
                    const scrg::Dataset& train_set, const scrg::Dataset& val_set,
                    const spans::Lexicon& lexicon,
                    const std::map<std::int64_t, spans::SpanAnnotation>* gold_spans,
                    std::ostream* metrics_out = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: magic "MGSR", u32 version, length-prefixed JSON config block,
// then named little-endian f64 arrays (u32 name length, name, u32 rank, i64
// dims, data).
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const lm::TransformerLM& model, const div::SubNetwork* subnet,
                     std::ostream& out);
void save_checkpoint(const lm::TransformerLM& model, const div::SubNetwork* subnet,
                     const std::string& path);
std::string checkpoint_bytes(const lm::TransformerLM& model,
                             const div::SubNetwork* subnet);

struct Checkpoint {
  lm::ModelConfig model_config;
  std::unique_ptr<lm::TransformerLM> model;
  std::unique_ptr<div::SubNetwork> subnet;  // null when not stored
};

Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

// Loads parameter values into an existing model; configuration or shape
// mismatch is an error.
void load_checkpoint_into(lm::TransformerLM& model, const std::string& path);

}  // namespace mgsr::train
