#include "mgsr/trainer.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "mgsr/evaluate.hpp"
#include "mgsr/rng.hpp"

namespace mgsr::train {

using nlohmann::json;

std::string select_by_name(SelectBy s) {
  return s == SelectBy::ValidationLoss ? "loss" : "rouge";
}

SelectBy select_by_from_name(const std::string& s) {
  if (s == "loss") return SelectBy::ValidationLoss;
  if (s == "rouge") return SelectBy::ValidationRouge;
  throw std::invalid_argument("unknown selection criterion: " + s);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1)
    throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("TrainConfig: validation_fraction must be in (0,1)");
  if (!(grad_clip > 0.0))
    throw std::invalid_argument("TrainConfig: grad_clip must be > 0");
  weights.validate();
  policy.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{
      {"learning_rate", c.learning_rate},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"weights",
       {{"w_sft", c.weights.w_sft},
        {"w_dac", c.weights.w_dac},
        {"w_span", c.weights.w_span}}},
      {"policy",
       {{"kind", scrg::policy_name(c.policy.kind)},
        {"mixed_ratio", c.policy.mixed_ratio},
        {"rng_seed", c.policy.rng_seed}}},
      {"objective", div::objective_name(c.objective)},
      {"clip_mode",
       {{"kind", c.clip_mode.kind == div::ClipModeKind::Hard ? "hard" : "soft"},
        {"tau", c.clip_mode.tau}}},
      {"dac_components", div::dac_components_name(c.dac_components)},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"grad_clip", c.grad_clip},
      {"validation_fraction", c.validation_fraction},
      {"seed", c.seed},
      {"gen",
       {{"max_len", c.gen.max_len},
        {"stop_token", c.gen.stop_token},
        {"student_decode",
         c.gen.student_decode == lm::DecodeKind::Greedy ? "greedy" : "sample"},
        {"student_temperature", c.gen.student_temperature},
        {"teacher_greedy", c.gen.teacher_greedy},
        {"teacher_temperature", c.gen.teacher_temperature}}},
      {"buffer_capacity", c.buffer_capacity},
      {"p_gen_init", c.p_gen_init},
      {"p_gen_delta", c.p_gen_delta},
      {"plateau_eps", c.plateau_eps},
      {"skew_alpha", c.skew_alpha},
      {"jsd_beta", c.jsd_beta},
      {"select_by", select_by_name(c.select_by)},
  };
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.w_sft = w.value("w_sft", d.weights.w_sft);
    c.weights.w_dac = w.value("w_dac", d.weights.w_dac);
    c.weights.w_span = w.value("w_span", d.weights.w_span);
  }
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    c.policy.kind = scrg::policy_from_name(p.value("kind", "fixed"));
    c.policy.mixed_ratio = p.value("mixed_ratio", d.policy.mixed_ratio);
    c.policy.rng_seed = p.value("rng_seed", d.policy.rng_seed);
  }
  c.objective = div::objective_from_name(
      j.value("objective", div::objective_name(d.objective)));
  if (j.contains("clip_mode")) {
    const auto& m = j.at("clip_mode");
    const std::string kind = m.value("kind", "soft");
    if (kind == "hard")
      c.clip_mode = div::ClipMode::hard();
    else if (kind == "soft")
      c.clip_mode = div::ClipMode::soft(m.value("tau", d.clip_mode.tau));
    else
      throw std::invalid_argument("unknown clip mode: " + kind);
  }
  c.dac_components = div::dac_components_from_name(
      j.value("dac_components", div::dac_components_name(d.dac_components)));
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.seed = j.value("seed", d.seed);
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    c.gen.max_len = g.value("max_len", d.gen.max_len);
    c.gen.stop_token = g.value("stop_token", d.gen.stop_token);
    const std::string decode = g.value("student_decode", "sample");
    if (decode == "greedy")
      c.gen.student_decode = lm::DecodeKind::Greedy;
    else if (decode == "sample")
      c.gen.student_decode = lm::DecodeKind::Sample;
    else
      throw std::invalid_argument("unknown decode kind: " + decode);
    c.gen.student_temperature = g.value("student_temperature", d.gen.student_temperature);
    c.gen.teacher_greedy = g.value("teacher_greedy", d.gen.teacher_greedy);
    c.gen.teacher_temperature = g.value("teacher_temperature", d.gen.teacher_temperature);
  }
  c.buffer_capacity = j.value("buffer_capacity", d.buffer_capacity);
  c.p_gen_init = j.value("p_gen_init", d.p_gen_init);
  c.p_gen_delta = j.value("p_gen_delta", d.p_gen_delta);
  c.plateau_eps = j.value("plateau_eps", d.plateau_eps);
  c.skew_alpha = j.value("skew_alpha", d.skew_alpha);
  c.jsd_beta = j.value("jsd_beta", d.jsd_beta);
  c.select_by = select_by_from_name(j.value("select_by", select_by_name(d.select_by)));
}

void write_metrics(const MetricsRecord& r, std::ostream& out) {
  json j{
      {"step", r.step},
      {"epoch", r.epoch},
      {"loss_sft", r.loss_sft},
      {"loss_dac", r.loss_dac},
      {"loss_span", r.loss_span},
      {"loss_total", r.loss_total},
      {"validation_loss", r.validation_loss},
      {"p_gen", r.p_gen},
      {"corrected_fraction", r.corrected_fraction},
      {"wallclock_s", r.wallclock_s},
  };
  out << j.dump() << '\n';
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<ParamList*>& param_groups) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t pi = 0;
  for (auto* group : param_groups) {
    for (auto& [name, p] : *group) {
      auto& val = p.mutable_values();
      const auto& g = p.grad();
      if (m_.size() <= pi) {
        m_.emplace_back(val.size(), 0.0);
        v_.emplace_back(val.size(), 0.0);
      }
      auto& m = m_[pi];
      auto& v = v_[pi];
      if (m.size() != val.size())
        throw std::logic_error("Adam: parameter size changed between steps");
      for (std::size_t i = 0; i < val.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        val[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
      ++pi;
    }
  }
}

double clip_global_norm(const std::vector<ParamList*>& param_groups,
                        double max_norm) {
  double sq = 0.0;
  for (auto* group : param_groups)
    for (auto& [name, p] : *group)
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto* group : param_groups)
      for (auto& [name, p] : *group)
        for (double& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  char b[4];
  in.read(b, 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  char b[8];
  in.read(b, 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

void put_array(std::ostream& out, const std::string& name, const ad::Tensor& t) {
  put_string(out, name);
  put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
  for (std::int64_t d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
  for (double v : t.values()) put_f64(out, v);
}

json model_config_json(const lm::ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"context_len", c.context_len},
              {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
              {"d_model", c.d_model},       {"d_ff", c.d_ff},
              {"seed", c.seed}};
}

lm::ModelConfig model_config_from_json(const json& j) {
  lm::ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const lm::TransformerLM& model, const div::SubNetwork* subnet,
                     std::ostream& out) {
  out.write("MGSR", 4);
  put_u32(out, kCheckpointVersion);
  json cfg;
  cfg["model"] = model_config_json(model.config());
  if (subnet) {
    int hidden = 0;
    for (const auto& [name, t] : subnet->parameters())
      if (name == "subnet.b1") hidden = static_cast<int>(t.size());
    cfg["subnet"] = json{{"vocab_size", subnet->vocab_size()}, {"hidden", hidden}};
  }
  put_string(out, cfg.dump());
  const std::size_t count =
      model.parameters().size() + (subnet ? subnet->parameters().size() : 0);
  put_u32(out, static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : model.parameters()) put_array(out, name, t);
  if (subnet)
    for (const auto& [name, t] : subnet->parameters()) put_array(out, name, t);
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

void save_checkpoint(const lm::TransformerLM& model, const div::SubNetwork* subnet,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  save_checkpoint(model, subnet, out);
}

std::string checkpoint_bytes(const lm::TransformerLM& model,
                             const div::SubNetwork* subnet) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(model, subnet, out);
  return out.str();
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MGSR", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic bytes");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const json cfg = json::parse(get_string(in));

  Checkpoint ckpt;
  ckpt.model_config = model_config_from_json(cfg.at("model"));
  ckpt.model = std::make_unique<lm::TransformerLM>(ckpt.model_config);
  if (cfg.contains("subnet"))
    ckpt.subnet = std::make_unique<div::SubNetwork>(
        cfg.at("subnet").at("vocab_size").get<int>(), 0,
        cfg.at("subnet").at("hidden").get<int>());

  std::map<std::string, ad::Tensor*> slots;
  for (auto& [name, t] : ckpt.model->parameters()) slots[name] = &t;
  if (ckpt.subnet)
    for (auto& [name, t] : ckpt.subnet->parameters()) slots[name] = &t;

  const std::uint32_t count = get_u32(in);
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::string name = get_string(in);
    const std::uint32_t rank = get_u32(in);
    ad::Shape shape(rank);
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::int64_t>(get_u64(in));
      n *= shape[d];
    }
    auto it = slots.find(name);
    if (it == slots.end())
      throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    if (it->second->shape() != shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name +
                               "': stored " + ad::shape_str(shape) + " vs model " +
                               ad::shape_str(it->second->shape()));
    auto& vals = it->second->mutable_values();
    for (std::int64_t i = 0; i < n; ++i) vals[i] = get_f64(in);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

void load_checkpoint_into(lm::TransformerLM& model, const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  // The init seed is irrelevant once trained weights replace the values.
  lm::ModelConfig want = model.config();
  want.seed = ckpt.model_config.seed;
  if (ckpt.model_config != want)
    throw std::runtime_error("checkpoint: model configuration mismatch for " + path);
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    model.parameters()[i].second.mutable_values() =
        ckpt.model->parameters()[i].second.values();
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

double validation_nll(const lm::TransformerLM& model, const scrg::Dataset& val) {
  double acc = 0.0;
  for (const auto& e : val) {
    const auto dists = model.forward({e.prompt, e.response});
    double nll = 0.0;
    for (std::size_t i = 0; i < e.response.size(); ++i) {
      double p = dists[i][e.response[i]];
      if (p < 1e-12) p = 1e-12;
      nll -= std::log(p);
    }
    acc += nll / static_cast<double>(e.response.size());
  }
  return acc / static_cast<double>(val.size());
}

double validation_rouge(const lm::TransformerLM& model, const scrg::Dataset& val,
                        const scrg::GenerationOptions& gen) {
  lm::DecodeMode mode;
  mode.kind = lm::DecodeKind::Greedy;
  double acc = 0.0;
  for (const auto& e : val) {
    const lm::TokenSequence g =
        model.generate(e.prompt, gen.max_len, mode, gen.stop_token);
    acc += eval::rouge_l(g.response, e.response).f1;
  }
  return acc / static_cast<double>(val.size());
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
  return idx;
}

ad::Tensor teacher_rows_tensor(const std::vector<ProbVector>& dists) {
  const std::int64_t n = static_cast<std::int64_t>(dists.size());
  const std::int64_t m = static_cast<std::int64_t>(dists.front().size());
  std::vector<double> flat;
  flat.reserve(n * m);
  for (const auto& d : dists) flat.insert(flat.end(), d.begin(), d.end());
  return ad::Tensor::constant({n, m}, std::move(flat));
}

ad::Tensor baseline_sequence(div::Objective o, const std::vector<ProbVector>& teacher,
                             const ad::Tensor& student_rows, double alpha,
                             double beta) {
  ad::Tensor acc;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const ad::Tensor term = div::baseline_divergence(
        o, div::prob_tensor(teacher[i]), ad::row(student_rows, i), alpha, beta);
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(teacher.size()));
}

struct LoopContext {
  lm::TransformerLM* student = nullptr;
  const lm::TransformerLM* teacher = nullptr;  // null: SFT-only
  div::SubNetwork* subnet = nullptr;
  const spans::Lexicon* lexicon = nullptr;
  const std::map<std::int64_t, spans::SpanAnnotation>* gold_spans = nullptr;
};

TrainResult run_loop(const TrainConfig& cfg, const LoopContext& ctx,
                     const scrg::Dataset& train_in, const scrg::Dataset& val_in,
                     std::ostream* metrics_out) {
  cfg.validate();
  if (train_in.empty()) throw std::invalid_argument("training set is empty");

  // Fall back to a deterministic tail split when no validation set is given.
  scrg::Dataset train_split, val_split;
  const scrg::Dataset* train = &train_in;
  const scrg::Dataset* val = &val_in;
  if (val_in.empty()) {
    std::size_t n_val = static_cast<std::size_t>(
        cfg.validation_fraction * static_cast<double>(train_in.size()));
    if (n_val < 1) n_val = 1;
    if (n_val >= train_in.size())
      throw std::invalid_argument("validation split leaves no training data");
    train_split.assign(train_in.begin(), train_in.end() - n_val);
    val_split.assign(train_in.end() - n_val, train_in.end());
    train = &train_split;
    val = &val_split;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  const bool use_dac = ctx.teacher && cfg.weights.w_dac != 0.0;
  const bool use_span = ctx.teacher && cfg.weights.w_span != 0.0;
  const bool use_sampling = use_dac || use_span;
  const bool train_subnet =
      use_dac && cfg.objective == div::Objective::DACKL && ctx.subnet;
  if (use_span && !ctx.lexicon)
    throw std::invalid_argument("span loss requires a lexicon");
  if (use_dac && cfg.objective == div::Objective::DACKL && !ctx.subnet)
    throw std::invalid_argument("DAC objective requires a sub-network");

  std::optional<scrg::LmPolicy> student_policy, teacher_policy;
  if (use_sampling) {
    student_policy.emplace(*ctx.student);
    teacher_policy.emplace(*ctx.teacher);
  }
  scrg::GenerationPolicy policy = cfg.policy;
  policy.rng_seed = derive_seed(cfg.seed, 11, cfg.policy.rng_seed);

  std::vector<ParamList*> groups = {&ctx.student->parameters()};
  if (train_subnet) groups.push_back(&ctx.subnet->parameters());

  Adam opt(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  scrg::ReplayBuffer buffer;
  buffer.capacity = cfg.buffer_capacity;
  buffer.p_gen = cfg.p_gen_init;

  const div::SubNetwork* ckpt_subnet = train_subnet ? ctx.subnet : nullptr;
  TrainResult res;
  res.checkpoint = checkpoint_bytes(*ctx.student, ckpt_subnet);
  const bool maximize = cfg.select_by == SelectBy::ValidationRouge;
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();

  auto record = [&](MetricsRecord r) {
    r.wallclock_s = elapsed();
    if (metrics_out) write_metrics(r, *metrics_out);
    res.metrics.push_back(r);
  };

  std::vector<double> val_history;
  double last_val = 0.0;
  std::int64_t gstep = 0;
  const int context = ctx.student->config().context_len;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm =
        epoch_permutation(train->size(), derive_seed(cfg.seed, 5, epoch));
    for (std::size_t start = 0; start < perm.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bsz =
          std::min<std::size_t>(cfg.batch_size, perm.size() - start);

      ctx.student->zero_grads();
      if (train_subnet) ctx.subnet->zero_grads();

      div::LossParts parts;
      MetricsRecord rec;
      rec.step = gstep;
      rec.epoch = epoch;
      rec.validation_loss = last_val;
      rec.p_gen = buffer.p_gen;

      if (cfg.weights.w_sft != 0.0) {
        ad::Tensor acc;
        for (std::size_t b = 0; b < bsz; ++b) {
          const auto& e = (*train)[perm[start + b]];
          const ad::Tensor rows =
              ctx.student->forward_response({e.prompt, e.response});
          const ad::Tensor l = div::sft_loss(rows, e.response);
          acc = acc.defined() ? ad::add(acc, l) : l;
        }
        parts.sft = ad::scale(acc, 1.0 / static_cast<double>(bsz));
      }

      if (use_sampling) {
        scrg::BatchStats stats;
        const auto samples =
            scrg::sample_batch(policy, *train, *student_policy, *teacher_policy,
                               bsz, gstep, cfg.gen, &buffer, &stats);
        rec.corrected_fraction =
            static_cast<double>(stats.corrected) / static_cast<double>(bsz);
        ad::Tensor dac_acc, span_acc;
        int used = 0;
        for (const auto& s : samples) {
          std::vector<int> tokens = s.tokens;
          const std::size_t fit =
              static_cast<std::size_t>(context) - s.prompt.size();
          if (tokens.size() > fit) tokens.resize(fit);
          if (tokens.empty()) continue;
          ++used;
          const lm::TokenSequence seq{s.prompt, tokens};
          const ad::Tensor srows = ctx.student->forward_response(seq);
          const auto tdists = ctx.teacher->forward(seq);
          if (use_dac) {
            const ad::Tensor d =
                cfg.objective == div::Objective::DACKL
                    ? div::dac_kl_sequence(tdists, srows, *ctx.subnet,
                                           cfg.clip_mode, cfg.dac_components)
                    : baseline_sequence(cfg.objective, tdists, srows,
                                        cfg.skew_alpha, cfg.jsd_beta);
            dac_acc = dac_acc.defined() ? ad::add(dac_acc, d) : d;
          }
          if (use_span) {
            std::vector<spans::Span> span_list;
            if (s.dataset_index && ctx.gold_spans) {
              auto it = ctx.gold_spans->find(*s.dataset_index);
              if (it != ctx.gold_spans->end()) span_list = it->second.spans;
            }
            if (span_list.empty())
              span_list = spans::chunk_heuristic(tokens, *ctx.lexicon);
            std::erase_if(span_list, [&](const spans::Span& sp) {
              return sp.start + sp.length > static_cast<int>(tokens.size());
            });
            const ad::Tensor l =
                div::span_correlation_loss(srows, teacher_rows_tensor(tdists),
                                           span_list);
            span_acc = span_acc.defined() ? ad::add(span_acc, l) : l;
          }
        }
        if (use_dac && used > 0)
          parts.dac = ad::scale(dac_acc, 1.0 / static_cast<double>(used));
        if (use_span && used > 0)
          parts.span = ad::scale(span_acc, 1.0 / static_cast<double>(used));
      }

      rec.loss_sft = parts.sft.defined() ? parts.sft.item() : 0.0;
      rec.loss_dac = parts.dac.defined() ? parts.dac.item() : 0.0;
      rec.loss_span = parts.span.defined() ? parts.span.item() : 0.0;
      const double total_value = cfg.weights.w_sft * rec.loss_sft +
                                 cfg.weights.w_dac * rec.loss_dac +
                                 cfg.weights.w_span * rec.loss_span;
      if (!std::isfinite(rec.loss_sft) || !std::isfinite(rec.loss_dac) ||
          !std::isfinite(rec.loss_span) || !std::isfinite(total_value)) {
        // Abort before the optimizer step so the retained checkpoint is the
        // last state that produced a finite loss.
        res.checkpoint = checkpoint_bytes(*ctx.student, ckpt_subnet);
        res.nan_abort = true;
        return res;
      }
      rec.loss_total = total_value;

      const ad::Tensor total = div::overall_loss(parts, cfg.weights);
      ad::backward(total);
      const double norm = clip_global_norm(groups, cfg.grad_clip);
      if (!std::isfinite(norm)) {
        res.checkpoint = checkpoint_bytes(*ctx.student, ckpt_subnet);
        res.nan_abort = true;
        return res;
      }
      opt.step(groups);
      ++gstep;
      record(rec);
    }

    last_val = validation_nll(*ctx.student, *val);
    val_history.push_back(last_val);
    scrg::update_schedule(buffer, val_history, cfg.p_gen_delta, cfg.plateau_eps);
    const double metric = maximize ? validation_rouge(*ctx.student, *val, cfg.gen)
                                   : last_val;
    if (maximize ? metric > best : metric < best) {
      best = metric;
      res.checkpoint = checkpoint_bytes(*ctx.student, ckpt_subnet);
    }
    res.best_validation = best;
  }
  return res;
}

}  // namespace

TrainResult train_teacher(const TrainConfig& config, lm::TransformerLM& model,
                          const scrg::Dataset& train_set,
                          const scrg::Dataset& val_set, std::ostream* metrics_out) {
  LoopContext ctx;
  ctx.student = &model;
  return run_loop(config, ctx, train_set, val_set, metrics_out);
}

TrainResult distill(const TrainConfig& config, lm::TransformerLM& student,
                    const lm::TransformerLM& teacher, div::SubNetwork& subnet,
                    const scrg::Dataset& train_set, const scrg::Dataset& val_set,
                    const spans::Lexicon& lexicon,
                    const std::map<std::int64_t, spans::SpanAnnotation>* gold_spans,
                    std::ostream* metrics_out) {
  if (teacher.config().vocab_size != student.config().vocab_size)
    throw std::invalid_argument("distill: teacher/student vocabulary mismatch");
  LoopContext ctx;
  ctx.student = &student;
  ctx.teacher = &teacher;
  ctx.subnet = &subnet;
  ctx.lexicon = &lexicon;
  ctx.gold_spans = gold_spans;
  return run_loop(config, ctx, train_set, val_set, metrics_out);
}

}  // namespace mgsr::train
