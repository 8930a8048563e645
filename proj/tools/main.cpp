#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mgsr/corpus.hpp"
#include "mgsr/divergences.hpp"
#include "mgsr/evaluate.hpp"
#include "mgsr/lm.hpp"
#include "mgsr/rng.hpp"
#include "mgsr/scrg.hpp"
#include "mgsr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgsr;

namespace {

constexpr int kExitMissingFile = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNanAbort = 3;

struct MissingFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw MissingFileError("missing file: " + path);
}

std::string now_stamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return ss.str();
}

// Run directory <out>/<config-hash>-<timestamp>; every artifact lands inside.
fs::path make_run_dir(const std::string& out, const json& config) {
  const std::size_t h = std::hash<std::string>{}(config.dump());
  std::ostringstream name;
  name << std::hex << std::setw(8) << std::setfill('0') << (h & 0xffffffffu);
  const fs::path dir = fs::path(out) / (name.str() + "-" + now_stamp());
  fs::create_directories(dir);
  std::ofstream cfg(dir / "config.json");
  cfg << config.dump(2) << '\n';
  std::cout << dir.string() << '\n';
  return dir;
}

struct CorpusArgs {
  std::string corpus;   // directory or train .tsv file
  std::string vocab;    // overrides <dir>/vocab.txt
  std::string spans;    // overrides <dir>/spans.train.txt
  std::string lexicon;  // overrides <dir>/lexicon.txt
};

struct LoadedCorpus {
  corpus::Vocab vocab;
  scrg::Dataset train, val, test;
  spans::Lexicon lexicon;
  std::map<std::int64_t, spans::SpanAnnotation> gold_spans;
  bool has_lexicon = false;
};

LoadedCorpus load_corpus_args(const CorpusArgs& a, bool need_spans) {
  LoadedCorpus c;
  require_file(a.corpus);
  std::string train_path = a.corpus, valid_path, test_path;
  std::string vocab_path = a.vocab, spans_path = a.spans, lexicon_path = a.lexicon;
  if (fs::is_directory(a.corpus)) {
    const fs::path dir(a.corpus);
    train_path = (dir / "train.tsv").string();
    valid_path = (dir / "valid.tsv").string();
    test_path = (dir / "test.tsv").string();
    if (vocab_path.empty()) vocab_path = (dir / "vocab.txt").string();
    if (spans_path.empty()) spans_path = (dir / "spans.train.txt").string();
    if (lexicon_path.empty()) lexicon_path = (dir / "lexicon.txt").string();
  }
  if (vocab_path.empty())
    throw CLI::ValidationError("--vocab is required when --corpus is a file");
  require_file(vocab_path);
  require_file(train_path);
  c.vocab = corpus::Vocab::load(vocab_path);
  c.train = corpus::load_corpus(train_path, c.vocab);
  if (!valid_path.empty() && fs::exists(valid_path))
    c.val = corpus::load_corpus(valid_path, c.vocab);
  if (!test_path.empty() && fs::exists(test_path))
    c.test = corpus::load_corpus(test_path, c.vocab);
  if (!lexicon_path.empty() && fs::exists(lexicon_path)) {
    c.lexicon = spans::load_lexicon(lexicon_path);
    c.has_lexicon = true;
  }
  if (need_spans && !spans_path.empty() && fs::exists(spans_path))
    c.gold_spans = spans::load_annotations(spans_path);
  return c;
}

struct ModelArgs {
  int layers = 0, heads = 0, d_model = 0, d_ff = 0, context = 32;
};

lm::ModelConfig model_config(const ModelArgs& m, int vocab_size, std::uint64_t seed) {
  lm::ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.context_len = m.context;
  cfg.n_layers = m.layers;
  cfg.n_heads = m.heads;
  cfg.d_model = m.d_model;
  cfg.d_ff = m.d_ff > 0 ? m.d_ff : 2 * m.d_model;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

// Shared training flags; flag > config file > default.
struct TrainArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string policy;
  std::string loss;
  std::string loss_weights;
  std::string clip_mode;
  std::string dac_components;
  int epochs = -1;
  double lr = 0.0;
  std::string select_by;
};

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--config", t.config_path, "JSON training config file");
  cmd->add_option("--seed", t.seed, "master RNG seed")
      ->each([&](const std::string&) { t.seed_set = true; });
  cmd->add_option("--policy", t.policy,
                  "fixed|student|teacher|mixed:R|scrg-on|scrg-off");
  cmd->add_option("--loss", t.loss, "fkl|rkl|skl|jsd|tvd|sfkl|srkl|dackl");
  cmd->add_option("--loss-weights", t.loss_weights, "A,B,C for sft,dac,span");
  cmd->add_option("--clip-mode", t.clip_mode, "hard|soft:TAU");
  cmd->add_option("--dac-components", t.dac_components, "target|density|both");
  cmd->add_option("--epochs", t.epochs, "training epochs");
  cmd->add_option("--lr", t.lr, "learning rate");
  cmd->add_option("--select-by", t.select_by, "loss|rouge best-checkpoint rule");
}

train::TrainConfig resolve_train_config(const TrainArgs& t) {
  train::TrainConfig cfg;
  if (!t.config_path.empty()) {
    require_file(t.config_path);
    std::ifstream in(t.config_path);
    json j;
    in >> j;
    cfg = j.get<train::TrainConfig>();
  }
  if (t.seed_set) cfg.seed = t.seed;
  if (!t.policy.empty()) {
    cfg.policy.kind = scrg::policy_from_name(t.policy);
    if (t.policy.starts_with("mixed:"))
      cfg.policy.mixed_ratio = std::stod(t.policy.substr(6));
  }
  if (!t.loss.empty()) cfg.objective = div::objective_from_name(t.loss);
  if (!t.loss_weights.empty()) {
    double a, b, c;
    if (std::sscanf(t.loss_weights.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3)
      throw CLI::ValidationError("--loss-weights expects A,B,C");
    cfg.weights = {a, b, c};
  }
  if (!t.clip_mode.empty()) {
    if (t.clip_mode == "hard")
      cfg.clip_mode = div::ClipMode::hard();
    else if (t.clip_mode == "soft")
      cfg.clip_mode = div::ClipMode::soft();
    else if (t.clip_mode.starts_with("soft:"))
      cfg.clip_mode = div::ClipMode::soft(std::stod(t.clip_mode.substr(5)));
    else
      throw CLI::ValidationError("--clip-mode expects hard or soft:TAU");
  }
  if (!t.dac_components.empty())
    cfg.dac_components = div::dac_components_from_name(t.dac_components);
  if (t.epochs >= 0) cfg.epochs = t.epochs;
  if (t.lr > 0.0) cfg.learning_rate = t.lr;
  if (!t.select_by.empty()) cfg.select_by = train::select_by_from_name(t.select_by);
  cfg.validate();
  return cfg;
}

int finish_training(const train::TrainResult& res, const fs::path& dir,
                    const std::string& ckpt_name) {
  std::ofstream out(dir / ckpt_name, std::ios::binary);
  out.write(res.checkpoint.data(),
            static_cast<std::streamsize>(res.checkpoint.size()));
  if (res.nan_abort) {
    std::cerr << "non-finite loss: aborted, last-good checkpoint retained\n";
    return kExitNanAbort;
  }
  std::cout << "best validation: " << res.best_validation << '\n';
  return 0;
}

int cmd_gen_corpus(std::uint64_t seed, int train_size, int val_size, int test_size,
                   const std::string& out) {
  corpus::GrammarConfig gc;
  gc.seed = seed;
  gc.train_size = train_size;
  gc.val_size = val_size;
  gc.test_size = test_size;
  json cfg{{"command", "gen-corpus"},
           {"seed", seed},
           {"train_size", train_size},
           {"val_size", val_size},
           {"test_size", test_size}};
  const fs::path dir = make_run_dir(out, cfg);
  corpus::write_synthetic_corpus(corpus::gen_synthetic_corpus(gc), dir.string());
  return 0;
}

int cmd_train_teacher(const TrainArgs& targs, const CorpusArgs& cargs,
                      const ModelArgs& margs, const std::string& out) {
  train::TrainConfig cfg = resolve_train_config(targs);
  const LoadedCorpus c = load_corpus_args(cargs, false);
  json jcfg;
  train::to_json(jcfg, cfg);
  jcfg["command"] = "train-teacher";
  const fs::path dir = make_run_dir(out, jcfg);

  lm::TransformerLM model(
      model_config(margs, c.vocab.size(), derive_seed(cfg.seed, 1)));
  std::ofstream metrics(dir / "metrics.jsonl");
  const auto res = train::train_teacher(cfg, model, c.train, c.val, &metrics);
  return finish_training(res, dir, "teacher.ckpt");
}

int cmd_distill(const TrainArgs& targs, const CorpusArgs& cargs,
                const ModelArgs& margs, const std::string& teacher_path,
                const std::string& student_path, const std::string& out) {
  train::TrainConfig cfg = resolve_train_config(targs);
  const LoadedCorpus c = load_corpus_args(cargs, true);
  require_file(teacher_path);
  const train::Checkpoint teacher = train::load_checkpoint(teacher_path);

  json jcfg;
  train::to_json(jcfg, cfg);
  jcfg["command"] = "distill";
  jcfg["teacher"] = teacher_path;
  const fs::path dir = make_run_dir(out, jcfg);

  std::unique_ptr<lm::TransformerLM> student;
  if (!student_path.empty()) {
    require_file(student_path);
    student = std::move(train::load_checkpoint(student_path).model);
  } else {
    student = std::make_unique<lm::TransformerLM>(
        model_config(margs, c.vocab.size(), derive_seed(cfg.seed, 1)));
  }
  if (student->config().vocab_size != teacher.model_config.vocab_size)
    throw std::runtime_error("teacher/student vocabulary size mismatch");

  div::SubNetwork subnet(c.vocab.size(), derive_seed(cfg.seed, 3));
  std::ofstream metrics(dir / "metrics.jsonl");
  const auto res =
      train::distill(cfg, *student, *teacher.model, subnet, c.train, c.val,
                     c.lexicon, c.gold_spans.empty() ? nullptr : &c.gold_spans,
                     &metrics);
  return finish_training(res, dir, "student.ckpt");
}

int cmd_evaluate(const std::string& model_path, const CorpusArgs& cargs,
                 std::vector<std::uint64_t> seeds, bool greedy, double temperature,
                 int max_len, const std::string& out) {
  require_file(model_path);
  const LoadedCorpus c = load_corpus_args(cargs, false);
  const scrg::Dataset& data = c.test.empty() ? c.train : c.test;
  if (seeds.empty()) seeds = eval::kDefaultEvalSeeds;

  json jcfg{{"command", "evaluate"},
            {"model", model_path},
            {"seeds", seeds},
            {"greedy", greedy}};
  const fs::path dir = make_run_dir(out, jcfg);

  const train::Checkpoint ckpt = train::load_checkpoint(model_path);
  lm::DecodeMode mode;
  mode.kind = greedy ? lm::DecodeKind::Greedy : lm::DecodeKind::Sample;
  mode.temperature = temperature;
  std::ofstream dump(dir / "generations.jsonl");
  const auto res =
      eval::evaluate_multiseed(*ckpt.model, data, seeds, mode, max_len, 0, &dump);

  json jres;
  jres["mean"] = {{"precision", res.mean.precision},
                  {"recall", res.mean.recall},
                  {"f1", res.mean.f1}};
  std::cout << "seed      precision  recall     f1\n";
  for (const auto& s : res.per_seed) {
    std::printf("%-8llu  %.6f   %.6f   %.6f\n",
                static_cast<unsigned long long>(s.seed), s.mean.precision,
                s.mean.recall, s.mean.f1);
    jres["per_seed"].push_back({{"seed", s.seed},
                                {"precision", s.mean.precision},
                                {"recall", s.mean.recall},
                                {"f1", s.mean.f1}});
  }
  std::printf("mean      %.6f   %.6f   %.6f\n", res.mean.precision,
              res.mean.recall, res.mean.f1);
  std::ofstream(dir / "scores.json") << jres.dump(2) << '\n';
  return 0;
}

int cmd_compare_losses(const TrainArgs& targs, const CorpusArgs& cargs,
                       const ModelArgs& margs, const std::string& teacher_path,
                       const std::string& out) {
  train::TrainConfig base = resolve_train_config(targs);
  const LoadedCorpus c = load_corpus_args(cargs, true);
  require_file(teacher_path);
  const train::Checkpoint teacher = train::load_checkpoint(teacher_path);

  json jcfg;
  train::to_json(jcfg, base);
  jcfg["command"] = "compare-losses";
  jcfg["teacher"] = teacher_path;
  const fs::path dir = make_run_dir(out, jcfg);

  const div::Objective objectives[] = {
      div::Objective::FKL,  div::Objective::RKL,  div::Objective::SKL,
      div::Objective::JSD,  div::Objective::TVD,  div::Objective::SFKL,
      div::Objective::SRKL, div::Objective::DACKL};
  json rows = json::array();
  std::cout << "objective  val_loss   val_rouge_f1\n";
  for (const div::Objective o : objectives) {
    train::TrainConfig cfg = base;
    cfg.objective = o;
    lm::TransformerLM student(
        model_config(margs, c.vocab.size(), derive_seed(cfg.seed, 1)));
    div::SubNetwork subnet(c.vocab.size(), derive_seed(cfg.seed, 3));
    std::ofstream metrics(dir / ("metrics." + div::objective_name(o) + ".jsonl"));
    const auto res =
        train::distill(cfg, student, *teacher.model, subnet, c.train, c.val,
                       c.lexicon, c.gold_spans.empty() ? nullptr : &c.gold_spans,
                       &metrics);
    if (res.nan_abort) {
      std::cerr << "non-finite loss during objective " << div::objective_name(o)
                << '\n';
      return kExitNanAbort;
    }
    lm::DecodeMode greedy;
    const scrg::Dataset& val = c.val.empty() ? c.train : c.val;
    double rouge = 0.0;
    for (const auto& e : val) {
      const auto g = student.generate(e.prompt, base.gen.max_len, greedy,
                                      base.gen.stop_token);
      rouge += eval::rouge_l(g.response, e.response).f1;
    }
    rouge /= static_cast<double>(val.size());
    std::printf("%-9s  %.6f   %.6f\n", div::objective_name(o).c_str(),
                res.best_validation, rouge);
    rows.push_back({{"objective", div::objective_name(o)},
                    {"val_loss", res.best_validation},
                    {"val_rouge_f1", rouge}});
  }
  std::ofstream(dir / "comparison.json") << rows.dump(2) << '\n';
  return 0;
}

int cmd_inspect_dac(const std::string& teacher_path, const std::string& student_path,
                    const CorpusArgs& cargs, int index, int position,
                    const std::string& clip_mode_str, int grid_size,
                    const std::string& out) {
  require_file(teacher_path);
  require_file(student_path);
  const LoadedCorpus c = load_corpus_args(cargs, false);
  const train::Checkpoint teacher = train::load_checkpoint(teacher_path);
  const train::Checkpoint student = train::load_checkpoint(student_path);
  if (!student.subnet)
    throw std::runtime_error("student checkpoint has no clipping sub-network");
  if (index < 0 || index >= static_cast<int>(c.train.size()))
    throw std::runtime_error("sample index out of range");
  const auto& entry = c.train[index];
  if (position < 0 || position >= static_cast<int>(entry.response.size()))
    throw std::runtime_error("token position out of range");

  json jcfg{{"command", "inspect-dac"}, {"index", index}, {"position", position}};
  const fs::path dir = make_run_dir(out, jcfg);

  const std::span<const int> prefix(entry.response.data(),
                                    static_cast<std::size_t>(position));
  const ProbVector t = teacher.model->next_dist(entry.prompt, prefix);
  const ProbVector s = student.model->next_dist(entry.prompt, prefix);
  const div::QuantilePair q = div::predict_quantiles(*student.subnet, t, s);
  div::ClipMode mode = div::ClipMode::hard();
  if (clip_mode_str.starts_with("soft"))
    mode = div::ClipMode::soft(clip_mode_str.starts_with("soft:")
                                   ? std::stod(clip_mode_str.substr(5))
                                   : 0.01);
  const div::ClipSelection sel = div::dac_clip(t, q, mode);
  const eval::DensityExport d = eval::export_density(t, sel, grid_size);
  std::ofstream csv(dir / "density.csv");
  eval::write_density_csv(d, csv);
  std::cout << "u=" << q.u << " l=" << q.l << " bandwidth=" << d.bandwidth << '\n';
  return 0;
}

int cmd_generate(const std::string& model_path, const CorpusArgs& cargs,
                 const std::string& prompts_path, std::uint64_t seed, bool greedy,
                 double temperature, int max_len, const std::string& out) {
  require_file(model_path);
  std::string vocab_path = cargs.vocab;
  if (vocab_path.empty() && fs::is_directory(cargs.corpus))
    vocab_path = (fs::path(cargs.corpus) / "vocab.txt").string();
  if (vocab_path.empty())
    throw CLI::ValidationError("--vocab (or a corpus directory) is required");
  require_file(vocab_path);
  require_file(prompts_path);
  const corpus::Vocab vocab = corpus::Vocab::load(vocab_path);
  const train::Checkpoint ckpt = train::load_checkpoint(model_path);

  json jcfg{{"command", "generate"}, {"model", model_path}, {"seed", seed}};
  const fs::path dir = make_run_dir(out, jcfg);
  std::ofstream jout(dir / "completions.jsonl");

  std::ifstream in(prompts_path);
  std::string line;
  std::size_t idx = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<int> prompt;
    std::string tok;
    while (ss >> tok) prompt.push_back(vocab.id(tok));
    lm::DecodeMode mode;
    mode.kind = greedy ? lm::DecodeKind::Greedy : lm::DecodeKind::Sample;
    mode.temperature = temperature;
    mode.rng_seed = derive_seed(seed, idx);
    const auto g = ckpt.model->generate(prompt, max_len, mode, 0);
    std::string text;
    for (std::size_t i = 0; i < g.response.size(); ++i) {
      if (i) text += ' ';
      text += vocab.token(g.response[i]);
    }
    std::cout << line << '\t' << text << '\n';
    jout << json{{"prompt", line}, {"completion", text}}.dump() << '\n';
    ++idx;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-granularity distillation workbench"};
  app.require_subcommand(1);

  std::string out = "out";
  app.fallthrough();
  app.add_option("--out", out, "output root directory")->capture_default_str();

  // gen-corpus
  auto* gen_corpus = app.add_subcommand("gen-corpus", "emit a synthetic corpus");
  std::uint64_t gc_seed = 0;
  int gc_train = 10000, gc_val = 500, gc_test = 500;
  gen_corpus->add_option("--seed", gc_seed);
  gen_corpus->add_option("--train-size", gc_train);
  gen_corpus->add_option("--val-size", gc_val);
  gen_corpus->add_option("--test-size", gc_test);

  CorpusArgs cargs;
  TrainArgs targs;
  ModelArgs teacher_margs{2, 4, 128, 0, 32};
  ModelArgs student_margs{1, 2, 32, 0, 32};
  std::string teacher_path, student_path, model_path, prompts_path;
  std::vector<std::uint64_t> eval_seeds;
  bool greedy = false;
  double temperature = 1.0;
  int max_len = 24, index = 0, position = 0, grid_size = 64;
  std::string clip_mode_str = "hard";
  std::uint64_t gen_seed = 0;

  auto add_corpus_flags = [&](CLI::App* cmd) {
    cmd->add_option("--corpus", cargs.corpus, "corpus directory or train .tsv");
    cmd->add_option("--vocab", cargs.vocab, "vocabulary file");
    cmd->add_option("--spans", cargs.spans, "gold span sidecar");
    cmd->add_option("--lexicon", cargs.lexicon, "part-of-speech lexicon");
  };
  auto add_model_flags = [&](CLI::App* cmd, ModelArgs& m) {
    cmd->add_option("--layers", m.layers)->capture_default_str();
    cmd->add_option("--heads", m.heads)->capture_default_str();
    cmd->add_option("--d-model", m.d_model)->capture_default_str();
    cmd->add_option("--d-ff", m.d_ff, "0 selects 2*d_model")->capture_default_str();
    cmd->add_option("--context", m.context)->capture_default_str();
  };

  auto* train_teacher = app.add_subcommand("train-teacher", "supervised fine-tuning");
  add_corpus_flags(train_teacher);
  add_train_flags(train_teacher, targs);
  add_model_flags(train_teacher, teacher_margs);

  auto* distill = app.add_subcommand("distill", "teacher-to-student distillation");
  add_corpus_flags(distill);
  add_train_flags(distill, targs);
  add_model_flags(distill, student_margs);
  distill->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  distill->add_option("--student", student_path, "student init checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "multi-seed scoring");
  add_corpus_flags(evaluate);
  evaluate->add_option("--student,--model", model_path, "model checkpoint")
      ->required();
  evaluate->add_option("--seeds", eval_seeds, "evaluation seeds");
  evaluate->add_flag("--greedy", greedy, "greedy decoding");
  evaluate->add_option("--temperature", temperature)->capture_default_str();
  evaluate->add_option("--max-len", max_len)->capture_default_str();

  auto* compare = app.add_subcommand("compare-losses",
                                     "one distillation run per objective");
  add_corpus_flags(compare);
  add_train_flags(compare, targs);
  add_model_flags(compare, student_margs);
  compare->add_option("--teacher", teacher_path, "teacher checkpoint")->required();

  auto* inspect = app.add_subcommand("inspect-dac", "clipped-density export");
  add_corpus_flags(inspect);
  inspect->add_option("--teacher", teacher_path)->required();
  inspect->add_option("--student", student_path)->required();
  inspect->add_option("--index", index, "corpus sample index")->capture_default_str();
  inspect->add_option("--position", position, "response position")
      ->capture_default_str();
  inspect->add_option("--clip-mode", clip_mode_str, "hard|soft:TAU")
      ->capture_default_str();
  inspect->add_option("--grid-size", grid_size)->capture_default_str();

  auto* generate = app.add_subcommand("generate", "complete a prompts file");
  add_corpus_flags(generate);
  generate->add_option("--student,--model", model_path, "model checkpoint")
      ->required();
  generate->add_option("--prompts", prompts_path, "one prompt per line")->required();
  generate->add_option("--seed", gen_seed);
  generate->add_flag("--greedy", greedy);
  generate->add_option("--temperature", temperature)->capture_default_str();
  generate->add_option("--max-len", max_len)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen_corpus->parsed())
      return cmd_gen_corpus(gc_seed, gc_train, gc_val, gc_test, out);
    if (train_teacher->parsed())
      return cmd_train_teacher(targs, cargs, teacher_margs, out);
    if (distill->parsed())
      return cmd_distill(targs, cargs, student_margs, teacher_path, student_path,
                         out);
    if (evaluate->parsed())
      return cmd_evaluate(model_path, cargs, eval_seeds, greedy, temperature,
                          max_len, out);
    if (compare->parsed())
      return cmd_compare_losses(targs, cargs, student_margs, teacher_path, out);
    if (inspect->parsed())
      return cmd_inspect_dac(teacher_path, student_path, cargs, index, position,
                             clip_mode_str, grid_size, out);
    if (generate->parsed())
      return cmd_generate(model_path, cargs, prompts_path, gen_seed, greedy,
                          temperature, max_len, out);
  } catch (const MissingFileError& e) {
    std::cerr << e.what() << '\n';
    return kExitMissingFile;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingFile;
  }
  return kExitUsage;
}
