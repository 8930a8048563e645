#include "mgsr/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mgsr/rng.hpp"

namespace mgsr::corpus {

int Vocab::id(const std::string& token) const {
  auto it = index.find(token);
  if (it == index.end()) throw std::out_of_range("vocab: unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocab::token(int tid) const {
  if (tid < 0 || tid >= size())
    throw std::out_of_range("vocab: id " + std::to_string(tid) + " out of range");
  return tokens[tid];
}

int Vocab::add(const std::string& token) {
  auto it = index.find(token);
  if (it != index.end()) return it->second;
  const int tid = size();
  tokens.push_back(token);
  index[token] = tid;
  return tid;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.add(line);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : tokens) out << t << '\n';
}

namespace {

std::vector<int> parse_tokens(const std::string& text, const Vocab& vocab) {
  std::istringstream ss(text);
  std::vector<int> ids;
  std::string tok;
  while (ss >> tok) ids.push_back(vocab.id(tok));
  return ids;
}

}  // namespace

scrg::Dataset load_corpus(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  scrg::Dataset out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("corpus: missing tab separator at line " +
                               std::to_string(lineno) + " of " + path);
    scrg::DatasetEntry e;
    e.prompt = parse_tokens(line.substr(0, tab), vocab);
    e.response = parse_tokens(line.substr(tab + 1), vocab);
    if (e.prompt.empty() || e.response.empty())
      throw std::runtime_error("corpus: empty prompt or response at line " +
                               std::to_string(lineno) + " of " + path);
    out.push_back(std::move(e));
  }
  return out;
}

void save_corpus(const scrg::Dataset& dataset, const Vocab& vocab,
                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  auto write_tokens = [&](const std::vector<int>& ids) {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(ids[i]);
    }
  };
  for (const auto& e : dataset) {
    write_tokens(e.prompt);
    out << '\t';
    write_tokens(e.response);
    out << '\n';
  }
}

namespace {

struct Grammar {
  Vocab vocab;
  spans::Lexicon lexicon;
  std::vector<int> det, adj, noun, verb, adv, prep;
  int eos = 0;
  int w_describe = 0, w_what = 0, w_does = 0, w_the = 0, w_do = 0;

  Grammar() {
    auto add = [&](const char* word, spans::PosTag tag) {
      const int id = vocab.add(word);
      lexicon[id] = tag;
      return id;
    };
    eos = add(kEosToken, spans::PosTag::OTHER);
    w_describe = add("describe", spans::PosTag::OTHER);
    w_what = add("what", spans::PosTag::OTHER);
    w_does = add("does", spans::PosTag::OTHER);
    w_do = add("do", spans::PosTag::OTHER);
    for (const char* w : {"the", "a"}) det.push_back(add(w, spans::PosTag::DET));
    for (const char* w : {"red", "big", "old", "happy", "small", "quick"})
      adj.push_back(add(w, spans::PosTag::ADJ));
    for (const char* w : {"cat", "dog", "bird", "fox", "tree", "river", "house",
                          "stone", "child", "wizard"})
      noun.push_back(add(w, spans::PosTag::NOUN));
    for (const char* w : {"runs", "sleeps", "jumps", "sings", "falls", "waits"})
      verb.push_back(add(w, spans::PosTag::VERB));
    for (const char* w : {"quickly", "quietly", "gladly", "slowly"})
      adv.push_back(add(w, spans::PosTag::ADV));
    for (const char* w : {"near", "under", "over", "beside"})
      prep.push_back(add(w, spans::PosTag::PREP));
    w_the = det[0];
  }

  // Content decisions are hashes of the prompt, so the prompt fully
  // determines the response and the mapping is learnable from data. The
  // two-noun pattern keys every decision on the full (n1, n2, prep) context,
  // which takes real model capacity to fit.
  int verb_for(int n1) const { return verb[derive_seed(11, n1) % verb.size()]; }
  int adv_for(int n1, int v) const {
    return adv[derive_seed(13, n1, v) % adv.size()];
  }
  int verb_for(int n1, int n2, int p) const {
    return verb[derive_seed(11, derive_seed(n1, n2), p) % verb.size()];
  }
  int adv_for(int n1, int n2, int p) const {
    return adv[derive_seed(13, derive_seed(n2, n1), p) % adv.size()];
  }
  bool has_adj(int n1, int n2, int p) const {
    return derive_seed(17, derive_seed(n1, p), n2) % 2 == 0;
  }
  int adj_for(int n1, int n2, int p) const {
    return adj[derive_seed(19, derive_seed(n1, n2), p) % adj.size()];
  }
  bool has_adv(int n1, int n2, int p) const {
    return derive_seed(23, derive_seed(p, n1), n2) % 2 == 0;
  }
};

struct SampleOut {
  scrg::DatasetEntry entry;
  std::vector<spans::Span> gold;
};

SampleOut make_sample(const Grammar& g, Rng& rng) {
  SampleOut s;
  const int n1 = g.noun[rng.next_below(g.noun.size())];
  const bool pattern_pp = rng.next_double() < 0.7;
  if (pattern_pp) {
    const int n2 = g.noun[rng.next_below(g.noun.size())];
    const int p = g.prep[rng.next_below(g.prep.size())];
    s.entry.prompt = {g.w_describe, g.w_the, n1, p, g.w_the, n2};
    auto& r = s.entry.response;
    r.push_back(g.w_the);
    const bool adj = g.has_adj(n1, n2, p);
    if (adj) r.push_back(g.adj_for(n1, n2, p));
    r.push_back(n1);
    const int np_len = static_cast<int>(r.size());
    const int v = g.verb_for(n1, n2, p);
    r.push_back(v);
    const bool adv = g.has_adv(n1, n2, p);
    if (adv) r.push_back(g.adv_for(n1, n2, p));
    const int vp_len = 1 + (adv ? 1 : 0);
    r.push_back(p);
    r.push_back(g.w_the);
    r.push_back(n2);
    r.push_back(g.eos);
    s.gold.push_back({0, np_len, spans::SpanKind::NP});
    s.gold.push_back({np_len, vp_len, spans::SpanKind::VP});
    s.gold.push_back({np_len + vp_len, 3, spans::SpanKind::PP});
  } else {
    s.entry.prompt = {g.w_what, g.w_does, g.w_the, n1, g.w_do};
    const int v = g.verb_for(n1);
    s.entry.response = {g.w_the, n1, v, g.adv_for(n1, v), g.eos};
    s.gold.push_back({0, 2, spans::SpanKind::NP});
    s.gold.push_back({2, 2, spans::SpanKind::VP});
  }
  return s;
}

void fill_split(const Grammar& g, std::uint64_t seed, int size, scrg::Dataset& ds,
                std::map<std::int64_t, spans::SpanAnnotation>& annotations) {
  Rng rng(seed);
  for (int i = 0; i < size; ++i) {
    SampleOut s = make_sample(g, rng);
    annotations[i] = {i, std::move(s.gold)};
    ds.push_back(std::move(s.entry));
  }
}

}  // namespace

GeneratedCorpus gen_synthetic_corpus(const GrammarConfig& config) {
  if (config.train_size < 1 || config.val_size < 1 || config.test_size < 1)
    throw std::invalid_argument("gen_synthetic_corpus: split sizes must be >= 1");
  Grammar g;
  GeneratedCorpus out;
  out.vocab = g.vocab;
  out.lexicon = g.lexicon;
  fill_split(g, derive_seed(config.seed, 1), config.train_size, out.train,
             out.train_spans);
  fill_split(g, derive_seed(config.seed, 2), config.val_size, out.val, out.val_spans);
  fill_split(g, derive_seed(config.seed, 3), config.test_size, out.test,
             out.test_spans);
  return out;
}

void write_synthetic_corpus(const GeneratedCorpus& corpus, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  corpus.vocab.save((dir / "vocab.txt").string());
  spans::save_lexicon(corpus.lexicon, (dir / "lexicon.txt").string());
  save_corpus(corpus.train, corpus.vocab, (dir / "train.tsv").string());
  save_corpus(corpus.val, corpus.vocab, (dir / "valid.tsv").string());
  save_corpus(corpus.test, corpus.vocab, (dir / "test.tsv").string());
  spans::save_annotations(corpus.train_spans, (dir / "spans.train.txt").string());
  spans::save_annotations(corpus.val_spans, (dir / "spans.valid.txt").string());
  spans::save_annotations(corpus.test_spans, (dir / "spans.test.txt").string());
}

}  // namespace mgsr::corpus
