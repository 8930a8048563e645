#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mgsr/scrg.hpp"
#include "mgsr/spans.hpp"

namespace mgsr::corpus {

/// Fixed vocabulary; id = line index in the vocab file.
struct Vocab {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  int add(const std::string& token);

  static Vocab load(const std::string& path);
  void save(const std::string& path) const;
};

inline constexpr const char* kEosToken = "</s>";

// UTF-8 lines "prompt \t response" over whitespace-separated vocab tokens.
scrg::Dataset load_corpus(const std::string& path, const Vocab& vocab);
void save_corpus(const scrg::Dataset& dataset, const Vocab& vocab,
                 const std::string& path);

struct GrammarConfig {
  std::uint64_t seed = 0;
  int train_size = 10000;
  int val_size = 500;
  int test_size = 500;
};

struct GeneratedCorpus {
  Vocab vocab;
  spans::Lexicon lexicon;
  scrg::Dataset train, val, test;
  std::map<std::int64_t, spans::SpanAnnotation> train_spans, val_spans, test_spans;
};

// Seeded template grammar with unambiguous NP/VP/PP structure; prompts are
// instruction-like prefixes, responses end with the EOS token, and gold spans
// cover every response.
GeneratedCorpus gen_synthetic_corpus(const GrammarConfig& config);

// Writes {train,valid,test}.tsv, vocab.txt, lexicon.txt and
// spans.{train,valid,test}.txt under out_dir.
void write_synthetic_corpus(const GeneratedCorpus& corpus, const std::string& out_dir);

}  // namespace mgsr::corpus
