#include "mgsr/spans.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mgsr::spans {

std::string kind_name(SpanKind k) {
  switch (k) {
    case SpanKind::NP: return "NP";
    case SpanKind::VP: return "VP";
    case SpanKind::PP: return "PP";
    case SpanKind::OTHER: return "OTHER";
  }
  return "OTHER";
}

SpanKind kind_from_name(const std::string& s) {
  if (s == "NP") return SpanKind::NP;
  if (s == "VP") return SpanKind::VP;
  if (s == "PP") return SpanKind::PP;
  if (s == "OTHER") return SpanKind::OTHER;
  throw std::invalid_argument("unknown span kind: " + s);
}

std::string tag_name(PosTag t) {
  switch (t) {
    case PosTag::DET: return "DET";
    case PosTag::ADJ: return "ADJ";
    case PosTag::NOUN: return "NOUN";
    case PosTag::VERB: return "VERB";
    case PosTag::ADV: return "ADV";
    case PosTag::PREP: return "PREP";
    case PosTag::OTHER: return "OTHER";
  }
  return "OTHER";
}

PosTag tag_from_name(const std::string& s) {
  if (s == "DET") return PosTag::DET;
  if (s == "ADJ") return PosTag::ADJ;
  if (s == "NOUN") return PosTag::NOUN;
  if (s == "VERB") return PosTag::VERB;
  if (s == "ADV") return PosTag::ADV;
  if (s == "PREP") return PosTag::PREP;
  if (s == "OTHER") return PosTag::OTHER;
  throw std::invalid_argument("unknown POS tag: " + s);
}

Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
  Lexicon lex;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int id;
    std::string tag;
    if (!(ss >> id >> tag))
      throw std::runtime_error("lexicon: malformed line " + std::to_string(lineno) +
                               " in " + path);
    lex[id] = tag_from_name(tag);
  }
  return lex;
}

void save_lexicon(const Lexicon& lex, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write lexicon file: " + path);
  for (const auto& [id, tag] : lex) out << id << ' ' << tag_name(tag) << '\n';
}

namespace {

PosTag tag_of(int token, const Lexicon& lex) {
  auto it = lex.find(token);
  return it == lex.end() ? PosTag::OTHER : it->second;
}

// Parses DET? ADJ* NOUN+ starting at i; returns the length or 0 if no NOUN.
int parse_np(std::span<const int> tokens, const Lexicon& lex, size_t i) {
  size_t j = i;
  if (j < tokens.size() && tag_of(tokens[j], lex) == PosTag::DET) ++j;
  while (j < tokens.size() && tag_of(tokens[j], lex) == PosTag::ADJ) ++j;
  size_t nouns = 0;
  while (j < tokens.size() && tag_of(tokens[j], lex) == PosTag::NOUN) {
    ++j;
    ++nouns;
  }
  return nouns == 0 ? 0 : static_cast<int>(j - i);
}

}  // namespace

std::vector<Span> chunk_heuristic(std::span<const int> tokens, const Lexicon& lexicon) {
  std::vector<Span> out;
  size_t i = 0;
  while (i < tokens.size()) {
    const PosTag t = tag_of(tokens[i], lexicon);
    if (t == PosTag::PREP) {
      const int np = parse_np(tokens, lexicon, i + 1);
      if (np > 0) {
        out.push_back({static_cast<int>(i), 1 + np, SpanKind::PP});
        i += 1 + np;
        continue;
      }
      ++i;
    } else if (t == PosTag::DET || t == PosTag::ADJ || t == PosTag::NOUN) {
      const int np = parse_np(tokens, lexicon, i);
      if (np > 0) {
        out.push_back({static_cast<int>(i), np, SpanKind::NP});
        i += np;
        continue;
      }
      ++i;
    } else if (t == PosTag::VERB) {
      int len = 1;
      if (i + 1 < tokens.size() && tag_of(tokens[i + 1], lexicon) == PosTag::ADV)
        len = 2;
      out.push_back({static_cast<int>(i), len, SpanKind::VP});
      i += len;
    } else {
      ++i;
    }
  }
  return out;
}

void validate_spans(const std::vector<Span>& spans, int sequence_length) {
  int prev_end = 0;
  for (const auto& s : spans) {
    if (s.start < 0 || s.length <= 0)
      throw std::invalid_argument("span: start must be >= 0 and length positive");
    if (s.start < prev_end)
      throw std::invalid_argument("span: overlapping or unsorted spans at start " +
                                  std::to_string(s.start));
    if (sequence_length >= 0 && s.start + s.length > sequence_length)
      throw std::out_of_range("span: range [" + std::to_string(s.start) + "," +
                              std::to_string(s.start + s.length) +
                              ") exceeds sequence length " +
                              std::to_string(sequence_length));
    prev_end = s.start + s.length;
  }
}

std::map<std::int64_t, SpanAnnotation> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open span file: " + path);
  std::map<std::int64_t, SpanAnnotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::int64_t sample;
    int start, length;
    std::string kind;
    if (!(ss >> sample >> start >> length >> kind))
      throw std::runtime_error("spans: malformed line " + std::to_string(lineno) +
                               " in " + path);
    auto& ann = out[sample];
    ann.sample_id = sample;
    ann.spans.push_back({start, length, kind_from_name(kind)});
  }
  for (auto& [id, ann] : out) {
    std::sort(ann.spans.begin(), ann.spans.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    try {
      validate_spans(ann.spans, -1);
    } catch (const std::exception& e) {
      throw std::runtime_error("spans: sample " + std::to_string(id) + ": " + e.what());
    }
  }
  return out;
}

void save_annotations(const std::map<std::int64_t, SpanAnnotation>& annotations,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write span file: " + path);
  for (const auto& [id, ann] : annotations)
    for (const auto& s : ann.spans)
      out << id << ' ' << s.start << ' ' << s.length << ' ' << kind_name(s.kind)
          << '\n';
}

}  // namespace mgsr::spans
