#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mgsr::spans {

enum class SpanKind { NP, VP, PP, OTHER };

std::string kind_name(SpanKind k);
SpanKind kind_from_name(const std::string& s);

/// Contiguous token range with a phrase kind.
struct Span {
  int start = 0;
  int length = 0;
  SpanKind kind = SpanKind::OTHER;

  bool operator==(const Span&) const = default;
};

struct SpanAnnotation {
  std::int64_t sample_id = 0;
  std::vector<Span> spans;  // disjoint, sorted by start
};

// Coarse part-of-speech tags driving the heuristic chunker.
enum class PosTag { DET, ADJ, NOUN, VERB, ADV, PREP, OTHER };

std::string tag_name(PosTag t);
PosTag tag_from_name(const std::string& s);

/// token id -> coarse part-of-speech tag. Ids without an entry are OTHER.
using Lexicon = std::map<int, PosTag>;

Lexicon load_lexicon(const std::string& path);
void save_lexicon(const Lexicon& lex, const std::string& path);

// Left-to-right maximal-match chunking:
//   NP: DET? ADJ* NOUN+     VP: VERB ADV?     PP: PREP NP
// Tokens outside any template yield no span. Never throws on unknown tokens.
std::vector<Span> chunk_heuristic(std::span<const int> tokens, const Lexicon& lexicon);

// Validates every span (in-bounds is checked by consumers; disjointness and
// ordering are enforced here).
void validate_spans(const std::vector<Span>& spans, int sequence_length);

// Sidecar file: one "sample_id start length kind" record per line.
std::map<std::int64_t, SpanAnnotation> load_annotations(const std::string& path);
void save_annotations(const std::map<std::int64_t, SpanAnnotation>& annotations,
                      const std::string& path);

}  // namespace mgsr::spans
