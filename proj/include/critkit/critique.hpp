#pragma once

// Structured critique text: quoted highlights opened by ``` fences, each
// followed by a free-text comment.
//
//   <preamble>
//
//   ```[info]
//   <quoted excerpt of the answer>
//   ```
//
//   <comment body>
//
// Parsing is total; structural problems are reported as warnings.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace critkit {

inline constexpr std::string_view kFence = "```";

struct AnswerSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  std::size_t length() const { return end - start; }
  bool overlaps(const AnswerSpan& other) const {
    return start < other.end && other.start < end;
  }
  friend bool operator==(const AnswerSpan&, const AnswerSpan&) = default;
};

enum class AnchorKind { none, exact, whitespace_normalized };

struct CritiqueComment {
  std::string quote;
  std::string body;
  // Text after the opening fence marker (e.g. a language tag). Not part of
  // the structure but kept so serialization reproduces it.
  std::string fence_info;
  std::optional<AnswerSpan> anchor;
  AnchorKind anchor_kind = AnchorKind::none;

  friend bool operator==(const CritiqueComment& a, const CritiqueComment& b) {
    return a.quote == b.quote && a.body == b.body && a.fence_info == b.fence_info;
  }
};

struct Critique {
  std::string preamble;
  std::vector<CritiqueComment> comments;
  // Closing remarks appended after the last comment on serialization. The
  // parser attributes such text to the last comment body, so only critiques
  // with an empty trailer survive a round trip unchanged.
  std::string trailer;
  std::string source_id;
};

enum class ParseWarningKind { empty_quote, unclosed_fence, text_after_closing_fence };

struct ParseWarning {
  ParseWarningKind kind;
  std::size_t comment_index;
  std::size_t line;  // 1-based line of the offending fence
};

struct ParseResult {
  Critique critique;
  std::vector<ParseWarning> warnings;
};

/// True if the line's first non-whitespace characters are ```.
bool is_fence_line(std::string_view line);

ParseResult parse_critique(std::string_view text);

std::string serialize_critique(const Critique& critique);

inline std::size_t num_highlights(const Critique& critique) {
  return critique.comments.size();
}

struct AnchorResult {
  Critique critique;
  std::vector<std::size_t> unanchored;  // comment indices with no match
  std::size_t anchored_count() const {
    return critique.comments.size() - unanchored.size();
  }
};

/// Locates each quote in the answer. Exact leftmost match first, then a
/// whitespace-collapsed leftmost match. A normalized anchor spans the answer
/// text whose collapsed form equals the collapsed quote.
AnchorResult anchor_quotes(const Critique& critique, std::string_view answer);

/// Collapses every whitespace run to a single space and trims both ends.
std::string collapse_whitespace(std::string_view text);

std::string_view to_string(ParseWarningKind kind);
std::string_view to_string(AnchorKind kind);

}  // namespace critkit
