#include "critkit/critique.hpp"

#include <cctype>

namespace critkit {

namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (true) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::string join_lines(const std::vector<std::string_view>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

// Text following the ``` marker on a fence line.
std::string_view fence_rest(std::string_view line) {
  auto s = trim(line);
  return trim(s.substr(kFence.size()));
}

}  // namespace

bool is_fence_line(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && is_space(line[i])) ++i;
  return line.substr(i).starts_with(kFence);
}

ParseResult parse_critique(std::string_view text) {
  ParseResult result;
  auto& critique = result.critique;

  std::vector<std::string_view> preamble;
  std::vector<std::string_view> quote;
  std::vector<std::string_view> body;
  bool in_quote = false;
  std::size_t open_line = 0;

  auto finish_body = [&] {
    if (critique.comments.empty()) return;
    critique.comments.back().body = std::string(trim(join_lines(body)));
    body.clear();
  };

  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = lines[i];
    if (in_quote) {
      if (is_fence_line(line)) {
        in_quote = false;
        auto& comment = critique.comments.back();
        comment.quote = join_lines(quote);
        quote.clear();
        if (!fence_rest(line).empty()) {
          result.warnings.push_back({ParseWarningKind::text_after_closing_fence,
                                     critique.comments.size() - 1, i + 1});
        }
      } else {
        quote.push_back(line);
      }
      continue;
    }
    if (is_fence_line(line)) {
      finish_body();
      CritiqueComment comment;
      comment.fence_info = std::string(fence_rest(line));
      critique.comments.push_back(std::move(comment));
      in_quote = true;
      open_line = i + 1;
      continue;
    }
    if (critique.comments.empty()) {
      preamble.push_back(line);
    } else {
      body.push_back(line);
    }
  }

  if (in_quote) {
    critique.comments.back().quote = join_lines(quote);
    result.warnings.push_back(
        {ParseWarningKind::unclosed_fence, critique.comments.size() - 1, open_line});
  } else {
    finish_body();
  }
  critique.preamble = std::string(trim(join_lines(preamble)));

  for (std::size_t i = 0; i < critique.comments.size(); ++i) {
    if (trim(critique.comments[i].quote).empty()) {
      result.warnings.push_back({ParseWarningKind::empty_quote, i, 0});
    }
  }
  return result;
}

std::string serialize_critique(const Critique& critique) {
  std::string out = critique.preamble;
  for (const auto& comment : critique.comments) {
    if (!out.empty()) out += "\n\n";
    out += kFence;
    out += comment.fence_info;
    out += '\n';
    out += comment.quote;
    out += '\n';
    out += kFence;
    if (!comment.body.empty()) {
      out += "\n\n";
      out += comment.body;
    }
  }
  if (!critique.trailer.empty()) {
    if (!out.empty()) out += "\n\n";
    out += critique.trailer;
  }
  return out;
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

namespace {

// Collapsed copy of the answer plus, for every collapsed character, the
// offset of the original character it came from.
struct CollapsedText {
  std::string text;
  std::vector<std::size_t> origin;
};

CollapsedText collapse_with_origin(std::string_view answer) {
  CollapsedText out;
  bool pending_space = false;
  std::size_t space_origin = 0;
  for (std::size_t i = 0; i < answer.size(); ++i) {
    char c = answer[i];
    if (is_space(c)) {
      if (!pending_space && !out.text.empty()) space_origin = i;
      pending_space = !out.text.empty();
      continue;
    }
    if (pending_space) {
      out.text += ' ';
      out.origin.push_back(space_origin);
    }
    pending_space = false;
    out.text += c;
    out.origin.push_back(i);
  }
  return out;
}

}  // namespace

AnchorResult anchor_quotes(const Critique& critique, std::string_view answer) {
  AnchorResult result{critique, {}};
  std::optional<CollapsedText> collapsed;

  for (std::size_t i = 0; i < result.critique.comments.size(); ++i) {
    auto& comment = result.critique.comments[i];
    comment.anchor.reset();
    comment.anchor_kind = AnchorKind::none;
    if (comment.quote.empty()) {
      result.unanchored.push_back(i);
      continue;
    }
    if (auto pos = answer.find(comment.quote); pos != std::string_view::npos) {
      comment.anchor = AnswerSpan{pos, pos + comment.quote.size()};
      comment.anchor_kind = AnchorKind::exact;
      continue;
    }
    auto needle = collapse_whitespace(comment.quote);
    if (!needle.empty()) {
      if (!collapsed) collapsed = collapse_with_origin(answer);
      if (auto pos = collapsed->text.find(needle); pos != std::string::npos) {
        auto last = pos + needle.size() - 1;
        comment.anchor = AnswerSpan{collapsed->origin[pos], collapsed->origin[last] + 1};
        comment.anchor_kind = AnchorKind::whitespace_normalized;
        continue;
      }
    }
    result.unanchored.push_back(i);
  }
  return result;
}

std::string_view to_string(ParseWarningKind kind) {
  switch (kind) {
    case ParseWarningKind::empty_quote: return "empty_quote";
    case ParseWarningKind::unclosed_fence: return "unclosed_fence";
    case ParseWarningKind::text_after_closing_fence: return "text_after_closing_fence";
  }
  return "unknown";
}

std::string_view to_string(AnchorKind kind) {
  switch (kind) {
    case AnchorKind::none: return "none";
    case AnchorKind::exact: return "exact";
    case AnchorKind::whitespace_normalized: return "whitespace_normalized";
  }
  return "unknown";
}

}  // namespace critkit
