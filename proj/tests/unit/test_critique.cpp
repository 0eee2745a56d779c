#include <gtest/gtest.h>

#include "critkit/critique.hpp"
#include "critkit/random.hpp"

using namespace critkit;

namespace {

std::string random_line(Rng& rng, bool allow_fence) {
  static const char* words[] = {"x", "return", "i", "+=", "1", "if", "None", "for", "`", "``", "#", "\t", "  "};
  std::string s;
  auto n = rng.below(6);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += words[rng.below(std::size(words))];
  }
  if (!allow_fence && is_fence_line(s)) s = "x" + s;
  return s;
}

std::string random_text(Rng& rng, std::size_t max_lines) {
  std::string s;
  auto n = 1 + rng.below(max_lines);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += '\n';
    s += random_line(rng, false);
  }
  return s;
}

std::string trimmed(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace

TEST(Parse, TwoHighlights) {
  auto r = parse_critique(
      "Overview.\n\n```python\nx = 1\n```\n\nWrong value.\n\n```\nreturn y\n```\n\nUndefined y.\nMore.");
  ASSERT_TRUE(r.warnings.empty());
  EXPECT_EQ(r.critique.preamble, "Overview.");
  ASSERT_EQ(num_highlights(r.critique), 2u);
  EXPECT_EQ(r.critique.comments[0].quote, "x = 1");
  EXPECT_EQ(r.critique.comments[0].fence_info, "python");
  EXPECT_EQ(r.critique.comments[0].body, "Wrong value.");
  EXPECT_EQ(r.critique.comments[1].quote, "return y");
  EXPECT_EQ(r.critique.comments[1].body, "Undefined y.\nMore.");
}

TEST(Parse, EmptyAndNoHighlights) {
  EXPECT_EQ(num_highlights(parse_critique("").critique), 0u);
  auto r = parse_critique("Looks correct to me.");
  EXPECT_EQ(num_highlights(r.critique), 0u);
  EXPECT_EQ(r.critique.preamble, "Looks correct to me.");
}

TEST(Parse, Warnings) {
  auto r = parse_critique("```\nx = 1");
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].kind, ParseWarningKind::unclosed_fence);
  EXPECT_EQ(r.warnings[0].line, 1u);
  EXPECT_EQ(r.critique.comments[0].quote, "x = 1");

  r = parse_critique("```\n\n```\n\nbody");
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].kind, ParseWarningKind::empty_quote);

  r = parse_critique("```\nx\n``` trailing\nbody");
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].kind, ParseWarningKind::text_after_closing_fence);
  EXPECT_EQ(r.warnings[0].line, 3u);
}

TEST(Parse, IndentedFenceCounts) {
  EXPECT_TRUE(is_fence_line("   ```py"));
  EXPECT_FALSE(is_fence_line("x ```"));
  EXPECT_FALSE(is_fence_line("``"));
}

TEST(Parse, NestedFenceClosesOnFirst) {
  auto r = parse_critique("```\nouter\n```python\ninner\n```\n");
  ASSERT_GE(r.critique.comments.size(), 1u);
  EXPECT_EQ(r.critique.comments[0].quote, "outer");
}

TEST(Serialize, RoundTripGeneratedCorpus) {
  Rng rng(7);
  for (int n = 0; n < 300; ++n) {
    Critique c;
    if (rng.bernoulli(0.5)) c.preamble = trimmed(random_text(rng, 3));
    auto k = rng.below(5);
    for (std::size_t i = 0; i < k; ++i) {
      CritiqueComment cc;
      cc.quote = random_text(rng, 3);
      if (trimmed(cc.quote).empty()) cc.quote = "q";
      cc.body = trimmed(random_text(rng, 3));
      if (rng.bernoulli(0.3)) cc.fence_info = "python";
      c.comments.push_back(cc);
    }
    auto text = serialize_critique(c);
    auto back = parse_critique(text);
    EXPECT_TRUE(back.warnings.empty()) << text;
    EXPECT_EQ(back.critique.preamble, c.preamble) << text;
    EXPECT_EQ(back.critique.comments, c.comments) << text;
    EXPECT_EQ(serialize_critique(back.critique), text);
  }
}

TEST(Serialize, TrailerFoldsIntoLastBody) {
  Critique c;
  c.comments.push_back({"x", "bad", "", {}, AnchorKind::none});
  c.trailer = "Overall fine.";
  auto back = parse_critique(serialize_critique(c));
  EXPECT_EQ(back.critique.comments[0].body, "bad\n\nOverall fine.");
}

TEST(Anchor, ExactLeftmost) {
  Critique c;
  c.comments.push_back({"x = 1", "", "", {}, AnchorKind::none});
  auto r = anchor_quotes(c, "y = 0\nx = 1\nx = 1\n");
  ASSERT_TRUE(r.critique.comments[0].anchor);
  EXPECT_EQ(r.critique.comments[0].anchor->start, 6u);
  EXPECT_EQ(r.critique.comments[0].anchor_kind, AnchorKind::exact);
}

TEST(Anchor, WhitespaceNormalized) {
  Critique c;
  c.comments.push_back({"x  =   1\n  y", "", "", {}, AnchorKind::none});
  std::string answer = "z\nx = 1\n    y = 2";
  auto r = anchor_quotes(c, answer);
  ASSERT_TRUE(r.critique.comments[0].anchor);
  EXPECT_EQ(r.critique.comments[0].anchor_kind, AnchorKind::whitespace_normalized);
  auto span = *r.critique.comments[0].anchor;
  EXPECT_EQ(answer.substr(span.start, span.length()), "x = 1\n    y");
}

TEST(Anchor, Unanchored) {
  Critique c;
  c.comments.push_back({"nowhere", "", "", {}, AnchorKind::none});
  c.comments.push_back({"", "", "", {}, AnchorKind::none});
  auto r = anchor_quotes(c, "x = 1");
  EXPECT_EQ(r.unanchored, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(r.anchored_count(), 0u);
}

TEST(Anchor, SoundnessAgainstBruteForce) {
  Rng rng(11);
  for (int n = 0; n < 500; ++n) {
    std::string answer = random_text(rng, 8);
    Critique c;
    for (int i = 0; i < 4; ++i) {
      std::string q;
      if (rng.bernoulli(0.6) && !answer.empty()) {
        auto a = rng.below(answer.size());
        auto b = a + 1 + rng.below(answer.size() - a);
        q = answer.substr(a, b - a);
        if (rng.bernoulli(0.3)) q = collapse_whitespace(q);
      } else {
        q = random_line(rng, false);
      }
      c.comments.push_back({q, "", "", {}, AnchorKind::none});
    }
    auto r = anchor_quotes(c, answer);
    for (const auto& cm : r.critique.comments) {
      // Brute force: does any substring match, exactly or after collapsing?
      bool exact_exists = !cm.quote.empty() && answer.find(cm.quote) != std::string::npos;
      bool normalized_exists = false;
      auto cq = collapse_whitespace(cm.quote);
      if (!cq.empty()) {
        for (std::size_t a = 0; a < answer.size() && !normalized_exists; ++a) {
          for (std::size_t b = a + 1; b <= answer.size(); ++b) {
            if (collapse_whitespace(answer.substr(a, b - a)) == cq) {
              normalized_exists = true;
              break;
            }
          }
        }
      }
      if (!cm.anchor) {
        EXPECT_FALSE(exact_exists || normalized_exists) << cm.quote;
        continue;
      }
      auto got = answer.substr(cm.anchor->start, cm.anchor->length());
      if (cm.anchor_kind == AnchorKind::exact) {
        EXPECT_EQ(got, cm.quote);
        EXPECT_EQ(cm.anchor->start, answer.find(cm.quote));
      } else {
        EXPECT_FALSE(exact_exists);
        EXPECT_EQ(collapse_whitespace(got), cq);
      }
    }
  }
}

TEST(Fuzz, TotalOnRandomBytes) {
  Rng rng(3);
  static const char alphabet[] = "`\n \tabc\r{}";
  for (int n = 0; n < 10000; ++n) {
    std::string s;
    auto len = rng.below(80);
    for (std::size_t i = 0; i < len; ++i) {
      s += rng.bernoulli(0.2) ? static_cast<char>(rng.below(256)) : alphabet[rng.below(sizeof(alphabet) - 1)];
    }
    EXPECT_NO_THROW({
      auto r = parse_critique(s);
      anchor_quotes(r.critique, s);
      serialize_critique(r.critique);
    });
  }
}
