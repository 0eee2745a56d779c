#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "critkit/critique.hpp"
#include "critkit/gateway.hpp"
#include "critkit/task.hpp"

namespace critkit::datasets {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- ingestion -----------------------------------------------------------

struct RawResponse {
  std::string question;
  std::string response;
  std::map<std::string, std::string> metadata;
};

struct CodeBlock {
  std::string info;  // language tag after the opening fence
  std::string content;
  std::size_t line_count = 0;           // content lines, blank ones included
  std::size_t nonblank_line_count = 0;
  bool closed = true;
};

std::vector<CodeBlock> extract_code_blocks(std::string_view response);

/// Block-level lexical classifier. A python/py tag decides yes, any other
/// tag decides no; untagged blocks are judged by def/import/class lines,
/// colon-terminated compound statements and the absence of brace or
/// semicolon syntax.
bool looks_like_python(const CodeBlock& block);

/// Non-blank lines of Python-like blocks over non-blank response lines.
double python_line_fraction(std::string_view response);

inline constexpr double kMinPythonFraction = 0.5;

struct IngestCounts {
  std::size_t total = 0;
  std::size_t no_code_block = 0;
  std::size_t below_threshold = 0;
  std::size_t kept = 0;
};

struct IngestResult {
  std::vector<QATask> tasks;
  IngestCounts counts;
};

std::string task_id_for(std::string_view question, std::string_view response);

/// Keeps responses that are at least half Python by line count; the answer
/// is the largest code block (first on ties).
IngestResult ingest_responses(std::span<const RawResponse> responses,
                              Distribution distribution = Distribution::unmodified);

// --- tampering -----------------------------------------------------------

struct Bug {
  std::string description;
  int severity = 4;  // 1-7
  AnswerSpan span;   // in the tampered answer
};

struct AdversarialCheck {
  std::string critic_id;
  std::size_t samples = 3;
  std::size_t caught_count = 0;
  bool passed() const { return caught_count < samples; }
};

struct TamperRecord {
  std::string id;
  std::string task_id;
  std::string original_answer;
  std::string tampered_answer;
  std::vector<Bug> bugs;
  std::vector<AdversarialCheck> adversarial_checks;  // one per bug when checked
  std::string verdict;  // "pass", "fail", "unchecked" or empty
  std::string override_reason;
  std::string author_id;
};

/// Empty when valid; otherwise field paths with the problem.
std::vector<std::string> validate_tamper(const TamperRecord& t);

struct GoldCritique {
  Critique critique;
  std::string tamper_id;
};

inline constexpr std::string_view kGoldSource = "gold";

/// One comment per bug in insertion order, quoting the bug span.
GoldCritique build_gold_critique(const TamperRecord& t);

// --- comparisons ---------------------------------------------------------

struct CandidateCritique {
  std::string critique_id;
  std::string source_id;
  std::string author_id;  // annotator who wrote it, empty for models
  Critique critique;
};

inline constexpr std::size_t kCritiquesPerComparison = 4;

struct ComparisonSkeleton {
  std::string task_id;
  std::string question;
  std::string answer;
  std::vector<CandidateCritique> critiques;
  std::vector<std::size_t> blind_order;  // display position -> critique index
  std::vector<std::string> reference_bugs;

  /// What raters see: critiques in blind order, no source or author ids.
  nlohmann::json display_payload() const;
};

ComparisonSkeleton assemble_comparison(const QATask& task, std::vector<CandidateCritique> critiques,
                                       std::vector<std::string> reference_bugs, std::uint64_t seed);

// --- flawless re-review ----------------------------------------------------

struct ReviewCandidate {
  std::string task_id;
  double rm_score = 0;
  std::size_t num_highlights = 0;
  std::string critique_text;
};

struct PrioritizeResult {
  std::vector<ReviewCandidate> queue;
  std::vector<std::string> warnings;
};

/// Samples one critique per task, keeps those with at least one highlight
/// and orders them by descending reward score, truncated to budget.
PrioritizeResult prioritize_flawless(std::span<const QATask> tasks, gateway::Generator& critic,
                                     gateway::Scorer& scorer, std::size_t budget,
                                     std::uint64_t seed);

// --- declines ------------------------------------------------------------

struct Decline {
  std::string task_id;
  std::string annotator_id;
  std::string reason_code;  // e.g. "not_english", "broken", "other"
};

}  // namespace critkit::datasets
