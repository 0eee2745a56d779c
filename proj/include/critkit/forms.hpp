#pragma once

// Critique comparison rating form. Every question is answered on a 1-7
// ordinal scale where 4 means "I'm unsure".

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace critkit {

enum class Attribute { cbi, comprehensiveness, nitpick, fake_problem, conciseness, overall };

inline constexpr std::array<Attribute, 6> kAllAttributes{
    Attribute::cbi,         Attribute::comprehensiveness, Attribute::nitpick,
    Attribute::fake_problem, Attribute::conciseness,      Attribute::overall};

std::string_view to_string(Attribute a);
/// Throws std::invalid_argument for unknown names.
Attribute attribute_from_string(std::string_view s);

/// For nitpick and fake_problem a high score reports a defect, so the lower
/// score is preferred in comparisons.
bool higher_is_better(Attribute a);

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 7;
/// Scores at or above this count as "yes"; 4 ("I'm unsure") does not.
inline constexpr int kYesThreshold = 5;

struct RatingForm {
  std::string critique_id;
  std::vector<int> cbi;  // one score per reference bug
  std::optional<int> comprehensiveness;
  std::optional<int> nitpick;
  std::optional<int> fake_problem;
  std::optional<int> conciseness;
  std::optional<int> overall;
  std::string rationale;
  std::string rater_id;

  std::optional<int> scalar(Attribute a) const;
  /// Single comparable value; for cbi the mean over reference bugs.
  std::optional<double> value(Attribute a) const;
};

/// Field paths (prefixed with `path`) that are missing or out of range.
std::vector<std::string> validate_form(const RatingForm& form, std::size_t reference_bug_count,
                                       const std::string& path = "");

struct ComparisonEntry {
  std::string critique_id;
  std::string source_id;
  RatingForm form;
};

struct ComparisonRecord {
  std::string task_id;
  std::vector<ComparisonEntry> entries;  // canonical order
  // Display position i showed entries[blind_order[i]].
  std::vector<std::size_t> blind_order;
  std::vector<std::string> reference_bugs;
  std::string rater_id;
};

// --- human-machine critique teaming --------------------------------------

enum class InteractionOutcome { kept_unmodified, removed, edited_phrasing, added_new };

std::string_view to_string(InteractionOutcome o);
InteractionOutcome interaction_outcome_from_string(std::string_view s);

struct CommentInteraction {
  InteractionOutcome outcome = InteractionOutcome::kept_unmodified;
  std::optional<std::size_t> prefill_index;  // absent for added_new
  std::optional<std::size_t> final_index;    // absent for removed
  std::string quote;
};

struct InteractionLog {
  std::string task_id;
  std::string annotator_id;
  std::string prefill_critique_id;
  std::string final_critique_id;
  std::vector<CommentInteraction> entries;

  std::size_t count(InteractionOutcome o) const;
};

}  // namespace critkit
