#include "critkit/forms.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "critkit/task.hpp"

namespace critkit {

std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::cbi: return "cbi";
    case Attribute::comprehensiveness: return "comprehensiveness";
    case Attribute::nitpick: return "nitpick";
    case Attribute::fake_problem: return "fake_problem";
    case Attribute::conciseness: return "conciseness";
    case Attribute::overall: return "overall";
  }
  return "unknown";
}

Attribute attribute_from_string(std::string_view s) {
  for (auto a : kAllAttributes) {
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument("unknown attribute: " + std::string(s));
}

bool higher_is_better(Attribute a) {
  return a != Attribute::nitpick && a != Attribute::fake_problem;
}

std::optional<int> RatingForm::scalar(Attribute a) const {
  switch (a) {
    case Attribute::comprehensiveness: return comprehensiveness;
    case Attribute::nitpick: return nitpick;
    case Attribute::fake_problem: return fake_problem;
    case Attribute::conciseness: return conciseness;
    case Attribute::overall: return overall;
    case Attribute::cbi: break;
  }
  return std::nullopt;
}

std::optional<double> RatingForm::value(Attribute a) const {
  if (a == Attribute::cbi) {
    if (cbi.empty()) return std::nullopt;
    return std::accumulate(cbi.begin(), cbi.end(), 0.0) / static_cast<double>(cbi.size());
  }
  if (auto v = scalar(a)) return static_cast<double>(*v);
  return std::nullopt;
}

std::vector<std::string> validate_form(const RatingForm& form, std::size_t reference_bug_count,
                                       const std::string& path) {
  std::vector<std::string> errors;
  auto in_range = [](int v) { return v >= kMinScore && v <= kMaxScore; };
  if (form.cbi.size() != reference_bug_count) {
    errors.push_back(path + "cbi: expected " + std::to_string(reference_bug_count) +
                     " scores, got " + std::to_string(form.cbi.size()));
  }
  for (std::size_t i = 0; i < form.cbi.size(); ++i) {
    if (!in_range(form.cbi[i])) {
      errors.push_back(path + "cbi[" + std::to_string(i) + "]: out of range 1-7");
    }
  }
  for (auto a : kAllAttributes) {
    if (a == Attribute::cbi) continue;
    auto v = form.scalar(a);
    if (!v) {
      errors.push_back(path + std::string(to_string(a)) + ": missing");
    } else if (!in_range(*v)) {
      errors.push_back(path + std::string(to_string(a)) + ": out of range 1-7");
    }
  }
  if (form.rationale.find_first_not_of(" \t\r\n") == std::string::npos) {
    errors.push_back(path + "rationale: missing");
  }
  return errors;
}

std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::unmodified: return "unmodified";
    case Distribution::inserted_bug: return "inserted_bug";
    case Distribution::detected_bug: return "detected_bug";
  }
  return "unknown";
}

Distribution distribution_from_string(std::string_view s) {
  if (s == "unmodified") return Distribution::unmodified;
  if (s == "inserted_bug") return Distribution::inserted_bug;
  if (s == "detected_bug") return Distribution::detected_bug;
  throw std::invalid_argument("unknown distribution: " + std::string(s));
}

std::string_view to_string(InteractionOutcome o) {
  switch (o) {
    case InteractionOutcome::kept_unmodified: return "kept_unmodified";
    case InteractionOutcome::removed: return "removed";
    case InteractionOutcome::edited_phrasing: return "edited_phrasing";
    case InteractionOutcome::added_new: return "added_new";
  }
  return "unknown";
}

InteractionOutcome interaction_outcome_from_string(std::string_view s) {
  for (auto o : {InteractionOutcome::kept_unmodified, InteractionOutcome::removed,
                 InteractionOutcome::edited_phrasing, InteractionOutcome::added_new}) {
    if (to_string(o) == s) return o;
  }
  throw std::invalid_argument("unknown interaction outcome: " + std::string(s));
}

std::size_t InteractionLog::count(InteractionOutcome o) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.outcome == o; }));
}

}  // namespace critkit
