#pragma once

// Force Sampling Beam Search.
//
// Round 1 forces an open highlight on the empty critique and samples n
// completions. Each later round keeps the k best candidates of the previous
// round by reward score, prepares them for continuation and samples n
// continuations of each. Every candidate from every round is pooled, giving
// n * (k * (d - 1) + 1) candidates, and the final critique maximizes
//
//     rm_score + modifier * num_highlights
//
// with one modifier calibrated per target length percentile.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "critkit/critique.hpp"
#include "critkit/gateway.hpp"
#include "critkit/task.hpp"

namespace critkit::fsbs {

struct FsbsConfig {
  std::size_t n = 4;  // samples per expansion
  std::size_t k = 2;  // beams kept per round
  std::size_t d = 4;  // rounds
  std::vector<double> length_percentiles{10, 25, 50, 75};
  double selection_percentile = 50;
  std::uint64_t seed = 0;
  std::size_t max_continuation = 512;
  double temperature = 1.0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t expected_candidates() const { return n * (k * (d - 1) + 1); }
};

FsbsConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const FsbsConfig& cfg);

struct ScoredCritique {
  std::size_t index = 0;
  Critique critique;
  std::string raw_text;
  double rm_score = 0.0;
  std::size_t num_highlights = 0;
  std::size_t round = 0;                // 1-based
  std::optional<std::size_t> parent;    // candidate index this extends
  std::size_t char_length = 0;
  bool end_of_sequence = false;
};

struct Selection {
  double percentile = 0;
  std::size_t target_length = 0;
  double modifier = 0;
  std::size_t candidate = 0;
  bool reachable = true;
};

struct FsbsResult {
  std::string task_id;
  std::vector<ScoredCritique> candidates;
  std::vector<Selection> selected;
  std::vector<std::string> warnings;
  std::optional<std::string> error;  // set when a whole round failed

  const Selection* selection_at(double percentile) const;
};

/// Strips the end-of-sequence marker, drops the final paragraph when it holds
/// no fence and appends a forced opening fence. Blank lines inside a quoted
/// block do not split paragraphs.
std::string prepare_continuation(std::string_view raw_text);

/// True if a beats b when maximizing rm_score + modifier * num_highlights.
/// Ties: higher rm_score, then earlier round, then lower index.
bool preferred(const ScoredCritique& a, const ScoredCritique& b, double modifier);

const ScoredCritique& select_by_modifier(std::span<const ScoredCritique> candidates,
                                         double modifier);

/// Nearest-rank percentile of candidate highlight counts.
std::size_t target_length(std::span<const ScoredCritique> candidates, double percentile);

struct Calibration {
  std::size_t target_length = 0;
  double modifier = 0;
  bool reachable = true;
};

inline constexpr double kModifierResolution = 1e-6;

/// Smallest modifier (to kModifierResolution) whose selection has at least
/// target highlights. Unreachable targets return the modifier that selects
/// the longest candidate.
Calibration calibrate_to_length(std::span<const ScoredCritique> candidates, std::size_t target);
Calibration calibrate_modifier(std::span<const ScoredCritique> candidates, double percentile);

class FsbsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

FsbsResult run_fsbs(const QATask& task, const FsbsConfig& cfg, gateway::Generator& generator,
                    gateway::Scorer& scorer);

/// One candidate record per line followed by a selection footer record.
void write_result(std::ostream& out, const FsbsResult& result);
FsbsResult read_result(std::istream& in);

}  // namespace critkit::fsbs
