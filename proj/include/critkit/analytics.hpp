#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "critkit/forms.hpp"

namespace critkit::analytics {

enum class Outcome { a_wins, b_wins, tie };

struct PairwisePreference {
  std::string source_a;
  std::string source_b;
  Outcome outcome = Outcome::tie;
  Attribute attribute = Attribute::overall;
};

struct ExtractResult {
  std::vector<PairwisePreference> preferences;
  std::vector<std::string> warnings;
};

/// Every unordered pair of entries in each record yields one preference.
/// Records missing the attribute on any entry are skipped; pairs whose two
/// entries share a source are skipped.
ExtractResult extract_pairwise(std::span<const ComparisonRecord> records, Attribute attribute);

/// Probability that a source rated r_a is preferred over one rated r_b.
double win_prob(double r_a, double r_b);

struct EloOptions {
  std::optional<std::string> anchor;  // default: lexicographically smallest
  double ridge = 1e-4;
  double gradient_tolerance = 1e-8;
  int max_iterations = 2000;
};

struct Interval {
  double point = 0;
  double low = 0;
  double high = 0;
};

struct EloTable {
  std::map<std::string, double> ratings;
  std::string anchor_source;
  std::map<std::string, Interval> ci;
  double ci_level = 0;
  bool regularized = false;  // ridge applied because a source never won or never lost
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0;
};

class EloError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maximum-likelihood fit by BFGS. Ties count as half a win for each side.
EloTable fit_elo(std::span<const PairwisePreference> prefs, const EloOptions& opts = {});

/// Tie-adjusted share of a's wins over b among preferences between them.
double empirical_winrate(std::span<const PairwisePreference> prefs, const std::string& a,
                         const std::string& b);

struct BootstrapOptions {
  std::size_t resamples = 1000;
  double level = 0.69;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

class BootstrapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Percentile interval of the winrate of a over b, resampling the
/// preferences between a and b with replacement.
Interval bootstrap_winrate(std::span<const PairwisePreference> prefs, const std::string& a,
                           const std::string& b, const BootstrapOptions& opts = {});

/// Percentile intervals of every fitted rating, resampling all preferences
/// and refitting. Replicates that lose connectivity are discarded.
std::map<std::string, Interval> bootstrap_ratings(std::span<const PairwisePreference> prefs,
                                                  const BootstrapOptions& opts = {},
                                                  const EloOptions& elo = {});

/// Linear-interpolated quantile of unsorted data.
double quantile(std::vector<double> values, double q);

enum class Polarity { affirmative, negated };

struct RateResult {
  double rate = 0;
  std::size_t yes = 0;
  std::size_t total = 0;
};

/// Share of scores >= 5. For cbi every reference-bug score is one item.
/// Negated polarity reports 1 - rate (e.g. missed instead of caught).
RateResult attribute_rate(std::span<const RatingForm> forms, Attribute attribute,
                          Polarity polarity = Polarity::affirmative);

/// Share of forms reporting a nitpick or a fake problem (either >= 5).
RateResult spurious_rate(std::span<const RatingForm> forms);

struct ParetoPoint {
  double comprehensiveness = 0;
  double spurious = 0;
  std::string label;
  friend bool operator==(const ParetoPoint&, const ParetoPoint&) = default;
};

/// Points not dominated by any other (>= comprehensiveness and <= spurious
/// with one strict), ordered by comprehensiveness then input order.
std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points);

struct DoublyRatedItem {
  std::string group_id;  // critiques in one comparison task share a group
  std::string critique_id;
  RatingForm first;
  RatingForm second;
};

struct AgreementCount {
  std::size_t agree = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0; }
};

struct AgreementReport {
  std::map<Attribute, AgreementCount> attributes;
  AgreementCount preference;
  std::vector<std::string> warnings;
};

/// Binarized per-attribute agreement between the two raters of each item,
/// plus agreement of their pairwise preferences over critique pairs in the
/// same group, ties resolved by a seeded coin flip.
AgreementReport agreement_report(std::span<const DoublyRatedItem> items,
                                 Attribute preference_attribute = Attribute::overall,
                                 std::uint64_t seed = 0);

struct DcItem {
  double confidence_untampered = 0;  // discriminator's belief the code is clean
  bool tampered = false;
  bool caught = false;
};

struct DcGapReport {
  std::size_t tampered = 0;
  std::size_t decile_size = 0;
  std::size_t decile_caught = 0;
  double decile_catch_rate = 0;
  double overall_catch_rate = 0;
};

/// Critic catch rate on the tenth of tampered items the discriminator was
/// most confident were clean (rounded up), and overall.
DcGapReport dc_gap_report(std::span<const DcItem> items);

}  // namespace critkit::analytics
