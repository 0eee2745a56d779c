#pragma once

// Annotation service: leases tampering, comparison and critique-writing
// tasks to annotators and records what they submit.
//
// Every state transition takes the service mutex, so a lease is granted by
// a single compare-and-swap on the task slot. Backend calls (adversarial
// checks, prefills) run outside the lock.

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "critkit/critique.hpp"
#include "critkit/datasets.hpp"
#include "critkit/forms.hpp"
#include "critkit/fsbs.hpp"
#include "critkit/gateway.hpp"
#include "critkit/records.hpp"
#include "critkit/task.hpp"

namespace critkit::service {

using TimePoint = std::chrono::system_clock::time_point;
using Clock = std::function<TimePoint()>;

enum class TaskKind { tamper, compare, critique };

std::string_view to_string(TaskKind kind);
/// Throws std::invalid_argument for unknown names.
TaskKind task_kind_from_string(std::string_view s);

struct TaskLease {
  std::string lease_id;
  std::string task_id;
  std::string annotator_id;
  TaskKind kind = TaskKind::tamper;
  TimePoint expires_at;
};

struct LeasedTask {
  TaskLease lease;
  nlohmann::json payload;
};

enum class ErrorCode {
  unauthorized,
  bad_request,
  validation_failed,
  not_found,
  lease_conflict,
  lease_invalid,
  lease_expired,
  backend_unavailable,
};

std::string_view to_string(ErrorCode code);

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ErrorCode code, const std::string& message, std::vector<std::string> fields = {});

  ErrorCode code() const { return code_; }
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  ErrorCode code_;
  std::vector<std::string> fields_;
};

// --- adversarial check ---------------------------------------------------

inline constexpr std::size_t kAdversarialSamples = 3;
inline constexpr double kKeywordOverlap = 0.4;

/// Lowercased alphanumeric words of three or more letters minus stop words.
std::vector<std::string> content_words(std::string_view text);

/// Share of the bug description's distinct content words found in the body.
double keyword_overlap(std::string_view body, std::string_view bug_description);

/// A comment catches a bug when its anchored quote overlaps the bug span or
/// its body shares at least kKeywordOverlap of the description's words.
bool catches(const CritiqueComment& comment, const datasets::Bug& bug);

struct AdversarialResult {
  std::vector<datasets::AdversarialCheck> checks;  // one per bug
  std::string verdict;                              // pass, fail or unchecked
  std::vector<std::string> critiques;               // raw sampled critiques
  std::string message;
};

/// Samples kAdversarialSamples critiques of the tampered answer and counts,
/// per bug, the samples with at least one catching comment. The verdict is
/// pass iff every bug was missed at least once. A failing critic yields
/// "unchecked".
AdversarialResult run_adversarial_check(gateway::Generator& critic, std::string_view question,
                                        std::string_view tampered_answer,
                                        std::span<const datasets::Bug> bugs, std::uint64_t seed,
                                        std::size_t samples = kAdversarialSamples);

// --- teaming -------------------------------------------------------------

/// Comment-by-comment diff keyed by quote. Equal quotes are matched in
/// order; a matched pair with a different body is an edit.
std::vector<CommentInteraction> diff_critiques(const Critique& prefill, const Critique& final);

// --- QC ------------------------------------------------------------------

struct Submission {
  std::string submission_id;
  std::string author_id;
};

struct QcResult {
  std::vector<records::QcAssignment> queue;
  std::vector<std::string> warnings;
};

inline constexpr double kDefaultQcRate = 0.14;

/// Each submission is selected with probability `rate` by its own seeded
/// stream and assigned a reviewer other than its author.
QcResult qc_select(std::span<const Submission> submissions, double rate,
                   std::span<const std::string> reviewers, std::uint64_t seed);

// --- service -------------------------------------------------------------

enum class PrefillMode { critic, fsbs };

struct ServiceOptions {
  std::chrono::minutes lease_duration{90};
  double qc_rate = kDefaultQcRate;
  std::uint64_t seed = 0;
  PrefillMode prefill = PrefillMode::critic;
  fsbs::FsbsConfig fsbs;
  std::vector<std::string> reviewers;  // empty: every known annotator
  std::optional<std::filesystem::path> store_dir;
};

struct TamperSubmission {
  datasets::TamperRecord record;
  bool flagged = false;
  std::vector<std::string> warnings;
};

struct PrefillResult {
  bool enabled = false;
  bool failed = false;
  std::string critique_id;
  Critique critique;
  std::string text;
  std::string message;
};

struct CritiqueSubmission {
  records::StoredCritique critique;
  InteractionLog log;
};

class AnnotationService {
 public:
  /// The scorer is only needed for FSBS prefills.
  AnnotationService(ServiceOptions options, std::shared_ptr<gateway::Generator> critic,
                    std::shared_ptr<gateway::Scorer> scorer = nullptr, Clock clock = {});

  // Task pool.
  void add_tamper_task(const QATask& task);
  void add_comparison_task(datasets::ComparisonSkeleton skeleton);
  void add_critique_task(const QATask& task, bool teaming);

  // Authentication. A static token table; unknown tokens are rejected.
  void add_token(const std::string& token, const std::string& annotator_id);
  std::string authenticate(std::string_view bearer_token) const;

  /// Leases the first eligible task of the kind, or nothing when none is
  /// available. Expired leases are reclaimed.
  std::optional<LeasedTask> next_task(const std::string& annotator_id, TaskKind kind);
  /// Leases one specific task; throws lease_conflict if it is already held.
  LeasedTask lease_task(const std::string& annotator_id, const std::string& task_id,
                        TaskKind kind);
  TaskLease renew_lease(const std::string& annotator_id, const std::string& lease_id);

  AdversarialResult adversarial_check(const std::string& annotator_id, const std::string& lease_id,
                                      std::string_view tampered_answer,
                                      std::span<const datasets::Bug> bugs);
  TamperSubmission submit_tamper(const std::string& annotator_id, const std::string& lease_id,
                                 datasets::TamperRecord draft);
  /// Forms arrive in display order.
  ComparisonRecord submit_comparison(const std::string& annotator_id,
                                              const std::string& lease_id,
                                              std::vector<RatingForm> forms);
  PrefillResult prefill_critique(const std::string& annotator_id, const std::string& lease_id);
  CritiqueSubmission submit_critique(const std::string& annotator_id, const std::string& lease_id,
                                     Critique final);

  /// Samples the submissions recorded so far at the configured rate.
  QcResult qc_queue(std::optional<double> rate = std::nullopt);

  // Snapshots.
  std::vector<datasets::TamperRecord> tamper_records() const;
  std::vector<ComparisonRecord> comparison_records() const;
  std::vector<records::StoredCritique> critiques() const;
  std::vector<InteractionLog> interaction_logs() const;
  std::vector<Submission> submissions() const;

  const ServiceOptions& options() const { return options_; }

 private:
  struct Slot {
    std::string task_id;
    TaskKind kind = TaskKind::tamper;
    QATask task;
    std::optional<datasets::ComparisonSkeleton> skeleton;
    bool teaming = false;
    std::optional<TaskLease> lease;
    bool done = false;
    std::optional<PrefillResult> prefill;
  };

  Slot& slot_for_lease(const std::string& annotator_id, const std::string& lease_id,
                       TaskKind kind);
  bool conflicts(const Slot& slot, const std::string& annotator_id) const;
  bool leased(const Slot& slot, TimePoint now) const;
  LeasedTask grant(Slot& slot, const std::string& annotator_id, TimePoint now);
  nlohmann::json payload(const Slot& slot) const;
  void complete(Slot& slot, const std::string& submission_id, const std::string& author_id);
  template <typename T>
  void persist(const T& record);

  ServiceOptions options_;
  std::shared_ptr<gateway::Generator> critic_;
  std::shared_ptr<gateway::Scorer> scorer_;
  Clock clock_;
  std::unique_ptr<records::Store> store_;

  mutable std::mutex mu_;
  std::deque<Slot> slots_;
  std::map<std::string, std::string> tokens_;
  std::uint64_t lease_counter_ = 0;
  std::vector<datasets::TamperRecord> tampers_;
  std::vector<ComparisonRecord> comparisons_;
  std::vector<records::StoredCritique> critiques_;
  std::vector<InteractionLog> logs_;
  std::vector<Submission> submissions_;
};

/// Critique as the API exchanges it: either {"text": ...} or
/// {"preamble", "comments": [{"quote", "comment"}]}.
Critique critique_from_json(const nlohmann::json& j);
nlohmann::json critique_to_json(const Critique& c);

}  // namespace critkit::service
