#include "critkit/service.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "critkit/random.hpp"

namespace critkit::service {

using nlohmann::json;

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::tamper: return "tamper";
    case TaskKind::compare: return "compare";
    case TaskKind::critique: return "critique";
  }
  return "unknown";
}

TaskKind task_kind_from_string(std::string_view s) {
  for (auto k : {TaskKind::tamper, TaskKind::compare, TaskKind::critique}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown task kind: " + std::string(s));
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::unauthorized: return "unauthorized";
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::validation_failed: return "validation_failed";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::lease_conflict: return "lease_conflict";
    case ErrorCode::lease_invalid: return "lease_invalid";
    case ErrorCode::lease_expired: return "lease_expired";
    case ErrorCode::backend_unavailable: return "backend_unavailable";
  }
  return "unknown";
}

ServiceError::ServiceError(ErrorCode code, const std::string& message,
                           std::vector<std::string> fields)
    : std::runtime_error(message), code_(code), fields_(std::move(fields)) {}

// --- adversarial check ---------------------------------------------------

std::vector<std::string> content_words(std::string_view text) {
  static const std::set<std::string, std::less<>> stop{
      "the",   "and",   "for",  "with",   "this",  "that",  "from",  "are",   "was",
      "were",  "not",   "but",  "has",    "have",  "had",   "should", "would", "could",
      "will",  "into",  "its",  "when",   "then",  "than",  "which", "instead", "also",
      "only",  "does",  "did",  "been",   "being", "their", "there", "here",  "what",
      "where", "who",   "why",  "how",    "all",   "any",   "can",   "may",   "might",
      "must",  "them",  "they", "these",  "those", "you",   "your",  "our",   "out",
      "line",  "code",  "there's", "it's", "isn't", "doesn't"};
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 3 && !stop.contains(cur)) words.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_') {
      cur += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

double keyword_overlap(std::string_view body, std::string_view bug_description) {
  auto desc = content_words(bug_description);
  std::set<std::string> wanted(desc.begin(), desc.end());
  if (wanted.empty()) return 0.0;
  auto got = content_words(body);
  std::set<std::string> have(got.begin(), got.end());
  std::size_t hits = 0;
  for (const auto& w : wanted) hits += have.contains(w);
  return static_cast<double>(hits) / static_cast<double>(wanted.size());
}

bool catches(const CritiqueComment& comment, const datasets::Bug& bug) {
  if (comment.anchor && comment.anchor->overlaps(bug.span)) return true;
  return keyword_overlap(comment.body, bug.description) >= kKeywordOverlap;
}

AdversarialResult run_adversarial_check(gateway::Generator& critic, std::string_view question,
                                        std::string_view tampered_answer,
                                        std::span<const datasets::Bug> bugs, std::uint64_t seed,
                                        std::size_t samples) {
  AdversarialResult out;
  out.checks.resize(bugs.size());
  for (auto& c : out.checks) c.samples = samples;
  for (std::size_t s = 0; s < samples; ++s) {
    gateway::GenerationRequest req;
    req.question = std::string(question);
    req.answer = std::string(tampered_answer);
    req.sample_seed = mix_seed(seed, s);
    gateway::Generation gen;
    try {
      gen = critic.generate(req);
    } catch (const gateway::GatewayError& e) {
      out.verdict = "unchecked";
      out.message = e.what();
      for (auto& c : out.checks) c.caught_count = 0;
      return out;
    }
    out.critiques.push_back(gen.text);
    auto anchored = anchor_quotes(parse_critique(gen.text).critique, tampered_answer);
    for (std::size_t b = 0; b < bugs.size(); ++b) {
      const auto& comments = anchored.critique.comments;
      if (std::any_of(comments.begin(), comments.end(),
                      [&](const auto& cm) { return catches(cm, bugs[b]); })) {
        ++out.checks[b].caught_count;
      }
    }
  }
  bool all_missed_once = std::all_of(out.checks.begin(), out.checks.end(),
                                     [](const auto& c) { return c.passed(); });
  out.verdict = all_missed_once ? "pass" : "fail";
  return out;
}

// --- teaming -------------------------------------------------------------

std::vector<CommentInteraction> diff_critiques(const Critique& prefill, const Critique& final) {
  std::vector<CommentInteraction> out;
  std::vector<bool> used(final.comments.size(), false);
  for (std::size_t i = 0; i < prefill.comments.size(); ++i) {
    const auto& p = prefill.comments[i];
    CommentInteraction e;
    e.prefill_index = i;
    e.quote = p.quote;
    e.outcome = InteractionOutcome::removed;
    for (std::size_t j = 0; j < final.comments.size(); ++j) {
      if (used[j] || final.comments[j].quote != p.quote) continue;
      used[j] = true;
      e.final_index = j;
      e.outcome = final.comments[j].body == p.body ? InteractionOutcome::kept_unmodified
                                                   : InteractionOutcome::edited_phrasing;
      break;
    }
    out.push_back(std::move(e));
  }
  for (std::size_t j = 0; j < final.comments.size(); ++j) {
    if (used[j]) continue;
    CommentInteraction e;
    e.outcome = InteractionOutcome::added_new;
    e.final_index = j;
    e.quote = final.comments[j].quote;
    out.push_back(std::move(e));
  }
  return out;
}

// --- QC ------------------------------------------------------------------

QcResult qc_select(std::span<const Submission> submissions, double rate,
                   std::span<const std::string> reviewers, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("qc rate must be in (0, 1]");
  QcResult out;
  for (const auto& s : submissions) {
    Rng rng(mix_seed(seed, fnv1a64(s.submission_id)));
    if (!rng.bernoulli(rate)) continue;
    std::vector<std::string> eligible;
    for (const auto& r : reviewers) {
      if (r != s.author_id) eligible.push_back(r);
    }
    if (eligible.empty()) {
      out.warnings.push_back("no reviewer other than the author for " + s.submission_id);
      continue;
    }
    out.queue.push_back({s.submission_id, s.author_id, eligible[rng.below(eligible.size())]});
  }
  return out;
}

// --- service -------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string id_for(std::string_view prefix, std::initializer_list<std::string_view> parts) {
  std::uint64_t h = fnv1a64(prefix);
  for (auto p : parts) h = fnv1a64(p, fnv1a64("\x1f", h));
  return std::string(prefix) + "-" + to_hex(h);
}

}  // namespace

AnnotationService::AnnotationService(ServiceOptions options,
                                     std::shared_ptr<gateway::Generator> critic,
                                     std::shared_ptr<gateway::Scorer> scorer, Clock clock)
    : options_(std::move(options)),
      critic_(std::move(critic)),
      scorer_(std::move(scorer)),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::system_clock::now(); })) {
  if (options_.store_dir) store_ = std::make_unique<records::Store>(*options_.store_dir);
}

void AnnotationService::add_tamper_task(const QATask& task) {
  std::lock_guard lock(mu_);
  Slot s;
  s.task_id = task.id;
  s.kind = TaskKind::tamper;
  s.task = task;
  slots_.push_back(std::move(s));
}

void AnnotationService::add_comparison_task(datasets::ComparisonSkeleton skeleton) {
  std::lock_guard lock(mu_);
  Slot s;
  s.task_id = skeleton.task_id;
  s.kind = TaskKind::compare;
  s.task.id = skeleton.task_id;
  s.task.question = skeleton.question;
  s.task.answer = skeleton.answer;
  s.skeleton = std::move(skeleton);
  slots_.push_back(std::move(s));
}

void AnnotationService::add_critique_task(const QATask& task, bool teaming) {
  std::lock_guard lock(mu_);
  Slot s;
  s.task_id = task.id;
  s.kind = TaskKind::critique;
  s.task = task;
  s.teaming = teaming;
  slots_.push_back(std::move(s));
}

void AnnotationService::add_token(const std::string& token, const std::string& annotator_id) {
  std::lock_guard lock(mu_);
  tokens_[token] = annotator_id;
}

std::string AnnotationService::authenticate(std::string_view bearer_token) const {
  std::lock_guard lock(mu_);
  auto it = tokens_.find(std::string(bearer_token));
  if (bearer_token.empty() || it == tokens_.end()) {
    throw ServiceError(ErrorCode::unauthorized, "missing or unknown bearer token");
  }
  return it->second;
}

bool AnnotationService::leased(const Slot& slot, TimePoint now) const {
  return slot.lease && now < slot.lease->expires_at;
}

bool AnnotationService::conflicts(const Slot& slot, const std::string& annotator_id) const {
  if (!slot.skeleton) return false;
  const auto& cs = slot.skeleton->critiques;
  return std::any_of(cs.begin(), cs.end(),
                     [&](const auto& c) { return !c.author_id.empty() && c.author_id == annotator_id; });
}

json AnnotationService::payload(const Slot& slot) const {
  json p;
  if (slot.skeleton) {
    p = slot.skeleton->display_payload();
  } else {
    p = {{"task_id", slot.task_id}, {"question", slot.task.question}, {"answer", slot.task.answer}};
    if (slot.kind == TaskKind::critique) p["teaming"] = slot.teaming;
  }
  p["kind"] = to_string(slot.kind);
  return p;
}

LeasedTask AnnotationService::grant(Slot& slot, const std::string& annotator_id, TimePoint now) {
  TaskLease lease;
  lease.lease_id = "lease-" + to_hex(mix_seed(fnv1a64(slot.task_id), ++lease_counter_));
  lease.task_id = slot.task_id;
  lease.annotator_id = annotator_id;
  lease.kind = slot.kind;
  lease.expires_at = now + options_.lease_duration;
  slot.lease = lease;
  return {lease, payload(slot)};
}

std::optional<LeasedTask> AnnotationService::next_task(const std::string& annotator_id,
                                                       TaskKind kind) {
  std::lock_guard lock(mu_);
  auto now = clock_();
  for (auto& slot : slots_) {
    if (slot.kind != kind || slot.done || leased(slot, now) || conflicts(slot, annotator_id)) {
      continue;
    }
    return grant(slot, annotator_id, now);
  }
  return std::nullopt;
}

LeasedTask AnnotationService::lease_task(const std::string& annotator_id,
                                         const std::string& task_id, TaskKind kind) {
  std::lock_guard lock(mu_);
  auto now = clock_();
  for (auto& slot : slots_) {
    if (slot.kind != kind || slot.task_id != task_id) continue;
    if (slot.done) throw ServiceError(ErrorCode::lease_conflict, "task already completed");
    if (leased(slot, now)) throw ServiceError(ErrorCode::lease_conflict, "task is already leased");
    if (conflicts(slot, annotator_id)) {
      throw ServiceError(ErrorCode::lease_conflict, "annotator authored a critique in this task");
    }
    return grant(slot, annotator_id, now);
  }
  throw ServiceError(ErrorCode::not_found, "no " + std::string(to_string(kind)) + " task " + task_id);
}

AnnotationService::Slot& AnnotationService::slot_for_lease(const std::string& annotator_id,
                                                           const std::string& lease_id,
                                                           TaskKind kind) {
  for (auto& slot : slots_) {
    if (!slot.lease || slot.lease->lease_id != lease_id) continue;
    if (slot.done || slot.lease->annotator_id != annotator_id || slot.kind != kind) break;
    if (clock_() >= slot.lease->expires_at) {
      throw ServiceError(ErrorCode::lease_expired, "lease " + lease_id + " has expired");
    }
    return slot;
  }
  throw ServiceError(ErrorCode::lease_invalid, "lease " + lease_id + " is not held by " +
                                                   annotator_id + " for a " +
                                                   std::string(to_string(kind)) + " task");
}

TaskLease AnnotationService::renew_lease(const std::string& annotator_id,
                                         const std::string& lease_id) {
  std::lock_guard lock(mu_);
  for (auto& slot : slots_) {
    if (slot.lease && slot.lease->lease_id == lease_id) {
      auto& s = slot_for_lease(annotator_id, lease_id, slot.kind);
      s.lease->expires_at = clock_() + options_.lease_duration;
      return *s.lease;
    }
  }
  throw ServiceError(ErrorCode::lease_invalid, "unknown lease " + lease_id);
}

void AnnotationService::complete(Slot& slot, const std::string& submission_id,
                                 const std::string& author_id) {
  slot.done = true;
  slot.lease.reset();
  submissions_.push_back({submission_id, author_id});
}

template <typename T>
void AnnotationService::persist(const T& record) {
  if (store_) store_->append(record);
}

AdversarialResult AnnotationService::adversarial_check(const std::string& annotator_id,
                                                       const std::string& lease_id,
                                                       std::string_view tampered_answer,
                                                       std::span<const datasets::Bug> bugs) {
  std::string question;
  {
    std::lock_guard lock(mu_);
    question = slot_for_lease(annotator_id, lease_id, TaskKind::tamper).task.question;
  }
  return run_adversarial_check(*critic_, question, tampered_answer, bugs,
                               mix_seed(options_.seed, fnv1a64(tampered_answer)));
}

TamperSubmission AnnotationService::submit_tamper(const std::string& annotator_id,
                                                  const std::string& lease_id,
                                                  datasets::TamperRecord draft) {
  QATask task;
  {
    std::lock_guard lock(mu_);
    task = slot_for_lease(annotator_id, lease_id, TaskKind::tamper).task;
  }
  std::vector<std::string> fields;
  if (draft.task_id.empty()) draft.task_id = task.id;
  if (draft.task_id != task.id) fields.push_back("task_id: does not match the leased task");
  if (draft.original_answer.empty()) draft.original_answer = task.answer;
  if (draft.tampered_answer == draft.original_answer) {
    fields.push_back("tampered_answer: identical to the original answer");
  }
  for (auto& e : datasets::validate_tamper(draft)) fields.push_back(std::move(e));
  if (!fields.empty()) {
    throw ServiceError(ErrorCode::validation_failed, "invalid tamper submission", fields);
  }

  auto check = run_adversarial_check(*critic_, task.question, draft.tampered_answer, draft.bugs,
                                     mix_seed(options_.seed, fnv1a64(draft.tampered_answer)));
  TamperSubmission out;
  draft.adversarial_checks = check.checks;
  draft.verdict = check.verdict;
  draft.author_id = annotator_id;
  draft.id = id_for("tamper", {task.id, annotator_id, draft.tampered_answer});
  if (check.verdict == "fail" && trim(draft.override_reason).empty()) {
    throw ServiceError(ErrorCode::validation_failed,
                       "the critic caught a bug in every sample; give an override reason",
                       {"override_reason: required when the adversarial check fails"});
  }
  if (check.verdict != "pass") out.flagged = true;
  if (check.verdict == "unchecked") out.warnings.push_back("critic unavailable: " + check.message);

  std::lock_guard lock(mu_);
  auto& slot = slot_for_lease(annotator_id, lease_id, TaskKind::tamper);
  persist(draft);
  tampers_.push_back(draft);
  complete(slot, draft.id, annotator_id);
  out.record = std::move(draft);
  return out;
}

ComparisonRecord AnnotationService::submit_comparison(const std::string& annotator_id,
                                                               const std::string& lease_id,
                                                               std::vector<RatingForm> forms) {
  std::lock_guard lock(mu_);
  auto& slot = slot_for_lease(annotator_id, lease_id, TaskKind::compare);
  const auto& sk = *slot.skeleton;
  if (forms.size() != sk.critiques.size()) {
    throw ServiceError(ErrorCode::validation_failed, "wrong number of forms",
                       {"forms: expected " + std::to_string(sk.critiques.size()) + ", got " +
                        std::to_string(forms.size())});
  }
  std::vector<std::string> fields;
  for (std::size_t pos = 0; pos < forms.size(); ++pos) {
    auto errs = validate_form(forms[pos], sk.reference_bugs.size(),
                              "forms[" + std::to_string(pos) + "].");
    fields.insert(fields.end(), errs.begin(), errs.end());
  }
  if (!fields.empty()) {
    throw ServiceError(ErrorCode::validation_failed, "incomplete rating forms", fields);
  }
  ComparisonRecord rec;
  rec.task_id = sk.task_id;
  rec.blind_order = sk.blind_order;
  rec.reference_bugs = sk.reference_bugs;
  rec.rater_id = annotator_id;
  rec.entries.resize(sk.critiques.size());
  for (std::size_t pos = 0; pos < forms.size(); ++pos) {
    auto idx = sk.blind_order[pos];
    auto& e = rec.entries[idx];
    e.critique_id = sk.critiques[idx].critique_id;
    e.source_id = sk.critiques[idx].source_id;
    e.form = std::move(forms[pos]);
    e.form.critique_id = e.critique_id;
    e.form.rater_id = annotator_id;
  }
  persist(rec);
  comparisons_.push_back(rec);
  complete(slot, id_for("comparison", {sk.task_id, annotator_id}), annotator_id);
  return rec;
}

PrefillResult AnnotationService::prefill_critique(const std::string& annotator_id,
                                                  const std::string& lease_id) {
  QATask task;
  {
    std::lock_guard lock(mu_);
    auto& slot = slot_for_lease(annotator_id, lease_id, TaskKind::critique);
    if (!slot.teaming) return {};
    if (slot.prefill) return *slot.prefill;
    task = slot.task;
  }
  PrefillResult out;
  out.enabled = true;
  try {
    if (options_.prefill == PrefillMode::fsbs) {
      if (!scorer_) throw fsbs::FsbsError("no scorer configured for FSBS prefill");
      auto result = fsbs::run_fsbs(task, options_.fsbs, *critic_, *scorer_);
      const auto* sel = result.selection_at(options_.fsbs.selection_percentile);
      if (result.error || !sel) {
        throw fsbs::FsbsError(result.error.value_or("no selection produced"));
      }
      out.critique = result.candidates[sel->candidate].critique;
    } else {
      gateway::GenerationRequest req;
      req.question = task.question;
      req.answer = task.answer;
      req.sample_seed = mix_seed(options_.seed, fnv1a64(task.id));
      out.critique = parse_critique(critic_->generate(req).text).critique;
    }
    out.critique = anchor_quotes(out.critique, task.answer).critique;
    out.critique.source_id = options_.prefill == PrefillMode::fsbs ? "critic-fsbs" : "critic";
    out.text = serialize_critique(out.critique);
    out.critique_id = id_for("prefill", {task.id, out.text});
  } catch (const std::exception& e) {
    out = {};
    out.enabled = true;
    out.failed = true;
    out.message = e.what();
  }

  std::lock_guard lock(mu_);
  auto& slot = slot_for_lease(annotator_id, lease_id, TaskKind::critique);
  if (slot.prefill) return *slot.prefill;
  if (!out.failed) {
    records::StoredCritique sc{out.critique_id, task.id, out.critique.source_id, "", out.text};
    persist(sc);
    critiques_.push_back(sc);
  }
  slot.prefill = out;
  return out;
}

CritiqueSubmission AnnotationService::submit_critique(const std::string& annotator_id,
                                                      const std::string& lease_id,
                                                      Critique final) {
  std::lock_guard lock(mu_);
  auto& slot = slot_for_lease(annotator_id, lease_id, TaskKind::critique);
  std::vector<std::string> fields;
  for (std::size_t i = 0; i < final.comments.size(); ++i) {
    if (trim(final.comments[i].quote).empty()) {
      fields.push_back("comments[" + std::to_string(i) + "].quote: missing");
    }
  }
  if (!fields.empty()) throw ServiceError(ErrorCode::validation_failed, "invalid critique", fields);

  const bool prefilled = slot.prefill && !slot.prefill->failed && slot.prefill->enabled;
  Critique prefill = prefilled ? slot.prefill->critique : Critique{};
  CritiqueSubmission out;
  final.source_id = prefilled ? "human-critic" : "human";
  out.critique.text = serialize_critique(final);
  out.critique.task_id = slot.task_id;
  out.critique.source_id = final.source_id;
  out.critique.author_id = annotator_id;
  out.critique.critique_id = id_for("critique", {slot.task_id, annotator_id, out.critique.text});
  out.log.task_id = slot.task_id;
  out.log.annotator_id = annotator_id;
  out.log.prefill_critique_id = prefilled ? slot.prefill->critique_id : "";
  out.log.final_critique_id = out.critique.critique_id;
  out.log.entries = diff_critiques(prefill, final);

  persist(out.critique);
  persist(out.log);
  critiques_.push_back(out.critique);
  logs_.push_back(out.log);
  complete(slot, out.critique.critique_id, annotator_id);
  return out;
}

QcResult AnnotationService::qc_queue(std::optional<double> rate) {
  std::vector<Submission> subs;
  std::vector<std::string> reviewers;
  {
    std::lock_guard lock(mu_);
    subs = submissions_;
    if (options_.reviewers.empty()) {
      std::set<std::string> known;
      for (const auto& [_, who] : tokens_) known.insert(who);
      for (const auto& s : submissions_) known.insert(s.author_id);
      reviewers.assign(known.begin(), known.end());
    } else {
      reviewers = options_.reviewers;
    }
  }
  double r = rate.value_or(options_.qc_rate);
  if (!(r > 0.0 && r <= 1.0)) {
    throw ServiceError(ErrorCode::validation_failed, "invalid qc rate",
                       {"rate: must be in (0, 1]"});
  }
  return qc_select(subs, r, reviewers, options_.seed);
}

std::vector<datasets::TamperRecord> AnnotationService::tamper_records() const {
  std::lock_guard lock(mu_);
  return tampers_;
}

std::vector<ComparisonRecord> AnnotationService::comparison_records() const {
  std::lock_guard lock(mu_);
  return comparisons_;
}

std::vector<records::StoredCritique> AnnotationService::critiques() const {
  std::lock_guard lock(mu_);
  return critiques_;
}

std::vector<InteractionLog> AnnotationService::interaction_logs() const {
  std::lock_guard lock(mu_);
  return logs_;
}

std::vector<Submission> AnnotationService::submissions() const {
  std::lock_guard lock(mu_);
  return submissions_;
}

Critique critique_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("critique: expected an object");
  if (j.contains("text")) return parse_critique(j["text"].get<std::string>()).critique;
  Critique c;
  c.preamble = j.value("preamble", "");
  if (j.contains("comments")) {
    for (const auto& cm : j["comments"]) {
      CritiqueComment comment;
      comment.quote = cm.value("quote", "");
      comment.body = cm.contains("comment") ? cm["comment"].get<std::string>() : cm.value("body", "");
      c.comments.push_back(std::move(comment));
    }
  }
  return c;
}

json critique_to_json(const Critique& c) {
  json comments = json::array();
  for (const auto& cm : c.comments) {
    json e = {{"quote", cm.quote}, {"comment", cm.body}};
    if (cm.anchor) e["span"] = {cm.anchor->start, cm.anchor->end};
    comments.push_back(std::move(e));
  }
  return {{"text", serialize_critique(c)}, {"preamble", c.preamble}, {"comments", comments}};
}

}  // namespace critkit::service
