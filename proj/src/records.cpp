#include "critkit/records.hpp"

#include <algorithm>

namespace critkit::records {

using nlohmann::json;

namespace {

json opt(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> opt_int(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<int>();
}

void check_score(const std::optional<int>& v, const char* field) {
  if (v && (*v < kMinScore || *v > kMaxScore)) {
    throw RecordError(std::string(field) + ": out of range 1-7");
  }
}

void require(bool cond, const std::string& message) {
  if (!cond) throw RecordError(message);
}

}  // namespace

json form_to_json(const RatingForm& f) {
  return {{"critique_id", f.critique_id},
          {"cbi", f.cbi},
          {"comprehensiveness", opt(f.comprehensiveness)},
          {"nitpick", opt(f.nitpick)},
          {"fake_problem", opt(f.fake_problem)},
          {"conciseness", opt(f.conciseness)},
          {"overall", opt(f.overall)},
          {"rationale", f.rationale},
          {"rater_id", f.rater_id}};
}

RatingForm form_from_json(const json& j) {
  RatingForm f;
  f.critique_id = j.value("critique_id", "");
  if (j.contains("cbi") && !j["cbi"].is_null()) f.cbi = j["cbi"].get<std::vector<int>>();
  f.comprehensiveness = opt_int(j, "comprehensiveness");
  f.nitpick = opt_int(j, "nitpick");
  f.fake_problem = opt_int(j, "fake_problem");
  f.conciseness = opt_int(j, "conciseness");
  f.overall = opt_int(j, "overall");
  f.rationale = j.value("rationale", "");
  f.rater_id = j.value("rater_id", "");
  for (int s : f.cbi) check_score(s, "cbi");
  check_score(f.comprehensiveness, "comprehensiveness");
  check_score(f.nitpick, "nitpick");
  check_score(f.fake_problem, "fake_problem");
  check_score(f.conciseness, "conciseness");
  check_score(f.overall, "overall");
  return f;
}

// --- QATask --------------------------------------------------------------

json RecordCodec<QATask>::encode(const QATask& t) {
  return {{"id", t.id},
          {"question", t.question},
          {"answer", t.answer},
          {"full_response", t.full_response},
          {"distribution", to_string(t.distribution)},
          {"language_fraction", t.language_fraction},
          {"metadata", t.metadata}};
}

QATask RecordCodec<QATask>::decode(const json& j) {
  QATask t;
  t.id = j.at("id").get<std::string>();
  t.question = j.at("question").get<std::string>();
  t.answer = j.at("answer").get<std::string>();
  t.full_response = j.value("full_response", "");
  try {
    t.distribution = distribution_from_string(j.value("distribution", "unmodified"));
  } catch (const std::invalid_argument& e) {
    throw RecordError(std::string("distribution: ") + e.what());
  }
  t.language_fraction = j.value("language_fraction", 0.0);
  if (j.contains("metadata")) t.metadata = j["metadata"].get<std::map<std::string, std::string>>();
  require(!t.id.empty(), "id: missing");
  require(t.full_response.empty() || t.full_response.find(t.answer) != std::string::npos,
          "answer: not a substring of full_response");
  require(t.language_fraction >= 0 && t.language_fraction <= 1, "language_fraction: outside [0,1]");
  return t;
}

// --- TamperRecord --------------------------------------------------------

json RecordCodec<datasets::TamperRecord>::encode(const datasets::TamperRecord& t) {
  json bugs = json::array();
  for (const auto& b : t.bugs) {
    bugs.push_back({{"description", b.description},
                    {"severity", b.severity},
                    {"span", {b.span.start, b.span.end}}});
  }
  json checks = json::array();
  for (const auto& c : t.adversarial_checks) {
    checks.push_back(
        {{"critic_id", c.critic_id}, {"samples", c.samples}, {"caught_count", c.caught_count}});
  }
  return {{"id", t.id},
          {"task_id", t.task_id},
          {"original_answer", t.original_answer},
          {"tampered_answer", t.tampered_answer},
          {"bugs", bugs},
          {"adversarial_checks", checks},
          {"verdict", t.verdict},
          {"override_reason", t.override_reason},
          {"author_id", t.author_id}};
}

datasets::TamperRecord RecordCodec<datasets::TamperRecord>::decode(const json& j) {
  datasets::TamperRecord t;
  t.id = j.at("id").get<std::string>();
  t.task_id = j.at("task_id").get<std::string>();
  t.original_answer = j.at("original_answer").get<std::string>();
  t.tampered_answer = j.at("tampered_answer").get<std::string>();
  for (const auto& b : j.at("bugs")) {
    datasets::Bug bug;
    bug.description = b.at("description").get<std::string>();
    bug.severity = b.at("severity").get<int>();
    const auto& span = b.at("span");
    require(span.is_array() && span.size() == 2, "bugs.span: expected [start, end]");
    bug.span = {span[0].get<std::size_t>(), span[1].get<std::size_t>()};
    t.bugs.push_back(std::move(bug));
  }
  if (j.contains("adversarial_checks")) {
    for (const auto& c : j["adversarial_checks"]) {
      t.adversarial_checks.push_back({c.at("critic_id").get<std::string>(),
                                      c.at("samples").get<std::size_t>(),
                                      c.at("caught_count").get<std::size_t>()});
    }
  }
  t.verdict = j.value("verdict", "");
  t.override_reason = j.value("override_reason", "");
  t.author_id = j.value("author_id", "");
  auto errors = datasets::validate_tamper(t);
  if (!errors.empty()) throw RecordError(errors.front());
  return t;
}

// --- Decline -------------------------------------------------------------

json RecordCodec<datasets::Decline>::encode(const datasets::Decline& d) {
  return {{"task_id", d.task_id}, {"annotator_id", d.annotator_id}, {"reason_code", d.reason_code}};
}

datasets::Decline RecordCodec<datasets::Decline>::decode(const json& j) {
  return {j.at("task_id").get<std::string>(), j.at("annotator_id").get<std::string>(),
          j.at("reason_code").get<std::string>()};
}

// --- StoredCritique ------------------------------------------------------

json RecordCodec<StoredCritique>::encode(const StoredCritique& c) {
  return {{"critique_id", c.critique_id},
          {"task_id", c.task_id},
          {"source_id", c.source_id},
          {"author_id", c.author_id},
          {"text", c.text}};
}

StoredCritique RecordCodec<StoredCritique>::decode(const json& j) {
  StoredCritique c;
  c.critique_id = j.at("critique_id").get<std::string>();
  c.task_id = j.at("task_id").get<std::string>();
  c.source_id = j.at("source_id").get<std::string>();
  c.author_id = j.value("author_id", "");
  c.text = j.at("text").get<std::string>();
  require(!c.critique_id.empty(), "critique_id: missing");
  return c;
}

// --- RatingForm ----------------------------------------------------------

json RecordCodec<RatingForm>::encode(const RatingForm& f) { return form_to_json(f); }

RatingForm RecordCodec<RatingForm>::decode(const json& j) { return form_from_json(j); }

// --- ComparisonRecord ----------------------------------------------------

json RecordCodec<ComparisonRecord>::encode(const ComparisonRecord& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back(
        {{"critique_id", e.critique_id}, {"source_id", e.source_id}, {"form", form_to_json(e.form)}});
  }
  return {{"task_id", r.task_id},
          {"entries", entries},
          {"blind_order", r.blind_order},
          {"reference_bugs", r.reference_bugs},
          {"rater_id", r.rater_id}};
}

ComparisonRecord RecordCodec<ComparisonRecord>::decode(const json& j) {
  ComparisonRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  for (const auto& e : j.at("entries")) {
    r.entries.push_back({e.at("critique_id").get<std::string>(), e.at("source_id").get<std::string>(),
                         form_from_json(e.at("form"))});
  }
  r.blind_order = j.value("blind_order", std::vector<std::size_t>{});
  r.reference_bugs = j.value("reference_bugs", std::vector<std::string>{});
  r.rater_id = j.value("rater_id", "");
  require(r.entries.size() == datasets::kCritiquesPerComparison, "entries: expected 4");
  if (!r.blind_order.empty()) {
    auto sorted = r.blind_order;
    std::sort(sorted.begin(), sorted.end());
    require(sorted == std::vector<std::size_t>{0, 1, 2, 3}, "blind_order: not a permutation of 0..3");
  }
  return r;
}

// --- InteractionLog ------------------------------------------------------

json RecordCodec<InteractionLog>::encode(const InteractionLog& log) {
  json entries = json::array();
  for (const auto& e : log.entries) {
    entries.push_back({{"outcome", to_string(e.outcome)},
                       {"prefill_index", e.prefill_index ? json(*e.prefill_index) : json(nullptr)},
                       {"final_index", e.final_index ? json(*e.final_index) : json(nullptr)},
                       {"quote", e.quote}});
  }
  return {{"task_id", log.task_id},
          {"annotator_id", log.annotator_id},
          {"prefill_critique_id", log.prefill_critique_id},
          {"final_critique_id", log.final_critique_id},
          {"entries", entries}};
}

InteractionLog RecordCodec<InteractionLog>::decode(const json& j) {
  InteractionLog log;
  log.task_id = j.at("task_id").get<std::string>();
  log.annotator_id = j.value("annotator_id", "");
  log.prefill_critique_id = j.value("prefill_critique_id", "");
  log.final_critique_id = j.value("final_critique_id", "");
  for (const auto& e : j.at("entries")) {
    CommentInteraction c;
    try {
      c.outcome = interaction_outcome_from_string(e.at("outcome").get<std::string>());
    } catch (const std::invalid_argument& ex) {
      throw RecordError(std::string("entries.outcome: ") + ex.what());
    }
    if (!e.at("prefill_index").is_null()) c.prefill_index = e["prefill_index"].get<std::size_t>();
    if (!e.at("final_index").is_null()) c.final_index = e["final_index"].get<std::size_t>();
    c.quote = e.value("quote", "");
    require((c.outcome == InteractionOutcome::added_new) != c.prefill_index.has_value(),
            "entries: added_new must have no prefill comment, other outcomes need one");
    log.entries.push_back(std::move(c));
  }
  return log;
}

// --- QcAssignment --------------------------------------------------------

json RecordCodec<QcAssignment>::encode(const QcAssignment& q) {
  return {{"submission_id", q.submission_id},
          {"author_id", q.author_id},
          {"reviewer_id", q.reviewer_id}};
}

QcAssignment RecordCodec<QcAssignment>::decode(const json& j) {
  QcAssignment q{j.at("submission_id").get<std::string>(), j.at("author_id").get<std::string>(),
                 j.at("reviewer_id").get<std::string>()};
  require(q.author_id != q.reviewer_id, "reviewer_id: reviewer must differ from author");
  return q;
}

// --- analytics inputs ----------------------------------------------------

json RecordCodec<analytics::DoublyRatedItem>::encode(const analytics::DoublyRatedItem& d) {
  return {{"group_id", d.group_id},
          {"critique_id", d.critique_id},
          {"first", form_to_json(d.first)},
          {"second", form_to_json(d.second)}};
}

analytics::DoublyRatedItem RecordCodec<analytics::DoublyRatedItem>::decode(const json& j) {
  return {j.at("group_id").get<std::string>(), j.at("critique_id").get<std::string>(),
          form_from_json(j.at("first")), form_from_json(j.at("second"))};
}

json RecordCodec<analytics::DcItem>::encode(const analytics::DcItem& d) {
  return {{"confidence_untampered", d.confidence_untampered},
          {"tampered", d.tampered},
          {"caught", d.caught}};
}

analytics::DcItem RecordCodec<analytics::DcItem>::decode(const json& j) {
  analytics::DcItem d{j.at("confidence_untampered").get<double>(), j.at("tampered").get<bool>(),
                      j.at("caught").get<bool>()};
  require(d.confidence_untampered >= 0 && d.confidence_untampered <= 1,
          "confidence_untampered: outside [0,1]");
  return d;
}

Store::Store(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

}  // namespace critkit::records
