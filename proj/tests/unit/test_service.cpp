#include <gtest/gtest.h>

#include <barrier>
#include <cmath>
#include <set>
#include <thread>

#include "critkit/service.hpp"
#include "support.hpp"

using namespace critkit;
using namespace critkit::service;
using testsupport::make_task;
using testsupport::QueueGenerator;

namespace {

const std::string kAnswer = "def f(xs):\n    total = 0\n    for x in xs:\n        total += x\n    return total - 1";

struct FakeClock {
  std::shared_ptr<TimePoint> now = std::make_shared<TimePoint>(std::chrono::system_clock::from_time_t(1700000000));
  Clock fn() const {
    auto n = now;
    return [n] { return *n; };
  }
  void advance(std::chrono::minutes m) { *now += m; }
};

datasets::Bug bug_at(const std::string& answer, const std::string& text, const std::string& desc) {
  auto pos = answer.find(text);
  return {desc, 5, {pos, pos + text.size()}};
}

std::string catching_critique() { return "```\n    return total - 1\n```\nThe subtraction is wrong."; }
std::string missing_critique() { return "```\ntotal = 0\n```\nFine but unclear naming."; }

std::unique_ptr<AnnotationService> make_service(std::shared_ptr<gateway::Generator> critic, ServiceOptions opts = {},
                               Clock clock = {}) {
  auto svc = std::make_unique<AnnotationService>(std::move(opts), std::move(critic), nullptr, std::move(clock));
  svc->add_token("tok-a", "alice");
  svc->add_token("tok-b", "bob");
  return svc;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ServiceError";
  return ErrorCode::bad_request;
}

datasets::ComparisonSkeleton skeleton(const std::string& id, const std::string& author = "") {
  auto task = make_task(id, kAnswer);
  std::vector<datasets::CandidateCritique> cs;
  const char* sources[] = {"critic", "human", "gold", "critic-fsbs"};
  for (int i = 0; i < 4; ++i) {
    cs.push_back({id + "-c" + std::to_string(i), sources[i], i == 1 ? author : "",
                  parse_critique("```\ntotal = 0\n```\nnote " + std::to_string(i)).critique});
  }
  return datasets::assemble_comparison(task, cs, {"off by one"}, 3);
}

}  // namespace

TEST(Keywords, ContentWordsAndOverlap) {
  EXPECT_EQ(content_words("The loop is OFF by one, and total_sum breaks!"),
            (std::vector<std::string>{"loop", "off", "one", "total_sum", "breaks"}));
  EXPECT_DOUBLE_EQ(keyword_overlap("an off by one in the loop", "Loop is off by one"), 1.0);
  EXPECT_DOUBLE_EQ(keyword_overlap("loop", "loop bound off one"), 0.25);
  EXPECT_DOUBLE_EQ(keyword_overlap("anything", "the and"), 0.0);
}

TEST(Keywords, CatchRule) {
  datasets::Bug b{"returns total minus one", 5, {10, 20}};
  CritiqueComment overlapping{"q", "unrelated", "", AnswerSpan{15, 25}, AnchorKind::exact};
  CritiqueComment adjacent{"q", "unrelated", "", AnswerSpan{20, 25}, AnchorKind::exact};
  CritiqueComment words{"q", "the total is off: returns minus", "", std::nullopt, AnchorKind::none};
  EXPECT_TRUE(catches(overlapping, b));
  EXPECT_FALSE(catches(adjacent, b));
  EXPECT_TRUE(catches(words, b));  // 3 of 4 words
}

TEST(Adversarial, OneInThreeRule) {
  auto bug = bug_at(kAnswer, "return total - 1", "subtracts one from the result");
  std::vector<datasets::Bug> bugs{bug};
  for (int caught = 0; caught <= 3; ++caught) {
    std::vector<std::string> texts;
    for (int s = 0; s < 3; ++s) texts.push_back(s < caught ? catching_critique() : missing_critique());
    QueueGenerator critic(texts);
    auto r = run_adversarial_check(critic, "q", kAnswer, bugs, 1);
    EXPECT_EQ(critic.calls(), 3u);
    EXPECT_EQ(r.checks[0].caught_count, static_cast<std::size_t>(caught));
    EXPECT_EQ(r.verdict, caught < 3 ? "pass" : "fail") << caught;
    EXPECT_EQ(r.critiques.size(), 3u);
  }
}

TEST(Adversarial, EveryBugMustBeMissedOnce) {
  auto b1 = bug_at(kAnswer, "return total - 1", "subtracts one");
  auto b2 = bug_at(kAnswer, "total = 0", "wrong initial value");
  std::vector<datasets::Bug> bugs{b1, b2};
  std::string both = catching_critique() + "\n\n```\ntotal = 0\n```\nbad start";
  // b1 caught thrice, b2 twice: fail because b1 never slipped through.
  QueueGenerator critic({both, both, catching_critique()});
  auto r = run_adversarial_check(critic, "q", kAnswer, bugs, 1);
  EXPECT_EQ(r.checks[0].caught_count, 3u);
  EXPECT_EQ(r.checks[1].caught_count, 2u);
  EXPECT_EQ(r.verdict, "fail");
  QueueGenerator critic2({both, both, "nothing"});
  EXPECT_EQ(run_adversarial_check(critic2, "q", kAnswer, bugs, 1).verdict, "pass");
}

TEST(Adversarial, CriticFailureIsUnchecked) {
  testsupport::FailingGenerator critic(gateway::ErrorKind::transport);
  std::vector<datasets::Bug> bugs{bug_at(kAnswer, "total = 0", "x")};
  auto r = run_adversarial_check(critic, "q", kAnswer, bugs, 1);
  EXPECT_EQ(r.verdict, "unchecked");
  EXPECT_FALSE(r.message.empty());
}

TEST(Adversarial, SampleSeedsDiffer) {
  gateway::SyntheticCritic inner;
  testsupport::RecordingGenerator rec(inner);
  std::vector<datasets::Bug> bugs{bug_at(kAnswer, "total = 0", "x")};
  run_adversarial_check(rec, "q", kAnswer, bugs, 42);
  std::set<std::uint64_t> seeds;
  for (const auto& e : rec.entries()) seeds.insert(e.seed);
  EXPECT_EQ(seeds, (std::set<std::uint64_t>{mix_seed(42, 0), mix_seed(42, 1), mix_seed(42, 2)}));
}

TEST(Leases, ConcurrentNextTaskIsExclusive) {
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>());
  auto& svc = *svcp;
  for (int i = 0; i < 5; ++i) svc.add_tamper_task(make_task("t" + std::to_string(i), kAnswer));
  constexpr int kThreads = 16;
  std::barrier start(kThreads);
  std::vector<std::optional<LeasedTask>> got(kThreads);
  std::vector<std::thread> threads;
  for (int i = 0; i < kThreads; ++i) {
    threads.emplace_back([&, i] {
      start.arrive_and_wait();
      got[i] = svc.next_task("user" + std::to_string(i), TaskKind::tamper);
    });
  }
  for (auto& t : threads) t.join();
  std::multiset<std::string> ids;
  for (const auto& g : got) if (g) ids.insert(g->lease.task_id);
  EXPECT_EQ(ids.size(), 5u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 5u);
}

TEST(Leases, ConcurrentLeaseOfOneTask) {
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>());
  auto& svc = *svcp;
  svc.add_tamper_task(make_task("only", kAnswer));
  constexpr int kThreads = 12;
  std::barrier start(kThreads);
  std::atomic<int> granted{0}, conflicts{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < kThreads; ++i) {
    threads.emplace_back([&, i] {
      start.arrive_and_wait();
      try {
        svc.lease_task("user" + std::to_string(i), "only", TaskKind::tamper);
        ++granted;
      } catch (const ServiceError& e) {
        if (e.code() == ErrorCode::lease_conflict) ++conflicts;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(granted.load(), 1);
  EXPECT_EQ(conflicts.load(), kThreads - 1);
}

TEST(Leases, ExpiryRenewAndReclaim) {
  FakeClock clock;
  ServiceOptions opts;
  opts.lease_duration = std::chrono::minutes(10);
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>(), opts, clock.fn());
  auto& svc = *svcp;
  svc.add_tamper_task(make_task("t", kAnswer));
  auto a = svc.next_task("alice", TaskKind::tamper);
  ASSERT_TRUE(a);
  EXPECT_FALSE(svc.next_task("bob", TaskKind::tamper));
  clock.advance(std::chrono::minutes(8));
  auto renewed = svc.renew_lease("alice", a->lease.lease_id);
  EXPECT_EQ(renewed.expires_at, *clock.now + std::chrono::minutes(10));
  EXPECT_EQ(code_of([&] { svc.renew_lease("bob", a->lease.lease_id); }), ErrorCode::lease_invalid);
  clock.advance(std::chrono::minutes(11));
  EXPECT_EQ(code_of([&] { svc.renew_lease("alice", a->lease.lease_id); }), ErrorCode::lease_expired);
  auto b = svc.next_task("bob", TaskKind::tamper);
  ASSERT_TRUE(b);
  EXPECT_NE(b->lease.lease_id, a->lease.lease_id);
  datasets::TamperRecord draft;
  draft.tampered_answer = kAnswer + " ";
  draft.bugs = {bug_at(kAnswer, "total = 0", "x")};
  EXPECT_EQ(code_of([&] { svc.submit_tamper("alice", a->lease.lease_id, draft); }), ErrorCode::lease_invalid);
  EXPECT_EQ(code_of([&] { svc.lease_task("alice", "nope", TaskKind::tamper); }), ErrorCode::not_found);
}

TEST(Auth, Tokens) {
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>());
  auto& svc = *svcp;
  EXPECT_EQ(svc.authenticate("tok-a"), "alice");
  EXPECT_EQ(code_of([&] { svc.authenticate("bad"); }), ErrorCode::unauthorized);
  EXPECT_EQ(code_of([&] { svc.authenticate(""); }), ErrorCode::unauthorized);
}

TEST(Tamper, SubmitFlow) {
  auto tampered = kAnswer;  // already contains the "- 1" bug
  auto svcp = make_service(std::make_shared<QueueGenerator>(std::vector<std::string>{catching_critique()}));
  auto& svc = *svcp;
  auto task = make_task("t", "def f(xs):\n    total = 0\n    for x in xs:\n        total += x\n    return total");
  svc.add_tamper_task(task);
  auto lease = svc.next_task("alice", TaskKind::tamper)->lease;

  datasets::TamperRecord draft;
  draft.tampered_answer = task.answer;
  draft.bugs = {{"", 9, {0, 0}}};
  try {
    svc.submit_tamper("alice", lease.lease_id, draft);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.code(), ErrorCode::validation_failed);
    EXPECT_EQ(e.fields().size(), 4u);  // identical, description, severity, span
  }

  draft.tampered_answer = tampered;
  draft.bugs = {bug_at(tampered, "return total - 1", "subtracts one")};
  // The queued critic catches it every time.
  auto check = svc.adversarial_check("alice", lease.lease_id, tampered, draft.bugs);
  EXPECT_EQ(check.verdict, "fail");
  try {
    svc.submit_tamper("alice", lease.lease_id, draft);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.code(), ErrorCode::validation_failed);
    EXPECT_EQ(e.fields()[0].rfind("override_reason", 0), 0u);
  }
  draft.override_reason = "the bug is subtle in context";
  auto r = svc.submit_tamper("alice", lease.lease_id, draft);
  EXPECT_TRUE(r.flagged);
  EXPECT_EQ(r.record.verdict, "fail");
  EXPECT_EQ(r.record.author_id, "alice");
  EXPECT_EQ(r.record.original_answer, task.answer);
  EXPECT_EQ(svc.tamper_records().size(), 1u);
  EXPECT_FALSE(svc.next_task("bob", TaskKind::tamper));
}

TEST(Compare, SubmissionMapsBlindOrder) {
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>());
  auto& svc = *svcp;
  auto sk = skeleton("c1", "alice");
  svc.add_comparison_task(sk);
  EXPECT_FALSE(svc.next_task("alice", TaskKind::compare));  // authored a critique here
  EXPECT_EQ(code_of([&] { svc.lease_task("alice", "c1", TaskKind::compare); }), ErrorCode::lease_conflict);
  auto leased = svc.next_task("bob", TaskKind::compare);
  ASSERT_TRUE(leased);
  auto bytes = leased->payload.dump();
  for (const char* s : {"critic-fsbs", "\"human\"", "\"gold\"", "alice", "c1-c"}) {
    EXPECT_EQ(bytes.find(s), std::string::npos) << s;
  }

  std::vector<RatingForm> forms;
  for (int pos = 0; pos < 4; ++pos) forms.push_back(testsupport::form(pos + 1, {pos + 2}));
  auto incomplete = forms;
  incomplete[2].overall.reset();
  EXPECT_EQ(code_of([&] { svc.submit_comparison("bob", leased->lease.lease_id, incomplete); }),
            ErrorCode::validation_failed);
  auto rec = svc.submit_comparison("bob", leased->lease.lease_id, forms);
  for (std::size_t pos = 0; pos < 4; ++pos) {
    const auto& e = rec.entries[sk.blind_order[pos]];
    EXPECT_EQ(e.form.overall, static_cast<int>(pos) + 1);
    EXPECT_EQ(e.source_id, sk.critiques[sk.blind_order[pos]].source_id);
    EXPECT_EQ(e.form.rater_id, "bob");
  }
  EXPECT_EQ(rec.blind_order, sk.blind_order);
}

TEST(Teaming, DiffOutcomes) {
  auto prefill = parse_critique("```\na\n```\none\n\n```\nb\n```\ntwo\n\n```\nc\n```\nthree").critique;
  auto final = parse_critique("```\na\n```\none\n\n```\nc\n```\nthree, reworded\n\n```\nd\n```\nnew").critique;
  auto d = diff_critiques(prefill, final);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d[0].outcome, InteractionOutcome::kept_unmodified);
  EXPECT_EQ(d[1].outcome, InteractionOutcome::removed);
  EXPECT_FALSE(d[1].final_index);
  EXPECT_EQ(d[2].outcome, InteractionOutcome::edited_phrasing);
  EXPECT_EQ(d[2].final_index, 1u);
  EXPECT_EQ(d[3].outcome, InteractionOutcome::added_new);
  EXPECT_FALSE(d[3].prefill_index);
  EXPECT_EQ(d[3].quote, "d");
}

TEST(Teaming, DuplicateQuotesMatchInOrder) {
  auto prefill = parse_critique("```\na\n```\nx\n\n```\na\n```\ny").critique;
  auto final = parse_critique("```\na\n```\ny").critique;
  auto d = diff_critiques(prefill, final);
  EXPECT_EQ(d[0].outcome, InteractionOutcome::edited_phrasing);
  EXPECT_EQ(d[1].outcome, InteractionOutcome::removed);
}

TEST(Teaming, PrefillAndSubmit) {
  auto dir = testsupport::temp_dir("svc-store");
  ServiceOptions opts;
  opts.store_dir = dir;
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>(), opts);
  auto& svc = *svcp;
  svc.add_critique_task(make_task("k1", kAnswer), true);
  svc.add_critique_task(make_task("k2", kAnswer), false);
  auto l1 = svc.next_task("alice", TaskKind::critique)->lease;
  auto p = svc.prefill_critique("alice", l1.lease_id);
  ASSERT_TRUE(p.enabled);
  ASSERT_FALSE(p.failed);
  EXPECT_EQ(p.critique.source_id, "critic");
  EXPECT_EQ(svc.prefill_critique("alice", l1.lease_id).critique_id, p.critique_id);  // cached

  auto final = p.critique;
  final.comments.erase(final.comments.begin());
  CritiqueComment added{"total = 0", "should start from the first element", "", {}, AnchorKind::none};
  final.comments.push_back(added);
  auto bad = final;
  bad.comments.push_back({" ", "empty", "", {}, AnchorKind::none});
  EXPECT_EQ(code_of([&] { svc.submit_critique("alice", l1.lease_id, bad); }), ErrorCode::validation_failed);
  auto sub = svc.submit_critique("alice", l1.lease_id, final);
  EXPECT_EQ(sub.critique.source_id, "human-critic");
  EXPECT_EQ(sub.log.prefill_critique_id, p.critique_id);
  EXPECT_EQ(sub.log.count(InteractionOutcome::removed), 1u);
  EXPECT_EQ(sub.log.count(InteractionOutcome::added_new), 1u);
  EXPECT_EQ(sub.log.count(InteractionOutcome::kept_unmodified) + 1, p.critique.comments.size());

  auto l2 = svc.next_task("alice", TaskKind::critique)->lease;
  EXPECT_FALSE(svc.prefill_critique("alice", l2.lease_id).enabled);
  auto solo = svc.submit_critique("alice", l2.lease_id, parse_critique("```\ntotal = 0\n```\nhm").critique);
  EXPECT_EQ(solo.critique.source_id, "human");
  EXPECT_EQ(solo.log.count(InteractionOutcome::added_new), 1u);

  records::Store store(dir);
  EXPECT_EQ(store.load_all<records::StoredCritique>().records.size(), 3u);
  EXPECT_EQ(store.load_all<InteractionLog>().records.size(), 2u);
}

TEST(Teaming, FsbsPrefillAndFailure) {
  ServiceOptions opts;
  opts.prefill = PrefillMode::fsbs;
  opts.fsbs.n = 2;
  opts.fsbs.k = 1;
  opts.fsbs.d = 2;
  AnnotationService svc(opts, std::make_shared<gateway::SyntheticCritic>(),
                        std::make_shared<gateway::HeuristicScorer>());
  svc.add_critique_task(make_task("k", kAnswer), true);
  auto l = svc.next_task("alice", TaskKind::critique)->lease;
  auto p = svc.prefill_critique("alice", l.lease_id);
  EXPECT_FALSE(p.failed) << p.message;
  EXPECT_EQ(p.critique.source_id, "critic-fsbs");

  AnnotationService broken({}, std::make_shared<testsupport::FailingGenerator>(gateway::ErrorKind::transport));
  broken.add_critique_task(make_task("k", kAnswer), true);
  auto l2 = broken.next_task("alice", TaskKind::critique)->lease;
  auto f = broken.prefill_critique("alice", l2.lease_id);
  EXPECT_TRUE(f.failed);
  auto sub = broken.submit_critique("alice", l2.lease_id, parse_critique("```\ntotal = 0\n```\nx").critique);
  EXPECT_EQ(sub.critique.source_id, "human");
}

TEST(Qc, BinomialRateAndReviewers) {
  std::vector<Submission> subs;
  for (int i = 0; i < 5000; ++i) subs.push_back({"sub-" + std::to_string(i), i % 2 ? "alice" : "bob"});
  std::vector<std::string> reviewers{"alice", "bob", "carol"};
  auto r = qc_select(subs, kDefaultQcRate, reviewers, 11);
  double n = 5000, p = kDefaultQcRate;
  EXPECT_NEAR(static_cast<double>(r.queue.size()), n * p, 3 * std::sqrt(n * p * (1 - p)));
  for (const auto& a : r.queue) EXPECT_NE(a.reviewer_id, a.author_id);
  auto again = qc_select(subs, kDefaultQcRate, reviewers, 11);
  ASSERT_EQ(again.queue.size(), r.queue.size());
  EXPECT_EQ(again.queue[3].reviewer_id, r.queue[3].reviewer_id);
  std::vector<std::string> only_author{"alice"};
  std::vector<Submission> one{{"s", "alice"}};
  EXPECT_EQ(qc_select(one, 1.0, only_author, 0).warnings.size(), 1u);
  EXPECT_THROW(qc_select(one, 0.0, only_author, 0), std::invalid_argument);
  EXPECT_THROW(qc_select(one, 1.5, only_author, 0), std::invalid_argument);
}

TEST(Qc, ServiceQueue) {
  auto svcp = make_service(std::make_shared<gateway::SyntheticCritic>());
  auto& svc = *svcp;
  for (int i = 0; i < 3; ++i) svc.add_critique_task(make_task("k" + std::to_string(i), kAnswer), false);
  for (int i = 0; i < 3; ++i) {
    auto l = svc.next_task("alice", TaskKind::critique)->lease;
    svc.submit_critique("alice", l.lease_id, parse_critique("```\ntotal = 0\n```\nx" + std::to_string(i)).critique);
  }
  auto q = svc.qc_queue(1.0);
  ASSERT_EQ(q.queue.size(), 3u);
  for (const auto& a : q.queue) EXPECT_EQ(a.reviewer_id, "bob");
  EXPECT_EQ(code_of([&] { svc.qc_queue(0.0); }), ErrorCode::validation_failed);
}

TEST(Json, CritiqueShapes) {
  auto c = critique_from_json({{"text", "```\na\n```\nb"}});
  EXPECT_EQ(c.comments[0].body, "b");
  auto d = critique_from_json({{"preamble", "p"}, {"comments", {{{"quote", "a"}, {"comment", "b"}}}}});
  EXPECT_EQ(serialize_critique(d), "p\n\n```\na\n```\n\nb");
  EXPECT_THROW(critique_from_json(nlohmann::json::array()), std::invalid_argument);
  auto j = critique_to_json(anchor_quotes(d, "xa").critique);
  EXPECT_EQ(j["comments"][0]["span"], nlohmann::json::array({1, 2}));
}
