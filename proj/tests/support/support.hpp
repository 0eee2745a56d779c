#pragma once

// Shared fixtures and brute-force oracles for the test binaries.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "critkit/analytics.hpp"
#include "critkit/forms.hpp"
#include "critkit/fsbs.hpp"
#include "critkit/gateway.hpp"
#include "critkit/random.hpp"
#include "critkit/task.hpp"

namespace testsupport {

using namespace critkit;

inline std::string fixture(const std::string& name) { return std::string(CRITKIT_FIXTURES) + "/" + name; }

/// A fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& tag);

/// Random Python-looking answer with `lines` distinct lines.
std::string random_answer(Rng& rng, std::size_t lines);
QATask make_task(const std::string& id, const std::string& answer);

struct ScriptEntry {
  std::uint64_t seed = 0;
  std::string prefix;
  gateway::Generation generation;
};

/// Records every (seed, prefix) -> generation it forwards.
class RecordingGenerator : public gateway::Generator {
 public:
  explicit RecordingGenerator(gateway::Generator& inner) : Generator(4), inner_(inner) {}
  std::map<gateway::ScriptedGenerator::Key, gateway::Generation> table() const;
  std::vector<ScriptEntry> entries() const;

 protected:
  gateway::Generation do_generate(const gateway::GenerationRequest& req) override;

 private:
  gateway::Generator& inner_;
  mutable std::mutex mu_;
  std::map<gateway::ScriptedGenerator::Key, ScriptEntry> table_;
};

/// Writes entries in the mock:scripted: file format.
void write_script(const std::string& path, const std::vector<ScriptEntry>& entries);

/// A recorded FSBS run: the task, the configuration and the scripted table
/// file that replays it, plus the scorer that goes with it.
struct ScriptedFixture {
  QATask task;
  fsbs::FsbsConfig cfg;
  std::string script_path;
  std::uint64_t scorer_salt = 0;
  double length_penalty = 0;
};

ScriptedFixture make_scripted_fixture(std::uint64_t index, const std::string& dir);

/// Always fails with the given error kind; counts attempts.
class FailingGenerator : public gateway::Generator {
 public:
  explicit FailingGenerator(gateway::ErrorKind kind, gateway::RetryPolicy retry = {0, std::chrono::milliseconds(0)})
      : Generator(4, retry), kind_(kind) {}
  std::atomic<int> attempts{0};

 protected:
  gateway::Generation do_generate(const gateway::GenerationRequest& req) override;

 private:
  gateway::ErrorKind kind_;
};

/// Returns queued texts in call order (cycling), ignoring the request.
class QueueGenerator : public gateway::Generator {
 public:
  explicit QueueGenerator(std::vector<std::string> texts) : Generator(1), texts_(std::move(texts)) {}
  std::size_t calls() const { return next_; }

 protected:
  gateway::Generation do_generate(const gateway::GenerationRequest& req) override;

 private:
  std::vector<std::string> texts_;
  std::size_t next_ = 0;
};

/// Reward drawn from a hash of the critique text minus `length_penalty` per
/// highlight, rounded to 0.01.
class NoisyScorer : public gateway::Scorer {
 public:
  explicit NoisyScorer(std::uint64_t salt = 0, double length_penalty = 0.0)
      : Scorer(4), salt_(salt), length_penalty_(length_penalty) {}

 protected:
  double do_score(const gateway::RewardRequest& req) override;

 private:
  std::uint64_t salt_;
  double length_penalty_;
};

/// Argmax of rm_score + m * num_highlights with the documented tie rule,
/// evaluated directly.
const fsbs::ScoredCritique& argmax_at(const std::vector<fsbs::ScoredCritique>& cands, double m);

/// Exhaustive scalarization oracle: walks every interval between pairwise
/// breakpoints of the scalarized scores and returns the index selected at
/// the lowest modifier whose argmax reaches `target` highlights.
std::size_t scalarization_oracle(const std::vector<fsbs::ScoredCritique>& cands, std::size_t target);

/// Nearest-rank percentile, computed by counting.
std::size_t nearest_rank(const std::vector<fsbs::ScoredCritique>& cands, double percentile);

/// A fully answered rating form.
RatingForm form(int overall, std::vector<int> cbi = {5}, int comprehensiveness = 5, int nitpick = 2,
                int fake_problem = 2, int conciseness = 5, const std::string& rater = "r1");

/// Preferences sampled from true Elo ratings; each pair drawn uniformly.
std::vector<analytics::PairwisePreference> sample_preferences(
    const std::map<std::string, double>& ratings, std::size_t count, std::uint64_t seed);

std::vector<analytics::PairwisePreference> winrate_fixture(const std::string& a, const std::string& b,
                                                           std::size_t wins, std::size_t losses,
                                                           std::size_t ties = 0);

}  // namespace testsupport
