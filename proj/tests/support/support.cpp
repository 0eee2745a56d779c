#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace testsupport {

std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("critkit-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string random_answer(Rng& rng, std::size_t lines) {
  static const char* names[] = {"total", "items", "count", "value", "result", "index", "key", "row"};
  static const char* ops[] = {"+", "-", "*", "//", "%"};
  std::string out = "def f" + std::to_string(rng.below(1000)) + "(items):\n";
  for (std::size_t i = 0; i < lines; ++i) {
    out += "    ";
    out += names[rng.below(std::size(names))];
    out += "_" + std::to_string(i) + " = ";
    out += names[rng.below(std::size(names))];
    out += " ";
    out += ops[rng.below(std::size(ops))];
    out += " " + std::to_string(rng.below(100)) + "\n";
  }
  out += "    return total";
  return out;
}

QATask make_task(const std::string& id, const std::string& answer) {
  QATask t;
  t.id = id;
  t.question = "Write a function for task " + id + ".";
  t.answer = answer;
  t.full_response = "```python\n" + answer + "\n```";
  t.language_fraction = 1.0;
  return t;
}

gateway::Generation RecordingGenerator::do_generate(const gateway::GenerationRequest& req) {
  auto g = inner_.generate(req);
  std::lock_guard lock(mu_);
  table_[gateway::ScriptedGenerator::key_for(req.sample_seed, req.critique_prefix)] =
      {req.sample_seed, req.critique_prefix, g};
  return g;
}

std::map<gateway::ScriptedGenerator::Key, gateway::Generation> RecordingGenerator::table() const {
  std::lock_guard lock(mu_);
  std::map<gateway::ScriptedGenerator::Key, gateway::Generation> out;
  for (const auto& [k, e] : table_) out[k] = e.generation;
  return out;
}

std::vector<ScriptEntry> RecordingGenerator::entries() const {
  std::lock_guard lock(mu_);
  std::vector<ScriptEntry> out;
  for (const auto& [_, e] : table_) out.push_back(e);
  return out;
}

void write_script(const std::string& path, const std::vector<ScriptEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& e : entries) {
    nlohmann::json j = {{"seed", e.seed},
                        {"prefix", e.prefix},
                        {"text", e.generation.text},
                        {"end_of_sequence", e.generation.end_of_sequence}};
    out << j.dump() << '\n';
  }
}

ScriptedFixture make_scripted_fixture(std::uint64_t index, const std::string& dir) {
  Rng rng(mix_seed(0x5c417ed, index));
  ScriptedFixture fx;
  fx.task = make_task("scripted-" + std::to_string(index), random_answer(rng, 4 + rng.below(8)));
  fx.cfg.n = 2 + rng.below(4);
  fx.cfg.k = 1 + rng.below(fx.cfg.n);
  fx.cfg.d = 2 + rng.below(3);
  fx.cfg.seed = rng();
  fx.scorer_salt = rng();
  fx.length_penalty = static_cast<double>(rng.below(150)) / 100.0;
  gateway::SyntheticCriticOptions opts;
  opts.hallucination_rate = rng.uniform() * 0.5;
  opts.extra_highlight_rate = rng.uniform() * 0.8;
  gateway::SyntheticCritic critic(4, opts);
  RecordingGenerator rec(critic);
  NoisyScorer scorer(fx.scorer_salt, fx.length_penalty);
  fsbs::run_fsbs(fx.task, fx.cfg, rec, scorer);
  fx.script_path = dir + "/scripted_" + std::to_string(index) + ".jsonl";
  write_script(fx.script_path, rec.entries());
  return fx;
}

gateway::Generation FailingGenerator::do_generate(const gateway::GenerationRequest& req) {
  ++attempts;
  throw gateway::GatewayError(kind_, req.request_id, "injected failure");
}

gateway::Generation QueueGenerator::do_generate(const gateway::GenerationRequest&) {
  const auto& t = texts_[next_ % texts_.size()];
  ++next_;
  return {t, true};
}

double NoisyScorer::do_score(const gateway::RewardRequest& req) {
  auto h = mix_seed(salt_, fnv1a64(req.critique));
  double noise = static_cast<double>(h % 801) / 100.0 - 4.0;
  auto n = num_highlights(parse_critique(req.critique).critique);
  return std::round((noise - length_penalty_ * static_cast<double>(n)) * 100.0) / 100.0;
}

const fsbs::ScoredCritique& argmax_at(const std::vector<fsbs::ScoredCritique>& cands, double m) {
  const fsbs::ScoredCritique* best = nullptr;
  for (const auto& c : cands) {
    if (!best) {
      best = &c;
      continue;
    }
    double vc = c.rm_score + m * static_cast<double>(c.num_highlights);
    double vb = best->rm_score + m * static_cast<double>(best->num_highlights);
    bool better = vc > vb ||
                  (vc == vb && (c.rm_score > best->rm_score ||
                                (c.rm_score == best->rm_score &&
                                 (c.round < best->round ||
                                  (c.round == best->round && c.index < best->index)))));
    if (better) best = &c;
  }
  return *best;
}

std::size_t scalarization_oracle(const std::vector<fsbs::ScoredCritique>& cands, std::size_t target) {
  if (argmax_at(cands, 0.0).num_highlights >= target) return argmax_at(cands, 0.0).index;
  std::vector<double> breaks{0.0};
  for (const auto& a : cands) {
    for (const auto& b : cands) {
      if (a.num_highlights <= b.num_highlights) continue;
      double m = (b.rm_score - a.rm_score) /
                 static_cast<double>(a.num_highlights - b.num_highlights);
      if (m > 0) breaks.push_back(m);
    }
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    double mid = i + 1 < breaks.size() ? (breaks[i] + breaks[i + 1]) / 2 : breaks[i] * 2 + 1;
    const auto& c = argmax_at(cands, mid);
    if (c.num_highlights >= target) return c.index;
  }
  auto [lo, hi] = std::minmax_element(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    return a.rm_score < b.rm_score;
  });
  return argmax_at(cands, hi->rm_score - lo->rm_score + 1).index;
}

std::size_t nearest_rank(const std::vector<fsbs::ScoredCritique>& cands, double percentile) {
  // Smallest length L such that at least percentile% of candidates have length <= L.
  std::size_t max_len = 0;
  for (const auto& c : cands) max_len = std::max(max_len, c.num_highlights);
  for (std::size_t len = 0; len <= max_len; ++len) {
    std::size_t at_most = 0;
    for (const auto& c : cands) at_most += c.num_highlights <= len;
    if (static_cast<double>(at_most) * 100.0 >= percentile * static_cast<double>(cands.size()) &&
        at_most > 0) {
      return len;
    }
  }
  return max_len;
}

RatingForm form(int overall, std::vector<int> cbi, int comprehensiveness, int nitpick,
                int fake_problem, int conciseness, const std::string& rater) {
  RatingForm f;
  f.cbi = std::move(cbi);
  f.comprehensiveness = comprehensiveness;
  f.nitpick = nitpick;
  f.fake_problem = fake_problem;
  f.conciseness = conciseness;
  f.overall = overall;
  f.rationale = "rated";
  f.rater_id = rater;
  return f;
}

std::vector<analytics::PairwisePreference> sample_preferences(
    const std::map<std::string, double>& ratings, std::size_t count, std::uint64_t seed) {
  std::vector<std::string> names;
  for (const auto& [n, _] : ratings) names.push_back(n);
  Rng rng(seed);
  std::vector<analytics::PairwisePreference> out;
  while (out.size() < count) {
    auto i = rng.below(names.size());
    auto j = rng.below(names.size());
    if (i == j) continue;
    double p = analytics::win_prob(ratings.at(names[i]), ratings.at(names[j]));
    out.push_back({names[i], names[j],
                   rng.bernoulli(p) ? analytics::Outcome::a_wins : analytics::Outcome::b_wins,
                   Attribute::overall});
  }
  return out;
}

std::vector<analytics::PairwisePreference> winrate_fixture(const std::string& a, const std::string& b,
                                                           std::size_t wins, std::size_t losses,
                                                           std::size_t ties) {
  std::vector<analytics::PairwisePreference> out;
  for (std::size_t i = 0; i < wins; ++i) out.push_back({a, b, analytics::Outcome::a_wins, Attribute::overall});
  for (std::size_t i = 0; i < losses; ++i) out.push_back({a, b, analytics::Outcome::b_wins, Attribute::overall});
  for (std::size_t i = 0; i < ties; ++i) out.push_back({a, b, analytics::Outcome::tie, Attribute::overall});
  return out;
}

}  // namespace testsupport
