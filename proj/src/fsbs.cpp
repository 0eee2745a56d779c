#include "critkit/fsbs.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "critkit/random.hpp"

namespace critkit::fsbs {

using nlohmann::json;

void FsbsConfig::validate() const {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (k < 1 || k > n) throw std::invalid_argument("k must satisfy 1 <= k <= n");
  if (d < 1) throw std::invalid_argument("d must be >= 1");
  if (max_continuation == 0) throw std::invalid_argument("max_continuation must be > 0");
  if (!(temperature >= 0)) throw std::invalid_argument("temperature must be >= 0");
  if (length_percentiles.empty()) throw std::invalid_argument("length_percentiles is empty");
  for (double p : length_percentiles) {
    if (!(p > 0 && p < 100)) throw std::invalid_argument("length_percentiles must lie in (0, 100)");
  }
  if (std::find(length_percentiles.begin(), length_percentiles.end(), selection_percentile) ==
      length_percentiles.end()) {
    throw std::invalid_argument("selection_percentile must be one of length_percentiles");
  }
}

FsbsConfig config_from_json(const json& j) {
  static const char* const known[] = {"n", "k", "d", "length_percentiles", "selection_percentile",
                                      "seed", "max_continuation", "temperature"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known)) {
      throw std::invalid_argument("fsbs." + key + ": unknown key");
    }
  }
  FsbsConfig cfg;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw std::invalid_argument(std::string("fsbs.") + key + ": wrong type");
    }
  };
  read("n", cfg.n);
  read("k", cfg.k);
  read("d", cfg.d);
  read("length_percentiles", cfg.length_percentiles);
  read("selection_percentile", cfg.selection_percentile);
  read("seed", cfg.seed);
  read("max_continuation", cfg.max_continuation);
  read("temperature", cfg.temperature);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("fsbs: ") + e.what());
  }
  return cfg;
}

json config_to_json(const FsbsConfig& cfg) {
  return {{"n", cfg.n},
          {"k", cfg.k},
          {"d", cfg.d},
          {"length_percentiles", cfg.length_percentiles},
          {"selection_percentile", cfg.selection_percentile},
          {"seed", cfg.seed},
          {"max_continuation", cfg.max_continuation},
          {"temperature", cfg.temperature}};
}

const Selection* FsbsResult::selection_at(double percentile) const {
  for (const auto& s : selected) {
    if (s.percentile == percentile) return &s;
  }
  return nullptr;
}

namespace {

bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; });
}

void rtrim(std::string& s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
}

}  // namespace

std::string prepare_continuation(std::string_view raw_text) {
  std::string text(raw_text);
  rtrim(text);
  const std::string marker(gateway::kEndOfSequenceMarker);
  if (text.ends_with(marker)) {
    text.erase(text.size() - marker.size());
    rtrim(text);
  }

  // Offset where the final paragraph starts, ignoring blank lines that sit
  // inside an open highlight.
  std::size_t para_start = 0;
  bool in_quote = false;
  bool para_has_fence = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto end = nl == std::string::npos ? text.size() : nl;
    std::string_view line(text.data() + pos, end - pos);
    if (is_fence_line(line)) {
      in_quote = !in_quote;
      para_has_fence = true;
    } else if (!in_quote && blank(line)) {
      para_start = end + (nl == std::string::npos ? 0 : 1);
      para_has_fence = false;
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  if (!para_has_fence) {
    text.erase(para_start);
    rtrim(text);
  }
  if (!text.empty()) text += "\n\n";
  text += kFence;
  return text;
}

bool preferred(const ScoredCritique& a, const ScoredCritique& b, double modifier) {
  const double va = a.rm_score + modifier * static_cast<double>(a.num_highlights);
  const double vb = b.rm_score + modifier * static_cast<double>(b.num_highlights);
  if (va != vb) return va > vb;
  if (a.rm_score != b.rm_score) return a.rm_score > b.rm_score;
  if (a.round != b.round) return a.round < b.round;
  return a.index < b.index;
}

const ScoredCritique& select_by_modifier(std::span<const ScoredCritique> candidates,
                                         double modifier) {
  if (candidates.empty()) throw std::invalid_argument("select_by_modifier: no candidates");
  const ScoredCritique* best = &candidates.front();
  for (const auto& c : candidates.subspan(1)) {
    if (preferred(c, *best, modifier)) best = &c;
  }
  return *best;
}

std::size_t target_length(std::span<const ScoredCritique> candidates, double percentile) {
  if (candidates.empty()) throw std::invalid_argument("target_length: no candidates");
  std::vector<std::size_t> lengths;
  lengths.reserve(candidates.size());
  for (const auto& c : candidates) lengths.push_back(c.num_highlights);
  std::sort(lengths.begin(), lengths.end());
  auto rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(lengths.size())));
  rank = std::clamp<std::size_t>(rank, 1, lengths.size());
  return lengths[rank - 1];
}

Calibration calibrate_to_length(std::span<const ScoredCritique> candidates, std::size_t target) {
  if (candidates.empty()) throw std::invalid_argument("calibrate: no candidates");
  Calibration out{target, 0.0, true};
  auto reaches = [&](double m) { return select_by_modifier(candidates, m).num_highlights >= target; };
  if (reaches(0.0)) return out;

  auto [lo_it, hi_it] = std::minmax_element(
      candidates.begin(), candidates.end(),
      [](const auto& a, const auto& b) { return a.rm_score < b.rm_score; });
  double lo = 0.0;
  double hi = (hi_it->rm_score - lo_it->rm_score) + 1.0;
  if (!reaches(hi)) {
    out.modifier = hi;
    out.reachable = false;
    return out;
  }
  while (hi - lo > kModifierResolution) {
    double mid = lo + (hi - lo) / 2;
    if (reaches(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  out.modifier = hi;
  return out;
}

Calibration calibrate_modifier(std::span<const ScoredCritique> candidates, double percentile) {
  return calibrate_to_length(candidates, target_length(candidates, percentile));
}

namespace {

std::uint64_t sample_seed(std::uint64_t base, std::size_t round, std::size_t beam,
                          std::size_t sample) {
  return mix_seed(mix_seed(mix_seed(base, round), beam), sample);
}

std::string strip_marker(std::string text) {
  const std::string marker(gateway::kEndOfSequenceMarker);
  auto t = text;
  rtrim(t);
  if (t.ends_with(marker)) {
    t.erase(t.size() - marker.size());
    return t;
  }
  return text;
}

}  // namespace

FsbsResult run_fsbs(const QATask& task, const FsbsConfig& cfg, gateway::Generator& generator,
                    gateway::Scorer& scorer) {
  cfg.validate();
  if (task.question.empty() || task.answer.empty()) {
    throw FsbsError("task " + task.id + " needs a non-empty question and answer");
  }

  FsbsResult result;
  result.task_id = task.id;
  std::vector<std::size_t> beams;  // candidate indices surviving the last round

  for (std::size_t round = 1; round <= cfg.d; ++round) {
    struct Pending {
      std::optional<std::size_t> parent;
      std::string prefix;
    };
    std::vector<Pending> pending;
    std::vector<gateway::GenerationRequest> requests;

    const std::size_t parents = round == 1 ? 1 : beams.size();
    for (std::size_t b = 0; b < parents; ++b) {
      Pending p;
      if (round == 1) {
        p.prefix = std::string(kFence);
      } else {
        p.parent = beams[b];
        p.prefix = prepare_continuation(result.candidates[beams[b]].raw_text);
      }
      for (std::size_t j = 0; j < cfg.n; ++j) {
        gateway::GenerationRequest req;
        req.question = task.question;
        req.answer = task.answer;
        req.critique_prefix = p.prefix;
        req.max_continuation = cfg.max_continuation;
        req.sample_seed = sample_seed(cfg.seed, round, b, j);
        req.temperature = cfg.temperature;
        requests.push_back(std::move(req));
        pending.push_back(p);
      }
    }

    auto generations = gateway::generate_batch(requests, generator);

    std::vector<std::size_t> ok;
    std::vector<gateway::RewardRequest> score_reqs;
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < generations.size(); ++i) {
      if (!generations[i].ok()) {
        result.warnings.push_back("round " + std::to_string(round) + ": generation failed: " +
                                  generations[i].error->what());
        continue;
      }
      auto text = strip_marker(pending[i].prefix + generations[i].value->text);
      score_reqs.push_back({"", task.question, task.answer, text});
      texts.push_back(std::move(text));
      ok.push_back(i);
    }
    if (ok.empty()) {
      result.error = "round " + std::to_string(round) + ": all generations failed";
      return result;
    }

    auto scores = gateway::score_batch(score_reqs, scorer);
    std::vector<std::size_t> fresh;
    for (std::size_t s = 0; s < scores.size(); ++s) {
      if (!scores[s].ok()) {
        result.warnings.push_back("round " + std::to_string(round) + ": scoring failed: " +
                                  scores[s].error->what());
        continue;
      }
      const auto i = ok[s];
      ScoredCritique c;
      c.index = result.candidates.size();
      c.critique = parse_critique(texts[s]).critique;
      c.raw_text = std::move(texts[s]);
      c.rm_score = *scores[s].value;
      c.num_highlights = num_highlights(c.critique);
      c.round = round;
      c.parent = pending[i].parent;
      c.char_length = c.raw_text.size();
      c.end_of_sequence = generations[i].value->end_of_sequence;
      fresh.push_back(c.index);
      result.candidates.push_back(std::move(c));
    }
    if (fresh.empty()) {
      result.error = "round " + std::to_string(round) + ": all scoring calls failed";
      return result;
    }

    // Pooled top-k over this round's children.
    std::stable_sort(fresh.begin(), fresh.end(), [&](std::size_t a, std::size_t b) {
      return result.candidates[a].rm_score > result.candidates[b].rm_score;
    });
    fresh.resize(std::min(fresh.size(), cfg.k));
    beams = std::move(fresh);
  }

  for (double pct : cfg.length_percentiles) {
    auto cal = calibrate_modifier(result.candidates, pct);
    const auto& chosen = select_by_modifier(result.candidates, cal.modifier);
    if (!cal.reachable) {
      result.warnings.push_back("percentile " + std::to_string(pct) +
                                ": target length unreachable, selected the longest candidate");
    }
    result.selected.push_back({pct, cal.target_length, cal.modifier, chosen.index, cal.reachable});
  }
  return result;
}

void write_result(std::ostream& out, const FsbsResult& result) {
  for (const auto& c : result.candidates) {
    json j = {{"record", "candidate"},
              {"version", 1},
              {"task_id", result.task_id},
              {"index", c.index},
              {"round", c.round},
              {"parent", c.parent ? json(*c.parent) : json(nullptr)},
              {"rm_score", c.rm_score},
              {"num_highlights", c.num_highlights},
              {"char_length", c.char_length},
              {"end_of_sequence", c.end_of_sequence},
              {"raw_text", c.raw_text}};
    out << j.dump() << '\n';
  }
  json sel = json::array();
  for (const auto& s : result.selected) {
    sel.push_back({{"percentile", s.percentile},
                   {"target_length", s.target_length},
                   {"modifier", s.modifier},
                   {"candidate", s.candidate},
                   {"reachable", s.reachable}});
  }
  json footer = {{"record", "selection"},
                 {"version", 1},
                 {"task_id", result.task_id},
                 {"candidate_count", result.candidates.size()},
                 {"selected", sel},
                 {"warnings", result.warnings},
                 {"error", result.error ? json(*result.error) : json(nullptr)}};
  out << footer.dump() << '\n';
}

FsbsResult read_result(std::istream& in) {
  FsbsResult result;
  std::string line;
  bool footer = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported record version");
    result.task_id = j.at("task_id").get<std::string>();
    if (j.at("record") == "candidate") {
      ScoredCritique c;
      c.index = j.at("index");
      c.round = j.at("round");
      if (!j.at("parent").is_null()) c.parent = j.at("parent").get<std::size_t>();
      c.rm_score = j.at("rm_score");
      c.raw_text = j.at("raw_text");
      c.critique = parse_critique(c.raw_text).critique;
      c.num_highlights = j.at("num_highlights");
      c.char_length = j.at("char_length");
      c.end_of_sequence = j.at("end_of_sequence");
      result.candidates.push_back(std::move(c));
    } else if (j.at("record") == "selection") {
      footer = true;
      for (const auto& s : j.at("selected")) {
        result.selected.push_back({s.at("percentile"), s.at("target_length"), s.at("modifier"),
                                   s.at("candidate"), s.at("reachable")});
      }
      result.warnings = j.at("warnings").get<std::vector<std::string>>();
      if (!j.at("error").is_null()) result.error = j.at("error").get<std::string>();
    }
  }
  if (!footer) throw std::runtime_error("result file has no selection footer");
  return result;
}

}  // namespace critkit::fsbs
