#include "critkit/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "critkit/random.hpp"

namespace critkit::datasets {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      out.push_back(text.substr(pos));
      break;
    }
    out.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool starts_with_word(std::string_view line, std::string_view word) {
  return line.starts_with(word) &&
         (line.size() == word.size() || !std::isalnum(static_cast<unsigned char>(line[word.size()])));
}

}  // namespace

std::vector<CodeBlock> extract_code_blocks(std::string_view response) {
  std::vector<CodeBlock> blocks;
  std::vector<std::string_view> content;
  bool open = false;
  CodeBlock current;
  auto finish = [&](bool closed) {
    current.closed = closed;
    current.line_count = content.size();
    current.nonblank_line_count = static_cast<std::size_t>(
        std::count_if(content.begin(), content.end(), [](auto l) { return !trim(l).empty(); }));
    for (std::size_t i = 0; i < content.size(); ++i) {
      if (i) current.content += '\n';
      current.content += content[i];
    }
    blocks.push_back(std::move(current));
    current = {};
    content.clear();
  };
  for (auto line : lines_of(response)) {
    if (is_fence_line(line)) {
      if (open) {
        finish(true);
        open = false;
      } else {
        current.info = lower(trim(trim(line).substr(kFence.size())));
        open = true;
      }
      continue;
    }
    if (open) content.push_back(line);
  }
  if (open) finish(false);
  return blocks;
}

bool looks_like_python(const CodeBlock& block) {
  if (!block.info.empty()) {
    static const std::set<std::string, std::less<>> python_tags{"python", "py", "python3", "py3"};
    auto tag = std::string_view(block.info).substr(0, block.info.find_first_of(" \t{"));
    return python_tags.contains(tag);
  }
  int signals = 0;
  int against = 0;
  for (auto raw : lines_of(block.content)) {
    auto line = trim(raw);
    if (line.empty() || line.starts_with("#!")) continue;
    if (starts_with_word(line, "def") || starts_with_word(line, "class") ||
        starts_with_word(line, "import") || starts_with_word(line, "elif") ||
        (starts_with_word(line, "from") && line.find(" import ") != std::string_view::npos) ||
        line.starts_with("print(") || line.starts_with("self.")) {
      ++signals;
    } else if (line.back() == ':' &&
               (starts_with_word(line, "if") || starts_with_word(line, "for") ||
                starts_with_word(line, "while") || starts_with_word(line, "with") ||
                starts_with_word(line, "try") || starts_with_word(line, "except") ||
                starts_with_word(line, "else") || starts_with_word(line, "finally"))) {
      ++signals;
    }
    if (line.back() == ';' || line.back() == '{' || line.front() == '}' ||
        starts_with_word(line, "function") || starts_with_word(line, "const") ||
        starts_with_word(line, "let") || starts_with_word(line, "var") ||
        line.starts_with("#include") || starts_with_word(line, "public")) {
      ++against;
    }
  }
  return signals > 0 && signals > against;
}

double python_line_fraction(std::string_view response) {
  std::size_t nonblank = 0;
  for (auto line : lines_of(response)) {
    if (!trim(line).empty()) ++nonblank;
  }
  if (nonblank == 0) return 0.0;
  std::size_t python = 0;
  for (const auto& b : extract_code_blocks(response)) {
    if (looks_like_python(b)) python += b.nonblank_line_count;
  }
  return static_cast<double>(python) / static_cast<double>(nonblank);
}

std::string task_id_for(std::string_view question, std::string_view response) {
  auto h = fnv1a64(response, fnv1a64("\x1f", fnv1a64(question)));
  return "qa-" + to_hex(h);
}

IngestResult ingest_responses(std::span<const RawResponse> responses, Distribution distribution) {
  IngestResult out;
  for (const auto& r : responses) {
    ++out.counts.total;
    auto blocks = extract_code_blocks(r.response);
    if (blocks.empty()) {
      ++out.counts.no_code_block;
      continue;
    }
    double fraction = python_line_fraction(r.response);
    if (fraction < kMinPythonFraction) {
      ++out.counts.below_threshold;
      continue;
    }
    const CodeBlock* largest = &blocks.front();
    for (const auto& b : blocks) {
      if (b.line_count > largest->line_count) largest = &b;
    }
    QATask task;
    task.id = task_id_for(r.question, r.response);
    task.question = r.question;
    task.answer = largest->content;
    task.full_response = r.response;
    task.distribution = distribution;
    task.language_fraction = fraction;
    task.metadata = r.metadata;
    out.tasks.push_back(std::move(task));
    ++out.counts.kept;
  }
  return out;
}

std::vector<std::string> validate_tamper(const TamperRecord& t) {
  std::vector<std::string> errors;
  if (t.task_id.empty()) errors.push_back("task_id: missing");
  if (t.bugs.empty()) errors.push_back("bugs: at least one bug required");
  for (std::size_t i = 0; i < t.bugs.size(); ++i) {
    const auto& b = t.bugs[i];
    auto path = "bugs[" + std::to_string(i) + "].";
    if (trim(b.description).empty()) errors.push_back(path + "description: missing");
    if (b.severity < 1 || b.severity > 7) errors.push_back(path + "severity: out of range 1-7");
    if (b.span.start >= b.span.end || b.span.end > t.tampered_answer.size()) {
      errors.push_back(path + "span: out of bounds");
    }
  }
  return errors;
}

GoldCritique build_gold_critique(const TamperRecord& t) {
  GoldCritique gold;
  gold.tamper_id = t.id;
  gold.critique.source_id = std::string(kGoldSource);
  for (std::size_t i = 0; i < t.bugs.size(); ++i) {
    const auto& b = t.bugs[i];
    if (b.span.start >= b.span.end || b.span.end > t.tampered_answer.size()) {
      throw DatasetError("tamper " + t.id + ": bug " + std::to_string(i) + " span out of bounds");
    }
    CritiqueComment c;
    c.quote = t.tampered_answer.substr(b.span.start, b.span.length());
    c.body = std::string(trim(b.description));
    c.anchor = b.span;
    c.anchor_kind = AnchorKind::exact;
    gold.critique.comments.push_back(std::move(c));
  }
  return gold;
}

ComparisonSkeleton assemble_comparison(const QATask& task, std::vector<CandidateCritique> critiques,
                                       std::vector<std::string> reference_bugs,
                                       std::uint64_t seed) {
  if (critiques.size() != kCritiquesPerComparison) {
    throw DatasetError("a comparison needs exactly 4 critiques, got " +
                       std::to_string(critiques.size()));
  }
  std::set<std::string> ids, sources;
  for (const auto& c : critiques) {
    if (!ids.insert(c.critique_id).second) {
      throw DatasetError("duplicate critique id " + c.critique_id);
    }
    sources.insert(c.source_id);
  }
  if (sources.size() < 2) throw DatasetError("a comparison needs critiques from >= 2 sources");

  ComparisonSkeleton s;
  s.task_id = task.id;
  s.question = task.question;
  s.answer = task.answer;
  s.critiques = std::move(critiques);
  s.reference_bugs = std::move(reference_bugs);
  s.blind_order = {0, 1, 2, 3};
  Rng rng(mix_seed(seed, fnv1a64(task.id)));
  rng.shuffle(s.blind_order);
  return s;
}

nlohmann::json ComparisonSkeleton::display_payload() const {
  nlohmann::json critiques_json = nlohmann::json::array();
  for (std::size_t pos = 0; pos < blind_order.size(); ++pos) {
    const auto& c = critiques[blind_order[pos]];
    auto anchored = anchor_quotes(c.critique, answer);
    nlohmann::json highlights = nlohmann::json::array();
    for (const auto& cm : anchored.critique.comments) {
      nlohmann::json h = {{"quote", cm.quote}, {"comment", cm.body}};
      if (cm.anchor) h["span"] = {cm.anchor->start, cm.anchor->end};
      highlights.push_back(std::move(h));
    }
    Critique shown = c.critique;
    shown.source_id.clear();
    critiques_json.push_back({{"position", pos},
                              {"text", serialize_critique(shown)},
                              {"highlights", std::move(highlights)}});
  }
  return {{"task_id", task_id},
          {"question", question},
          {"answer", answer},
          {"reference_bugs", reference_bugs},
          {"critiques", std::move(critiques_json)}};
}

PrioritizeResult prioritize_flawless(std::span<const QATask> tasks, gateway::Generator& critic,
                                     gateway::Scorer& scorer, std::size_t budget,
                                     std::uint64_t seed) {
  PrioritizeResult out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    try {
      gateway::GenerationRequest req;
      req.question = t.question;
      req.answer = t.answer;
      req.sample_seed = mix_seed(seed, fnv1a64(t.id));
      auto gen = critic.generate(req);
      auto critique = parse_critique(gen.text).critique;
      auto highlights = num_highlights(critique);
      if (highlights == 0) continue;
      double score = scorer.score({"", t.question, t.answer, gen.text});
      out.queue.push_back({t.id, score, highlights, gen.text});
    } catch (const gateway::GatewayError& e) {
      out.warnings.push_back("task " + t.id + " skipped: " + e.what());
    }
  }
  std::stable_sort(out.queue.begin(), out.queue.end(),
                   [](const auto& a, const auto& b) { return a.rm_score > b.rm_score; });
  if (out.queue.size() > budget) out.queue.resize(budget);
  return out;
}

}  // namespace critkit::datasets
