// critkit: batch critique generation, analytics, ingestion and the
// annotation server.
//
// Exit codes: 0 success, 1 validation error, 2 backend failure.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "critkit/analytics.hpp"
#include "critkit/config.hpp"
#include "critkit/datasets.hpp"
#include "critkit/fileio.hpp"
#include "critkit/fsbs.hpp"
#include "critkit/http_api.hpp"
#include "critkit/records.hpp"
#include "critkit/service.hpp"

namespace {

using namespace critkit;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kBackend = 2;

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
};

struct FsbsFlags {
  std::optional<std::size_t> n, k, d;
  std::vector<double> percentiles;
};

config::AppConfig load(const Common& c) {
  auto cfg = c.config.empty() ? config::default_config() : config::load_config(c.config);
  config::apply_env(cfg, [](const char* name) { return std::getenv(name); });
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.fsbs.seed = *c.seed;
    cfg.service.seed = *c.seed;
  }
  if (c.jobs) cfg.jobs = c.jobs;
  return cfg;
}

void apply(const FsbsFlags& f, fsbs::FsbsConfig& cfg) {
  if (f.n) cfg.n = *f.n;
  if (f.k) cfg.k = *f.k;
  if (f.d) cfg.d = *f.d;
  if (!f.percentiles.empty()) {
    cfg.length_percentiles = f.percentiles;
    if (f.percentiles.size() == 1) cfg.selection_percentile = f.percentiles.front();
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationFailure(std::string("fsbs: ") + e.what());
  }
}

std::vector<QATask> load_tasks(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ValidationFailure(path + ": no such file");
  auto loaded = records::load_file<QATask>(path);
  if (!loaded.errors.empty()) {
    std::ostringstream msg;
    for (const auto& e : loaded.errors) msg << path << ":" << e.line << ": " << e.message << "\n";
    throw ValidationFailure(msg.str());
  }
  if (loaded.records.empty()) throw ValidationFailure(path + ": no tasks");
  return loaded.records;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string selection_id(const std::string& task_id, double percentile) {
  return task_id + "/p" + format_number(percentile);
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) fn(i);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(jobs, count); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

struct Backends {
  std::unique_ptr<gateway::Generator> critic;
  std::unique_ptr<gateway::Scorer> scorer;
};

Backends make_backends(const config::AppConfig& cfg) {
  try {
    return {gateway::make_generator(cfg.critic), gateway::make_scorer(cfg.scorer)};
  } catch (const gateway::GatewayError& e) {
    throw ValidationFailure(std::string("backend configuration: ") + e.what());
  }
}

std::vector<fsbs::FsbsResult> run_all(const std::vector<QATask>& tasks,
                                      const config::AppConfig& cfg, Backends& b) {
  std::vector<fsbs::FsbsResult> results(tasks.size());
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    try {
      results[i] = fsbs::run_fsbs(tasks[i], cfg.fsbs, *b.critic, *b.scorer);
    } catch (const std::exception& e) {
      results[i].task_id = tasks[i].id;
      results[i].error = e.what();
    }
  });
  return results;
}

// --- critique ------------------------------------------------------------

int cmd_critique(const Common& common, const FsbsFlags& flags, const std::string& tasks_path,
                 const std::string& out_dir) {
  auto cfg = load(common);
  apply(flags, cfg.fsbs);
  auto tasks = load_tasks(tasks_path);
  auto backends = make_backends(cfg);
  std::filesystem::create_directories(out_dir);
  auto results = run_all(tasks, cfg, backends);

  int failures = 0;
  for (const auto& r : results) {
    std::ostringstream buf;
    fsbs::write_result(buf, r);
    fileio::write_atomic(std::filesystem::path(out_dir) / (r.task_id + ".jsonl"), buf.str());
    if (r.error || r.selected.empty()) {
      ++failures;
      std::cerr << "task " << r.task_id << ": " << r.error.value_or("no selection") << "\n";
      continue;
    }
    const auto* sel = r.selection_at(cfg.fsbs.selection_percentile);
    if (!sel) sel = &r.selected.front();
    std::cout << r.task_id << "\tcandidates=" << r.candidates.size()
              << "\tselected=" << sel->candidate
              << "\thighlights=" << r.candidates[sel->candidate].num_highlights << "\n";
    for (const auto& w : r.warnings) std::cerr << "task " << r.task_id << ": warning: " << w << "\n";
  }
  return failures ? kBackend : kOk;
}

// --- sweep ---------------------------------------------------------------

int cmd_sweep(const Common& common, const FsbsFlags& flags, const std::string& tasks_path,
              const std::string& ratings_path, const std::string& out_path) {
  auto cfg = load(common);
  apply(flags, cfg.fsbs);
  auto tasks = load_tasks(tasks_path);
  auto backends = make_backends(cfg);
  auto results = run_all(tasks, cfg, backends);

  std::map<std::string, std::vector<RatingForm>> ratings;
  json warnings = json::array();
  if (!ratings_path.empty()) {
    auto loaded = records::load_file<RatingForm>(ratings_path);
    for (const auto& e : loaded.errors) {
      throw ValidationFailure(ratings_path + ":" + std::to_string(e.line) + ": " + e.message);
    }
    for (auto& f : loaded.records) ratings[f.critique_id].push_back(std::move(f));
  } else {
    warnings.push_back("no ratings given; emitting selection data only");
  }

  int failures = 0;
  json sets = json::array();
  std::vector<analytics::ParetoPoint> points;
  for (double p : cfg.fsbs.length_percentiles) {
    json selections = json::array();
    std::vector<RatingForm> forms;
    for (const auto& r : results) {
      const auto* sel = r.selection_at(p);
      if (r.error || !sel) continue;
      const auto& c = r.candidates[sel->candidate];
      auto id = selection_id(r.task_id, p);
      selections.push_back({{"critique_id", id},
                            {"task_id", r.task_id},
                            {"candidate", sel->candidate},
                            {"target_length", sel->target_length},
                            {"modifier", sel->modifier},
                            {"reachable", sel->reachable},
                            {"num_highlights", c.num_highlights},
                            {"rm_score", c.rm_score},
                            {"text", serialize_critique(c.critique)}});
      auto it = ratings.find(id);
      if (it != ratings.end()) forms.insert(forms.end(), it->second.begin(), it->second.end());
    }
    json set = {{"percentile", p}, {"label", "p" + format_number(p)}, {"selections", selections},
                {"point", nullptr}};
    if (!ratings_path.empty()) {
      try {
        auto comp = analytics::attribute_rate(forms, Attribute::comprehensiveness);
        auto spur = analytics::spurious_rate(forms);
        analytics::ParetoPoint pt{comp.rate, spur.rate, "p" + format_number(p)};
        points.push_back(pt);
        set["point"] = {{"comprehensiveness", pt.comprehensiveness},
                        {"spurious", pt.spurious},
                        {"ratings", forms.size()}};
      } catch (const std::invalid_argument&) {
        warnings.push_back("no ratings for percentile " + format_number(p));
      }
    }
    sets.push_back(std::move(set));
  }
  for (const auto& r : results) {
    if (r.error) {
      ++failures;
      std::cerr << "task " << r.task_id << ": " << *r.error << "\n";
    }
  }
  json frontier = json::array();
  for (const auto& pt : analytics::pareto_frontier(points)) {
    frontier.push_back({{"label", pt.label},
                        {"comprehensiveness", pt.comprehensiveness},
                        {"spurious", pt.spurious}});
  }
  json out = {{"sets", sets}, {"pareto", frontier}, {"warnings", warnings}};
  for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";
  auto text = out.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    fileio::write_atomic(out_path, text);
  }
  return failures ? kBackend : kOk;
}

// --- elo -----------------------------------------------------------------

int cmd_elo(const Common& common, const std::string& comparisons_path,
            const std::string& attribute_name, std::size_t resamples, double level,
            const std::string& out_path, const std::string& plot_path) {
  auto cfg = load(common);
  Attribute attribute;
  try {
    attribute = attribute_from_string(attribute_name);
  } catch (const std::invalid_argument& e) {
    throw ValidationFailure(std::string("--attribute: ") + e.what());
  }
  if (!std::filesystem::exists(comparisons_path)) {
    throw ValidationFailure(comparisons_path + ": no such file");
  }
  auto loaded = records::load_file<ComparisonRecord>(comparisons_path);
  for (const auto& e : loaded.errors) {
    throw ValidationFailure(comparisons_path + ":" + std::to_string(e.line) + ": " + e.message);
  }
  auto extracted = analytics::extract_pairwise(loaded.records, attribute);
  for (const auto& w : extracted.warnings) std::cerr << "warning: " << w << "\n";

  analytics::EloTable table;
  try {
    table = analytics::fit_elo(extracted.preferences);
    if (resamples > 0) {
      analytics::BootstrapOptions opts;
      opts.resamples = resamples;
      opts.level = level;
      opts.seed = cfg.seed;
      opts.workers = cfg.jobs;
      table.ci = analytics::bootstrap_ratings(extracted.preferences, opts);
      table.ci_level = level;
    }
  } catch (const analytics::EloError& e) {
    throw ValidationFailure(e.what());
  } catch (const analytics::BootstrapError& e) {
    throw ValidationFailure(e.what());
  }

  std::printf("%-24s %10s %10s %10s\n", "source", "elo", "low", "high");
  json rows = json::array();
  std::ostringstream plot;
  plot << "source,elo,low,high\n";
  for (const auto& [source, rating] : table.ratings) {
    auto it = table.ci.find(source);
    if (it != table.ci.end()) {
      std::printf("%-24s %10.1f %10.1f %10.1f\n", source.c_str(), rating, it->second.low,
                  it->second.high);
      rows.push_back({{"source", source}, {"elo", rating}, {"low", it->second.low},
                      {"high", it->second.high}});
      plot << source << "," << rating << "," << it->second.low << "," << it->second.high << "\n";
    } else {
      std::printf("%-24s %10.1f %10s %10s\n", source.c_str(), rating, "-", "-");
      rows.push_back({{"source", source}, {"elo", rating}});
      plot << source << "," << rating << ",,\n";
    }
  }
  json report = {{"attribute", to_string(attribute)},
                 {"anchor", table.anchor_source},
                 {"preferences", extracted.preferences.size()},
                 {"regularized", table.regularized},
                 {"converged", table.converged},
                 {"ci_level", resamples > 0 ? json(level) : json(nullptr)},
                 {"resamples", resamples},
                 {"seed", cfg.seed},
                 {"ratings", rows}};
  if (!out_path.empty()) fileio::write_atomic(out_path, report.dump(2) + "\n");
  if (!plot_path.empty()) fileio::write_atomic(plot_path, plot.str());
  return kOk;
}

// --- ingest --------------------------------------------------------------

int cmd_ingest(const std::string& responses_path, const std::string& out_path,
               const std::string& distribution_name) {
  Distribution distribution;
  try {
    distribution = distribution_from_string(distribution_name);
  } catch (const std::invalid_argument& e) {
    throw ValidationFailure(std::string("--distribution: ") + e.what());
  }
  std::ifstream in(responses_path);
  if (!in) throw ValidationFailure(responses_path + ": cannot open");
  std::vector<datasets::RawResponse> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = json::parse(line, nullptr, false);
    auto where = responses_path + ":" + std::to_string(lineno);
    if (j.is_discarded() || !j.is_object()) throw ValidationFailure(where + ": malformed JSON");
    if (!j.contains("question") || !j["question"].is_string()) {
      throw ValidationFailure(where + ": question: missing");
    }
    if (!j.contains("response") || !j["response"].is_string()) {
      throw ValidationFailure(where + ": response: missing");
    }
    datasets::RawResponse r{j["question"], j["response"], {}};
    if (j.contains("metadata")) {
      try {
        r.metadata = j["metadata"].get<std::map<std::string, std::string>>();
      } catch (const json::exception&) {
        throw ValidationFailure(where + ": metadata: expected string values");
      }
    }
    raw.push_back(std::move(r));
  }
  auto result = datasets::ingest_responses(raw, distribution);
  std::string text;
  for (const auto& t : result.tasks) text += records::encode_line(t) + "\n";
  if (!out_path.empty()) fileio::write_atomic(out_path, text);
  json counts = {{"total", result.counts.total},
                 {"no_code_block", result.counts.no_code_block},
                 {"below_threshold", result.counts.below_threshold},
                 {"kept", result.counts.kept}};
  std::cout << counts.dump() << "\n";
  return kOk;
}

// --- serve ---------------------------------------------------------------

std::atomic<http_api::Server*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

datasets::ComparisonSkeleton skeleton_from_json(const json& j, std::uint64_t seed) {
  auto task = records::RecordCodec<QATask>::decode(j.at("task"));
  std::vector<datasets::CandidateCritique> cs;
  for (const auto& c : j.at("critiques")) {
    cs.push_back({c.at("critique_id").get<std::string>(), c.at("source_id").get<std::string>(),
                  c.value("author_id", ""), parse_critique(c.at("text").get<std::string>()).critique});
  }
  return datasets::assemble_comparison(task, std::move(cs),
                                       j.value("reference_bugs", std::vector<std::string>{}), seed);
}

int cmd_serve(const Common& common, std::optional<int> port, const std::string& host) {
  auto cfg = load(common);
  if (port) cfg.port = *port;
  if (!host.empty()) cfg.host = host;
  if (cfg.port < 0 || cfg.port > 65535) throw ValidationFailure("--port: out of range 0-65535");
  auto backends = make_backends(cfg);
  auto svc = std::make_shared<service::AnnotationService>(
      cfg.service, std::shared_ptr<gateway::Generator>(std::move(backends.critic)),
      std::shared_ptr<gateway::Scorer>(std::move(backends.scorer)));
  for (const auto& [token, who] : cfg.tokens) svc->add_token(token, who);

  auto load_qa = [&](const std::string& path, auto&& add) {
    if (path.empty()) return;
    for (auto& t : load_tasks(path)) add(t);
  };
  load_qa(cfg.tasks.tamper, [&](const QATask& t) { svc->add_tamper_task(t); });
  load_qa(cfg.tasks.critique, [&](const QATask& t) { svc->add_critique_task(t, cfg.teaming); });
  if (!cfg.tasks.compare.empty()) {
    std::ifstream in(cfg.tasks.compare);
    if (!in) throw ValidationFailure("serve.tasks.compare: cannot open " + cfg.tasks.compare);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        svc->add_comparison_task(skeleton_from_json(json::parse(line), cfg.seed));
      } catch (const std::exception& e) {
        throw ValidationFailure(cfg.tasks.compare + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  http_api::Api api(*svc);
  http_api::Server server(api);
  if (!server.bind(cfg.host, cfg.port)) {
    throw ValidationFailure("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on " << cfg.host << ":" << server.port() << "\n";
  server.run();
  g_server = nullptr;
  return kOk;
}

// --- report --------------------------------------------------------------

int cmd_report(const Common& common, const std::string& store_dir, const std::string& out_path) {
  auto cfg = load(common);
  records::Store store(store_dir);
  json warnings = json::array();
  auto note_errors = [&](const auto& loaded, std::string_view file) {
    for (const auto& e : loaded.errors) {
      warnings.push_back(std::string(file) + ":" + std::to_string(e.line) + ": " + e.message);
    }
  };

  auto comparisons = store.load_all<ComparisonRecord>();
  note_errors(comparisons, "comparison.jsonl");
  std::map<std::string, std::vector<RatingForm>> by_source;
  for (const auto& r : comparisons.records) {
    for (const auto& e : r.entries) by_source[e.source_id].push_back(e.form);
  }
  json rates = json::object();
  for (const auto& [source, forms] : by_source) {
    json row = json::object();
    for (auto a : kAllAttributes) {
      try {
        auto r = analytics::attribute_rate(forms, a);
        row[std::string(to_string(a))] = {{"rate", r.rate}, {"yes", r.yes}, {"total", r.total}};
      } catch (const std::invalid_argument&) {
        row[std::string(to_string(a))] = nullptr;
      }
    }
    rates[source] = row;
  }

  auto doubles = store.load_all<analytics::DoublyRatedItem>();
  note_errors(doubles, "double_rating.jsonl");
  auto agreement = analytics::agreement_report(doubles.records, Attribute::overall, cfg.seed);
  json agree = json::object();
  for (const auto& [a, c] : agreement.attributes) {
    agree[std::string(to_string(a))] = {{"agree", c.agree}, {"total", c.total}, {"rate", c.rate()}};
  }
  agree["preference"] = {{"agree", agreement.preference.agree},
                         {"total", agreement.preference.total},
                         {"rate", agreement.preference.rate()}};
  for (const auto& w : agreement.warnings) warnings.push_back(w);

  auto dc = store.load_all<analytics::DcItem>();
  note_errors(dc, "dc_item.jsonl");
  json dc_json = nullptr;
  try {
    auto gap = analytics::dc_gap_report(dc.records);
    dc_json = {{"tampered", gap.tampered},
               {"decile_size", gap.decile_size},
               {"decile_caught", gap.decile_caught},
               {"decile_catch_rate", gap.decile_catch_rate},
               {"overall_catch_rate", gap.overall_catch_rate}};
  } catch (const std::invalid_argument& e) {
    if (!dc.records.empty()) warnings.push_back(std::string("dc_gap: ") + e.what());
  }

  auto logs = store.load_all<InteractionLog>();
  note_errors(logs, "interaction_log.jsonl");
  json hist = json::object();
  for (auto o : {InteractionOutcome::kept_unmodified, InteractionOutcome::removed,
                 InteractionOutcome::edited_phrasing, InteractionOutcome::added_new}) {
    std::size_t n = 0;
    for (const auto& l : logs.records) n += l.count(o);
    hist[std::string(to_string(o))] = n;
  }

  json report = {{"attribute_rates", rates},
                 {"agreement", agree},
                 {"dc_gap", dc_json},
                 {"interactions", {{"logs", logs.records.size()}, {"counts", hist}}},
                 {"warnings", warnings}};
  auto text = report.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    fileio::write_atomic(out_path, text);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"critique pipeline toolkit"};
  app.require_subcommand(1);
  Common common;
  FsbsFlags fsbs_flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "seed for every random choice");
    sub->add_option("--jobs", common.jobs, "parallel tasks")->check(CLI::PositiveNumber);
  };
  auto add_fsbs = [&](CLI::App* sub) {
    sub->add_option("--n", fsbs_flags.n, "samples per expansion");
    sub->add_option("--k", fsbs_flags.k, "beams kept per round");
    sub->add_option("--d", fsbs_flags.d, "rounds");
    sub->add_option("--percentile", fsbs_flags.percentiles, "target length percentile(s)");
  };

  std::string results_dir = "results";
  std::string tasks_path, out, ratings, comparisons, attribute = "overall", responses,
                                                     distribution = "unmodified", store = "store",
                                                     plot, host;
  std::size_t resamples = 1000;
  double level = 0.69;
  std::optional<int> port;

  auto* critique = app.add_subcommand("critique", "run FSBS on every task");
  add_common(critique);
  add_fsbs(critique);
  critique->add_option("tasks", tasks_path, "task file (qa_task records)")->required();
  critique->add_option("--out", results_dir, "result directory")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "FSBS selections per percentile and Pareto data");
  add_common(sweep);
  add_fsbs(sweep);
  sweep->add_option("tasks", tasks_path, "task file (qa_task records)")->required();
  sweep->add_option("--ratings", ratings, "rating_form records keyed by selection id");
  sweep->add_option("--out", out, "output file (default stdout)");

  auto* elo = app.add_subcommand("elo", "fit Elo ratings from comparisons");
  add_common(elo);
  elo->add_option("comparisons", comparisons, "comparison records")->required();
  elo->add_option("--attribute", attribute, "rated attribute")->capture_default_str();
  elo->add_option("--bootstrap", resamples, "bootstrap resamples (0 disables)")->capture_default_str();
  elo->add_option("--level", level, "interval level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  elo->add_option("--out", out, "JSON report file");
  elo->add_option("--plot-data", plot, "CSV plot data file");

  auto* ingest = app.add_subcommand("ingest", "extract QA tasks from raw responses");
  add_common(ingest);
  ingest->add_option("responses", responses, "JSONL with question and response")->required();
  ingest->add_option("--out", out, "qa_task output file");
  ingest->add_option("--distribution", distribution, "distribution tag")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "run the annotation API");
  add_common(serve);
  serve->add_option("--port", port, "listen port (0 picks one)");
  serve->add_option("--host", host, "listen address");

  auto* report = app.add_subcommand("report", "attribute, agreement, DC-gap and teaming summaries");
  add_common(report);
  report->add_option("--store", store, "record directory")->capture_default_str();
  report->add_option("--out", out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*critique) return cmd_critique(common, fsbs_flags, tasks_path, results_dir);
    if (*sweep) return cmd_sweep(common, fsbs_flags, tasks_path, ratings, out);
    if (*elo) return cmd_elo(common, comparisons, attribute, resamples, level, out, plot);
    if (*ingest) return cmd_ingest(responses, out, distribution);
    if (*serve) return cmd_serve(common, port, host);
    if (*report) return cmd_report(common, store, out);
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidation;
  } catch (const gateway::GatewayError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
