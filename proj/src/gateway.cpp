#include "critkit/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "critkit/critique.hpp"
#include "critkit/random.hpp"
#include "critkit/wire.hpp"

namespace critkit::gateway {

const char* const kDefaultCriticInstructions =
    "You are reviewing an answer to a programming question. Quote the exact lines of the "
    "answer that contain problems inside markdown code blocks beginning with ```, and after "
    "each quoted block explain the problem concisely. Only point out real, important "
    "problems. Do not quote text that is not in the answer.";

GatewayError::GatewayError(ErrorKind kind, std::string request_id, const std::string& message)
    : std::runtime_error("[" + std::string(to_string(kind)) + "] request " + request_id + ": " +
                         message),
      kind_(kind),
      request_id_(std::move(request_id)) {}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::transport: return "transport";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::config: return "config";
    case ErrorKind::invalid_request: return "invalid_request";
  }
  return "unknown";
}

std::string derive_request_id(const GenerationRequest& req) {
  std::uint64_t h = fnv1a64(req.question);
  h = fnv1a64(req.answer, h);
  h = fnv1a64(req.critique_prefix, h);
  h = mix_seed(h, req.sample_seed);
  return "gen-" + to_hex(h);
}

std::string derive_request_id(const RewardRequest& req) {
  std::uint64_t h = fnv1a64(req.question);
  h = fnv1a64(req.answer, h);
  h = fnv1a64(req.critique, h);
  return "rm-" + to_hex(h);
}

ConcurrencyLimiter::ConcurrencyLimiter(std::size_t limit) : limit_(limit) {
  if (limit == 0) throw std::invalid_argument("max_parallel must be >= 1");
}

void ConcurrencyLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_use_ < limit_; });
  ++in_use_;
}

void ConcurrencyLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_use_;
  }
  cv_.notify_one();
}

namespace {

template <typename Call>
auto with_retries(const RetryPolicy& retry, ConcurrencyLimiter& limiter,
                  const std::string& request_id, Call&& call) {
  for (int attempt = 0;; ++attempt) {
    try {
      ConcurrencyLimiter::Permit permit(limiter);
      return call();
    } catch (const GatewayError& e) {
      if (!e.retriable() || attempt >= retry.max_retries) throw;
    } catch (const std::exception& e) {
      throw GatewayError(ErrorKind::protocol, request_id, e.what());
    }
    std::this_thread::sleep_for(retry.initial_backoff * (1 << attempt));
  }
}

}  // namespace

Generator::Generator(std::size_t max_parallel, RetryPolicy retry)
    : limiter_(max_parallel), retry_(retry) {}

Generation Generator::generate(const GenerationRequest& req) {
  GenerationRequest r = req;
  if (r.request_id.empty()) r.request_id = derive_request_id(r);
  if (r.max_continuation == 0) {
    throw GatewayError(ErrorKind::invalid_request, r.request_id, "max_continuation must be > 0");
  }
  if (!(r.temperature >= 0.0)) {
    throw GatewayError(ErrorKind::invalid_request, r.request_id, "temperature must be >= 0");
  }
  return with_retries(retry_, limiter_, r.request_id, [&] { return do_generate(r); });
}

Scorer::Scorer(std::size_t max_parallel, RetryPolicy retry)
    : limiter_(max_parallel), retry_(retry) {}

double Scorer::score(const RewardRequest& req) {
  RewardRequest r = req;
  if (r.request_id.empty()) r.request_id = derive_request_id(r);
  double value = with_retries(retry_, limiter_, r.request_id, [&] { return do_score(r); });
  if (!std::isfinite(value)) {
    throw GatewayError(ErrorKind::protocol, r.request_id, "backend returned a non-finite score");
  }
  return value;
}

namespace {

template <typename T, typename Fn>
std::vector<BatchItem<T>> run_parallel(std::size_t count, std::size_t workers, Fn&& fn) {
  std::vector<BatchItem<T>> out(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        out[i].value = fn(i);
      } catch (const GatewayError& e) {
        out[i].error = e;
      } catch (const std::exception& e) {
        out[i].error = GatewayError(ErrorKind::protocol, "", e.what());
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, count);
  if (workers == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace

std::vector<BatchItem<Generation>> generate_batch(std::span<const GenerationRequest> reqs,
                                                  Generator& backend) {
  if (reqs.empty()) return {};
  return run_parallel<Generation>(reqs.size(), backend.max_parallel(),
                                  [&](std::size_t i) { return backend.generate(reqs[i]); });
}

std::vector<BatchItem<Generation>> generate_batch(std::span<const GenerationRequest> reqs,
                                                  std::span<Generator* const> backends) {
  if (reqs.size() != backends.size()) {
    throw std::invalid_argument("generate_batch: one backend per request required");
  }
  if (reqs.empty()) return {};
  std::set<Generator*> distinct(backends.begin(), backends.end());
  std::size_t workers = 0;
  for (auto* b : distinct) workers += b ? b->max_parallel() : 1;
  return run_parallel<Generation>(reqs.size(), workers, [&](std::size_t i) {
    if (backends[i] == nullptr) {
      throw GatewayError(ErrorKind::config, reqs[i].request_id, "no backend for request");
    }
    return backends[i]->generate(reqs[i]);
  });
}

std::vector<BatchItem<double>> score_batch(std::span<const RewardRequest> reqs, Scorer& backend) {
  if (reqs.empty()) return {};
  return run_parallel<double>(reqs.size(), backend.max_parallel(),
                              [&](std::size_t i) { return backend.score(reqs[i]); });
}

// --- synthetic critic ----------------------------------------------------

namespace {

constexpr const char* kCommentOpeners[] = {
    "This line does not handle the empty input case.",
    "Possible off-by-one error here.",
    "The return value is ignored, so failures go unnoticed.",
    "This mutates shared state without synchronization.",
    "The variable may be undefined on this path.",
    "Exceptions raised here are swallowed silently.",
    "This comparison uses the wrong operator.",
    "Integer division truncates the result here.",
};

constexpr const char* kCommentElaborations[] = {
    " It will fail for inputs at the boundary.",
    " Callers relying on the documented behaviour will get wrong results.",
    " Consider adding a check before this statement.",
    " A test exercising this path would catch it.",
};

constexpr const char* kFabricatedLines[] = {
    "result = cache.lookup(key)",
    "assert len(items) > 0",
    "buffer.flush(force=True)",
    "for idx in range(len(values) + 1):",
    "return self._state.copy()",
};

std::string_view trim_view(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> quotable_lines(std::string_view answer) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= answer.size()) {
    auto nl = answer.find('\n', pos);
    auto line = answer.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    auto t = trim_view(line);
    if (!t.empty() && !is_fence_line(t)) out.emplace_back(t);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

bool ends_with_open_fence(std::string_view prefix) {
  if (prefix.empty()) return false;
  auto parsed = parse_critique(prefix);
  if (parsed.critique.comments.empty()) return false;
  bool unclosed = std::any_of(parsed.warnings.begin(), parsed.warnings.end(), [](const auto& w) {
    return w.kind == ParseWarningKind::unclosed_fence;
  });
  return unclosed && parsed.critique.comments.back().quote.empty();
}

}  // namespace

SyntheticCritic::SyntheticCritic(std::size_t max_parallel, SyntheticCriticOptions opts)
    : Generator(max_parallel), opts_(opts) {}

Generation SyntheticCritic::do_generate(const GenerationRequest& req) {
  Rng rng(mix_seed(req.sample_seed, fnv1a64(req.critique_prefix, fnv1a64(req.answer))));
  auto lines = quotable_lines(req.answer);

  auto pick_quote = [&]() -> std::string {
    if (lines.empty() || rng.bernoulli(opts_.hallucination_rate)) {
      std::string fake = kFabricatedLines[rng.below(std::size(kFabricatedLines))];
      while (req.answer.find(fake) != std::string::npos) fake += "  # unchecked";
      return fake;
    }
    return lines[rng.below(lines.size())];
  };
  auto pick_comment = [&] {
    std::string c = kCommentOpeners[rng.below(std::size(kCommentOpeners))];
    auto extra = rng.below(3);
    for (std::uint64_t i = 0; i < extra; ++i) {
      c += kCommentElaborations[rng.below(std::size(kCommentElaborations))];
    }
    return c;
  };
  auto highlight = [&] {
    auto q = pick_quote();
    return std::string(kFence) + "\n" + q + "\n" + std::string(kFence) + "\n" + pick_comment();
  };

  std::string out;
  std::size_t produced = 0;
  if (ends_with_open_fence(req.critique_prefix)) {
    auto q = pick_quote();
    out = "\n" + q + "\n" + std::string(kFence) + "\n" + pick_comment();
    produced = 1;
  } else {
    if (!req.critique_prefix.empty()) out = "\n\n";
    out += highlight();
    produced = 1;
    auto more = rng.below(3);
    for (std::uint64_t i = 0; i < more; ++i, ++produced) out += "\n\n" + highlight();
  }
  while (produced < 3 && rng.bernoulli(opts_.extra_highlight_rate)) {
    out += "\n\n" + highlight();
    ++produced;
  }
  if (rng.bernoulli(opts_.summary_rate)) {
    out += "\n\nThese issues should be addressed before this code is used.";
  }

  // Roughly four characters per token.
  const std::size_t budget = req.max_continuation * 4;
  if (out.size() > budget) return {out.substr(0, budget), false};
  return {out, true};
}

HeuristicScorer::HeuristicScorer(std::size_t max_parallel) : Scorer(max_parallel) {}

double HeuristicScorer::evaluate(std::string_view critique, std::string_view answer) {
  auto parsed = parse_critique(critique);
  auto anchored = anchor_quotes(parsed.critique, answer);
  std::size_t comment_chars = 0;
  for (const auto& c : parsed.critique.comments) comment_chars += c.body.size();
  return kAnchoredBonus * static_cast<double>(anchored.anchored_count()) -
         kUnanchoredPenalty * static_cast<double>(anchored.unanchored.size()) -
         kLengthPenaltyPer100Chars * (static_cast<double>(comment_chars) / 100.0);
}

double HeuristicScorer::do_score(const RewardRequest& req) {
  return evaluate(req.critique, req.answer);
}

// --- scripted ------------------------------------------------------------

ScriptedGenerator::ScriptedGenerator(std::map<Key, Generation> table, std::size_t max_parallel)
    : Generator(max_parallel), table_(std::move(table)) {}

ScriptedGenerator::Key ScriptedGenerator::key_for(std::uint64_t seed, std::string_view prefix) {
  return {seed, fnv1a64(prefix)};
}

std::unique_ptr<ScriptedGenerator> ScriptedGenerator::from_file(const std::string& path,
                                                                std::size_t max_parallel) {
  std::ifstream in(path);
  if (!in) throw GatewayError(ErrorKind::config, "", "cannot open scripted table " + path);
  std::map<Key, Generation> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim_view(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("seed") || !j.contains("prefix") || !j.contains("text")) {
      throw GatewayError(ErrorKind::config, "",
                         path + ":" + std::to_string(lineno) + ": malformed scripted entry");
    }
    table[key_for(j["seed"].get<std::uint64_t>(), j["prefix"].get<std::string>())] =
        Generation{j["text"].get<std::string>(), j.value("end_of_sequence", true)};
  }
  return std::make_unique<ScriptedGenerator>(std::move(table), max_parallel);
}

Generation ScriptedGenerator::do_generate(const GenerationRequest& req) {
  auto it = table_.find(key_for(req.sample_seed, req.critique_prefix));
  if (it == table_.end()) {
    throw GatewayError(ErrorKind::protocol, req.request_id, "no scripted continuation");
  }
  return it->second;
}

// --- replay --------------------------------------------------------------

namespace {

std::string replay_key(nlohmann::json request) {
  request.erase("request_id");
  request.erase("instructions");
  request.erase("version");
  return request.dump();
}

std::map<std::string, std::string> load_replay(const std::string& path, std::string_view kind) {
  std::ifstream in(path);
  if (!in) throw GatewayError(ErrorKind::config, "", "cannot open replay file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim_view(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || j.value("kind", "") != kind) continue;
    out[replay_key(j.at("request"))] = j.at("response").get<std::string>();
  }
  return out;
}

class ReplayGenerator : public Generator {
 public:
  ReplayGenerator(const std::string& path, std::size_t max_parallel)
      : Generator(max_parallel), exchanges_(load_replay(path, "generate")) {}

 protected:
  Generation do_generate(const GenerationRequest& req) override {
    auto key = replay_key(nlohmann::json::parse(wire::encode_generation_request(req, "")));
    auto it = exchanges_.find(key);
    if (it == exchanges_.end()) {
      throw GatewayError(ErrorKind::protocol, req.request_id, "no recorded exchange");
    }
    return wire::decode_generation_response(it->second, req.request_id);
  }

 private:
  std::map<std::string, std::string> exchanges_;
};

class ReplayScorer : public Scorer {
 public:
  ReplayScorer(const std::string& path, std::size_t max_parallel)
      : Scorer(max_parallel), exchanges_(load_replay(path, "score")) {}

 protected:
  double do_score(const RewardRequest& req) override {
    auto key = replay_key(nlohmann::json::parse(wire::encode_reward_request(req)));
    auto it = exchanges_.find(key);
    if (it == exchanges_.end()) {
      throw GatewayError(ErrorKind::protocol, req.request_id, "no recorded exchange");
    }
    return wire::decode_score_response(it->second, req.request_id);
  }

 private:
  std::map<std::string, std::string> exchanges_;
};

// --- http ----------------------------------------------------------------

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string base_path;
};

ParsedUrl parse_http_url(const std::string& url) {
  constexpr std::string_view scheme = "http://";
  if (!url.starts_with(scheme)) {
    throw GatewayError(ErrorKind::config, "", "unsupported endpoint scheme: " + url);
  }
  auto slash = url.find('/', scheme.size());
  ParsedUrl out;
  out.origin = url.substr(0, slash);
  if (slash != std::string::npos) out.base_path = url.substr(slash);
  while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  if (out.origin.size() == scheme.size()) {
    throw GatewayError(ErrorKind::config, "", "endpoint has no host: " + url);
  }
  return out;
}

class HttpTransport {
 public:
  explicit HttpTransport(const BackendDescriptor& desc)
      : url_(parse_http_url(desc.endpoint)), timeout_(desc.timeout) {
    if (!desc.auth_env.empty()) {
      if (const char* token = std::getenv(desc.auth_env.c_str())) token_ = token;
    }
  }

  std::string post(std::string_view path, const std::string& body,
                   const std::string& request_id) const {
    httplib::Client client(url_.origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers{{"X-Request-Id", request_id}};
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = client.Post(url_.base_path + std::string(path), headers, body, "application/json");
    if (!res) {
      throw GatewayError(ErrorKind::transport, request_id,
                         "http error: " + httplib::to_string(res.error()));
    }
    if (res->status >= 500 || res->status == 429) {
      throw GatewayError(ErrorKind::transport, request_id,
                         "backend status " + std::to_string(res->status));
    }
    if (res->status != 200) {
      throw GatewayError(ErrorKind::protocol, request_id,
                         "backend status " + std::to_string(res->status));
    }
    return res->body;
  }

 private:
  ParsedUrl url_;
  std::chrono::milliseconds timeout_;
  std::string token_;
};

RetryPolicy retry_of(const BackendDescriptor& d) { return {d.max_retries, d.initial_backoff}; }

class HttpGenerator : public Generator {
 public:
  explicit HttpGenerator(const BackendDescriptor& desc)
      : Generator(desc.max_parallel, retry_of(desc)),
        transport_(desc),
        instructions_(desc.instructions.empty() ? kDefaultCriticInstructions : desc.instructions) {}

 protected:
  Generation do_generate(const GenerationRequest& req) override {
    auto body = transport_.post(wire::kGeneratePath,
                                wire::encode_generation_request(req, instructions_), req.request_id);
    return wire::decode_generation_response(body, req.request_id);
  }

 private:
  HttpTransport transport_;
  std::string instructions_;
};

class HttpScorer : public Scorer {
 public:
  explicit HttpScorer(const BackendDescriptor& desc)
      : Scorer(desc.max_parallel, retry_of(desc)), transport_(desc) {}

 protected:
  double do_score(const RewardRequest& req) override {
    auto body = transport_.post(wire::kScorePath, wire::encode_reward_request(req), req.request_id);
    return wire::decode_score_response(body, req.request_id);
  }

 private:
  HttpTransport transport_;
};

void check_kind(const BackendDescriptor& desc, BackendKind expected) {
  if (desc.kind != expected) {
    throw GatewayError(ErrorKind::config, "",
                       "backend " + desc.endpoint + " has the wrong kind for this call");
  }
  if (desc.max_parallel == 0) {
    throw GatewayError(ErrorKind::config, "", "max_parallel must be >= 1");
  }
}

}  // namespace

std::unique_ptr<Generator> make_generator(const BackendDescriptor& desc) {
  check_kind(desc, BackendKind::generator);
  const auto& ep = desc.endpoint;
  if (ep == "mock:critic") return std::make_unique<SyntheticCritic>(desc.max_parallel);
  if (ep.starts_with("mock:scripted:")) {
    return ScriptedGenerator::from_file(ep.substr(14), desc.max_parallel);
  }
  if (ep.starts_with("replay:")) return std::make_unique<ReplayGenerator>(ep.substr(7), desc.max_parallel);
  if (ep.starts_with("mock:")) {
    throw GatewayError(ErrorKind::config, "", "unknown mock generator: " + ep);
  }
  return std::make_unique<HttpGenerator>(desc);
}

std::unique_ptr<Scorer> make_scorer(const BackendDescriptor& desc) {
  check_kind(desc, BackendKind::scorer);
  const auto& ep = desc.endpoint;
  if (ep == "mock:heuristic") return std::make_unique<HeuristicScorer>(desc.max_parallel);
  if (ep.starts_with("replay:")) return std::make_unique<ReplayScorer>(ep.substr(7), desc.max_parallel);
  if (ep.starts_with("mock:")) {
    throw GatewayError(ErrorKind::config, "", "unknown mock scorer: " + ep);
  }
  return std::make_unique<HttpScorer>(desc);
}

}  // namespace critkit::gateway
