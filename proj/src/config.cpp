#include "critkit/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <initializer_list>

namespace critkit::config {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError((path.empty() ? "" : path + ".") + key + ": unknown key");
    }
  }
}

template <typename T>
void read(const json& j, const std::string& path, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception&) {
    throw ConfigError((path.empty() ? "" : path + ".") + key + ": wrong type");
  }
}

}  // namespace

gateway::BackendDescriptor descriptor_from_json(const json& j, const std::string& path,
                                                gateway::BackendKind kind) {
  reject_unknown(j, path,
                 {"endpoint", "auth_env", "timeout_ms", "max_parallel", "max_retries",
                  "initial_backoff_ms", "instructions"});
  gateway::BackendDescriptor d;
  d.kind = kind;
  d.instructions = kind == gateway::BackendKind::generator ? gateway::kDefaultCriticInstructions : "";
  long long timeout = d.timeout.count();
  long long backoff = d.initial_backoff.count();
  read(j, path, "endpoint", d.endpoint);
  read(j, path, "auth_env", d.auth_env);
  read(j, path, "timeout_ms", timeout);
  read(j, path, "max_parallel", d.max_parallel);
  read(j, path, "max_retries", d.max_retries);
  read(j, path, "initial_backoff_ms", backoff);
  read(j, path, "instructions", d.instructions);
  if (d.endpoint.empty()) throw ConfigError(path + ".endpoint: missing");
  if (timeout <= 0) throw ConfigError(path + ".timeout_ms: must be positive");
  if (d.max_parallel == 0) throw ConfigError(path + ".max_parallel: must be positive");
  if (d.max_retries < 0) throw ConfigError(path + ".max_retries: must be non-negative");
  if (backoff < 0) throw ConfigError(path + ".initial_backoff_ms: must be non-negative");
  d.timeout = std::chrono::milliseconds(timeout);
  d.initial_backoff = std::chrono::milliseconds(backoff);
  return d;
}

AppConfig default_config() {
  AppConfig c;
  c.critic.kind = gateway::BackendKind::generator;
  c.critic.endpoint = "mock:critic";
  c.critic.instructions = gateway::kDefaultCriticInstructions;
  c.scorer.kind = gateway::BackendKind::scorer;
  c.scorer.endpoint = "mock:heuristic";
  c.service.store_dir = c.store_dir;
  return c;
}

AppConfig config_from_json(const json& j) {
  AppConfig c = default_config();
  reject_unknown(j, "", {"seed", "jobs", "critic", "scorer", "fsbs", "serve"});
  read(j, "", "seed", c.seed);
  read(j, "", "jobs", c.jobs);
  if (c.jobs == 0) throw ConfigError("jobs: must be positive");
  if (j.contains("critic")) {
    c.critic = descriptor_from_json(j["critic"], "critic", gateway::BackendKind::generator);
  }
  if (j.contains("scorer")) {
    c.scorer = descriptor_from_json(j["scorer"], "scorer", gateway::BackendKind::scorer);
  }
  if (j.contains("fsbs")) {
    try {
      c.fsbs = fsbs::config_from_json(j["fsbs"]);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("serve")) {
    const auto& s = j["serve"];
    reject_unknown(s, "serve",
                   {"host", "port", "store_dir", "lease_minutes", "qc_rate", "teaming", "prefill",
                    "reviewers", "annotators", "tasks"});
    read(s, "serve", "host", c.host);
    read(s, "serve", "port", c.port);
    read(s, "serve", "store_dir", c.store_dir);
    long long lease = c.service.lease_duration.count();
    read(s, "serve", "lease_minutes", lease);
    if (lease <= 0) throw ConfigError("serve.lease_minutes: must be positive");
    c.service.lease_duration = std::chrono::minutes(lease);
    read(s, "serve", "qc_rate", c.service.qc_rate);
    read(s, "serve", "teaming", c.teaming);
    std::string prefill = "critic";
    read(s, "serve", "prefill", prefill);
    if (prefill == "critic") {
      c.service.prefill = service::PrefillMode::critic;
    } else if (prefill == "fsbs") {
      c.service.prefill = service::PrefillMode::fsbs;
    } else {
      throw ConfigError("serve.prefill: expected \"critic\" or \"fsbs\"");
    }
    read(s, "serve", "reviewers", c.service.reviewers);
    if (s.contains("annotators")) {
      if (!s["annotators"].is_array()) throw ConfigError("serve.annotators: expected an array");
      for (std::size_t i = 0; i < s["annotators"].size(); ++i) {
        const auto& a = s["annotators"][i];
        auto path = "serve.annotators[" + std::to_string(i) + "]";
        reject_unknown(a, path, {"id", "token", "token_env"});
        std::string id, token, token_env;
        read(a, path, "id", id);
        read(a, path, "token", token);
        read(a, path, "token_env", token_env);
        if (id.empty()) throw ConfigError(path + ".id: missing");
        if (token.empty() && token_env.empty()) throw ConfigError(path + ": token or token_env required");
        if (token.empty()) token = "$" + token_env;  // resolved by apply_env
        c.tokens[token] = id;
      }
    }
    if (s.contains("tasks")) {
      reject_unknown(s["tasks"], "serve.tasks", {"tamper", "critique", "compare"});
      read(s["tasks"], "serve.tasks", "tamper", c.tasks.tamper);
      read(s["tasks"], "serve.tasks", "critique", c.tasks.critique);
      read(s["tasks"], "serve.tasks", "compare", c.tasks.compare);
    }
  }
  if (c.port < 1 || c.port > 65535) throw ConfigError("serve.port: out of range 1-65535");
  if (!(c.service.qc_rate > 0 && c.service.qc_rate <= 1)) {
    throw ConfigError("serve.qc_rate: must be in (0, 1]");
  }
  c.service.seed = c.seed;
  c.service.fsbs = c.fsbs;
  c.service.store_dir = c.store_dir;
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": malformed JSON");
  return config_from_json(j);
}

void apply_env(AppConfig& cfg, const EnvLookup& env) {
  auto integer = [&](const char* name, auto& field) {
    const char* v = env(name);
    if (!v) return;
    std::string_view s(v);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), field);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(std::string(name) + ": not an integer");
    }
  };
  integer("CRITKIT_SEED", cfg.seed);
  integer("CRITKIT_PORT", cfg.port);
  if (const char* v = env("CRITKIT_HOST")) cfg.host = v;
  if (const char* v = env("CRITKIT_STORE_DIR")) cfg.store_dir = v;
  if (const char* v = env("CRITKIT_QC_RATE")) {
    try {
      std::size_t used = 0;
      cfg.service.qc_rate = std::stod(v, &used);
      if (used != std::string_view(v).size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("CRITKIT_QC_RATE: not a number");
    }
  }
  if (const char* v = env("CRITKIT_TEAMING")) {
    std::string_view s(v);
    if (s == "1" || s == "true") {
      cfg.teaming = true;
    } else if (s == "0" || s == "false") {
      cfg.teaming = false;
    } else {
      throw ConfigError("CRITKIT_TEAMING: expected true or false");
    }
  }
  if (const char* v = env("CRITKIT_CRITIC_ENDPOINT")) cfg.critic.endpoint = v;
  if (const char* v = env("CRITKIT_SCORER_ENDPOINT")) cfg.scorer.endpoint = v;

  std::map<std::string, std::string> resolved;
  for (const auto& [token, id] : cfg.tokens) {
    if (!token.starts_with("$")) {
      resolved[token] = id;
      continue;
    }
    const char* v = env(token.c_str() + 1);
    if (!v || !*v) throw ConfigError("annotator " + id + ": " + token.substr(1) + " is not set");
    resolved[v] = id;
  }
  cfg.tokens = std::move(resolved);

  if (cfg.port < 1 || cfg.port > 65535) throw ConfigError("CRITKIT_PORT: out of range 1-65535");
  if (!(cfg.service.qc_rate > 0 && cfg.service.qc_rate <= 1)) {
    throw ConfigError("CRITKIT_QC_RATE: must be in (0, 1]");
  }
  cfg.service.seed = cfg.seed;
  cfg.service.store_dir = cfg.store_dir;
}

}  // namespace critkit::config
