#pragma once

// Configuration file for the command-line tool and the annotation server.
// Schema in docs/records.md ("Configuration"). Errors carry the key path.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "critkit/fsbs.hpp"
#include "critkit/gateway.hpp"
#include "critkit/service.hpp"

namespace critkit::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TaskFiles {
  std::string tamper;
  std::string critique;
  std::string compare;
};

struct AppConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  gateway::BackendDescriptor critic;
  gateway::BackendDescriptor scorer;
  fsbs::FsbsConfig fsbs;

  std::string host = "127.0.0.1";
  int port = 8080;
  bool teaming = true;
  std::string store_dir = "store";
  service::ServiceOptions service;
  std::map<std::string, std::string> tokens;  // token -> annotator id
  TaskFiles tasks;
};

AppConfig default_config();
AppConfig config_from_json(const nlohmann::json& j);
AppConfig load_config(const std::filesystem::path& path);

using EnvLookup = std::function<const char*(const char*)>;

/// CRITKIT_SEED, CRITKIT_HOST, CRITKIT_PORT, CRITKIT_QC_RATE, CRITKIT_TEAMING,
/// CRITKIT_STORE_DIR, CRITKIT_CRITIC_ENDPOINT, CRITKIT_SCORER_ENDPOINT.
void apply_env(AppConfig& cfg, const EnvLookup& env);

gateway::BackendDescriptor descriptor_from_json(const nlohmann::json& j, const std::string& path,
                                                gateway::BackendKind kind);

}  // namespace critkit::config
