#include <gtest/gtest.h>

#include <fstream>

#include "critkit/config.hpp"
#include "support.hpp"

using namespace critkit;
using namespace critkit::config;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

EnvLookup env_of(std::map<std::string, std::string> vars) {
  auto shared = std::make_shared<std::map<std::string, std::string>>(std::move(vars));
  return [shared](const char* name) -> const char* {
    auto it = shared->find(name);
    return it == shared->end() ? nullptr : it->second.c_str();
  };
}

}  // namespace

TEST(Config, Defaults) {
  auto c = default_config();
  EXPECT_EQ(c.critic.endpoint, "mock:critic");
  EXPECT_EQ(c.scorer.endpoint, "mock:heuristic");
  EXPECT_EQ(c.fsbs.n, 4u);
  EXPECT_EQ(c.fsbs.expected_candidates(), 28u);
  EXPECT_EQ(c.port, 8080);
  EXPECT_DOUBLE_EQ(c.service.qc_rate, service::kDefaultQcRate);
  EXPECT_FALSE(c.critic.instructions.empty());
  auto from_empty = config_from_json(json::object());
  EXPECT_EQ(from_empty.critic.endpoint, c.critic.endpoint);
}

TEST(Config, FullDocument) {
  auto c = config_from_json(json::parse(R"({
    "seed": 9, "jobs": 2,
    "critic": {"endpoint": "mock:critic", "max_parallel": 3},
    "fsbs": {"n": 3, "k": 1, "d": 2},
    "serve": {"port": 9000, "qc_rate": 0.5, "prefill": "fsbs", "teaming": false, "lease_minutes": 5,
              "annotators": [{"id": "alice", "token": "t1"}, {"id": "bob", "token_env": "BOB_TOKEN"}]}
  })"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.service.seed, 9u);
  EXPECT_EQ(c.critic.max_parallel, 3u);
  EXPECT_EQ(c.fsbs.expected_candidates(), 3u * 2u);
  EXPECT_EQ(c.service.fsbs.n, 3u);
  EXPECT_EQ(c.service.prefill, service::PrefillMode::fsbs);
  EXPECT_FALSE(c.teaming);
  EXPECT_EQ(c.service.lease_duration, std::chrono::minutes(5));
  EXPECT_EQ(c.tokens.at("t1"), "alice");
  apply_env(c, env_of({{"BOB_TOKEN", "secret"}}));
  EXPECT_EQ(c.tokens.at("secret"), "bob");
  EXPECT_FALSE(c.tokens.contains("$BOB_TOKEN"));
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(error_of({{"bogus", 1}}), "bogus: unknown key");
  EXPECT_EQ(error_of({{"serve", {{"bogus", 1}}}}), "serve.bogus: unknown key");
  EXPECT_EQ(error_of({{"fsbs", {{"bogus", 1}}}}), "fsbs.bogus: unknown key");
  EXPECT_EQ(error_of({{"seed", "x"}}), "seed: wrong type");
  EXPECT_EQ(error_of({{"jobs", 0}}), "jobs: must be positive");
  EXPECT_EQ(error_of({{"serve", {{"port", 70000}}}}), "serve.port: out of range 1-65535");
  EXPECT_EQ(error_of({{"serve", {{"port", 0}}}}), "serve.port: out of range 1-65535");
  EXPECT_EQ(error_of({{"serve", {{"qc_rate", 0}}}}), "serve.qc_rate: must be in (0, 1]");
  EXPECT_EQ(error_of({{"serve", {{"prefill", "magic"}}}}), "serve.prefill: expected \"critic\" or \"fsbs\"");
  EXPECT_EQ(error_of({{"serve", {{"annotators", {{{"id", "a"}}}}}}}), "serve.annotators[0]: token or token_env required");
  EXPECT_EQ(error_of({{"critic", {{"endpoint", ""}}}}), "critic.endpoint: missing");
  EXPECT_FALSE(error_of({{"fsbs", {{"n", 0}}}}).empty());
}

TEST(Config, EnvironmentOverrides) {
  auto c = default_config();
  apply_env(c, env_of({{"CRITKIT_SEED", "77"},
                       {"CRITKIT_PORT", "9100"},
                       {"CRITKIT_HOST", "0.0.0.0"},
                       {"CRITKIT_QC_RATE", "0.25"},
                       {"CRITKIT_TEAMING", "false"},
                       {"CRITKIT_CRITIC_ENDPOINT", "mock:scripted:/x"}}));
  EXPECT_EQ(c.seed, 77u);
  EXPECT_EQ(c.service.seed, 77u);
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.host, "0.0.0.0");
  EXPECT_DOUBLE_EQ(c.service.qc_rate, 0.25);
  EXPECT_FALSE(c.teaming);
  EXPECT_EQ(c.critic.endpoint, "mock:scripted:/x");

  auto bad = default_config();
  EXPECT_THROW(apply_env(bad, env_of({{"CRITKIT_PORT", "99999"}})), ConfigError);
  EXPECT_THROW(apply_env(bad, env_of({{"CRITKIT_PORT", "80x"}})), ConfigError);
  EXPECT_THROW(apply_env(bad, env_of({{"CRITKIT_QC_RATE", "abc"}})), ConfigError);
  EXPECT_THROW(apply_env(bad, env_of({{"CRITKIT_TEAMING", "maybe"}})), ConfigError);

  auto missing = config_from_json({{"serve", {{"annotators", {{{"id", "bob"}, {"token_env", "NOPE"}}}}}}});
  EXPECT_THROW(apply_env(missing, env_of({})), ConfigError);
}

TEST(Config, LoadFile) {
  auto dir = testsupport::temp_dir("config");
  {
    std::ofstream(dir + "/ok.json") << R"({"seed": 3})";
    std::ofstream(dir + "/bad.json") << "{nope";
  }
  EXPECT_EQ(load_config(dir + "/ok.json").seed, 3u);
  EXPECT_THROW(load_config(dir + "/bad.json"), ConfigError);
  EXPECT_THROW(load_config(dir + "/missing.json"), ConfigError);
}
