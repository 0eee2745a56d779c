#include "critkit/wire.hpp"

#include <cmath>

#include <json.hpp>

namespace critkit::wire {

using nlohmann::json;
using gateway::ErrorKind;
using gateway::GatewayError;

std::string encode_generation_request(const gateway::GenerationRequest& req,
                                      std::string_view instructions) {
  json j = {{"version", kVersion},
            {"request_id", req.request_id},
            {"question", req.question},
            {"answer", req.answer},
            {"critique_prefix", req.critique_prefix},
            {"max_continuation", req.max_continuation},
            {"sample_seed", req.sample_seed},
            {"temperature", req.temperature}};
  if (!instructions.empty()) j["instructions"] = instructions;
  return j.dump();
}

std::string encode_reward_request(const gateway::RewardRequest& req) {
  json j = {{"version", kVersion},
            {"request_id", req.request_id},
            {"question", req.question},
            {"answer", req.answer},
            {"critique", req.critique}};
  return j.dump();
}

namespace {

json parse_body(std::string_view body, const std::string& request_id) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw GatewayError(ErrorKind::protocol, request_id, "response is not a JSON object");
  }
  auto v = j.find("version");
  if (v == j.end() || !v->is_string() || *v != kVersion) {
    throw GatewayError(ErrorKind::protocol, request_id, "missing or unsupported version");
  }
  return j;
}

}  // namespace

gateway::GenerationRequest decode_generation_request(std::string_view body) {
  json j = parse_body(body, "");
  try {
    gateway::GenerationRequest req;
    req.request_id = j.value("request_id", "");
    req.question = j.at("question").get<std::string>();
    req.answer = j.at("answer").get<std::string>();
    req.critique_prefix = j.at("critique_prefix").get<std::string>();
    req.max_continuation = j.at("max_continuation").get<std::size_t>();
    req.sample_seed = j.at("sample_seed").get<std::uint64_t>();
    req.temperature = j.value("temperature", 1.0);
    return req;
  } catch (const json::exception& e) {
    throw GatewayError(ErrorKind::protocol, j.value("request_id", ""), e.what());
  }
}

gateway::RewardRequest decode_reward_request(std::string_view body) {
  json j = parse_body(body, "");
  try {
    gateway::RewardRequest req;
    req.request_id = j.value("request_id", "");
    req.question = j.at("question").get<std::string>();
    req.answer = j.at("answer").get<std::string>();
    req.critique = j.at("critique").get<std::string>();
    return req;
  } catch (const json::exception& e) {
    throw GatewayError(ErrorKind::protocol, j.value("request_id", ""), e.what());
  }
}

std::string encode_generation_response(const gateway::Generation& gen) {
  return json{{"version", kVersion}, {"text", gen.text}, {"end_of_sequence", gen.end_of_sequence}}
      .dump();
}

std::string encode_score_response(double score) {
  return json{{"version", kVersion}, {"score", score}}.dump();
}

gateway::Generation decode_generation_response(std::string_view body,
                                               const std::string& request_id) {
  json j = parse_body(body, request_id);
  auto text = j.find("text");
  auto eos = j.find("end_of_sequence");
  if (text == j.end() || !text->is_string() || eos == j.end() || !eos->is_boolean()) {
    throw GatewayError(ErrorKind::protocol, request_id,
                       "generation response needs string 'text' and boolean 'end_of_sequence'");
  }
  return {text->get<std::string>(), eos->get<bool>()};
}

double decode_score_response(std::string_view body, const std::string& request_id) {
  json j = parse_body(body, request_id);
  auto s = j.find("score");
  if (s == j.end() || !s->is_number()) {
    throw GatewayError(ErrorKind::protocol, request_id, "score response needs numeric 'score'");
  }
  double value = s->get<double>();
  if (!std::isfinite(value)) {
    throw GatewayError(ErrorKind::protocol, request_id, "score is not finite");
  }
  return value;
}

}  // namespace critkit::wire
