#pragma once

// v1 backend wire protocol. One JSON request body per call, one JSON
// response body back. Field-by-field description lives in docs/wire.md.

#include <string>
#include <string_view>

#include "critkit/gateway.hpp"

namespace critkit::wire {

inline constexpr std::string_view kVersion = "v1";
inline constexpr std::string_view kGeneratePath = "/v1/generate";
inline constexpr std::string_view kScorePath = "/v1/score";

std::string encode_generation_request(const gateway::GenerationRequest& req,
                                      std::string_view instructions);
std::string encode_reward_request(const gateway::RewardRequest& req);

gateway::GenerationRequest decode_generation_request(std::string_view body);
gateway::RewardRequest decode_reward_request(std::string_view body);

std::string encode_generation_response(const gateway::Generation& gen);
std::string encode_score_response(double score);

/// Throws GatewayError(protocol) on malformed bodies.
gateway::Generation decode_generation_response(std::string_view body,
                                               const std::string& request_id);
double decode_score_response(std::string_view body, const std::string& request_id);

}  // namespace critkit::wire
