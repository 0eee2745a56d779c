#pragma once

#include <map>
#include <string>
#include <string_view>

namespace critkit {

enum class Distribution { unmodified, inserted_bug, detected_bug };

std::string_view to_string(Distribution d);
Distribution distribution_from_string(std::string_view s);

/// A (question, answer) pair. The answer is the extracted code block of
/// full_response.
struct QATask {
  std::string id;
  std::string question;
  std::string answer;
  std::string full_response;
  Distribution distribution = Distribution::unmodified;
  double language_fraction = 0.0;
  std::map<std::string, std::string> metadata;
};

}  // namespace critkit
