#pragma once

// Append-only line-delimited record files. Each line is one JSON object
// carrying "type" and "version" next to the record fields; field lists are
// in docs/records.md.

#include <filesystem>
#include <fstream>
#include <istream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "critkit/analytics.hpp"
#include "critkit/datasets.hpp"
#include "critkit/forms.hpp"
#include "critkit/task.hpp"

namespace critkit::records {

inline constexpr int kRecordVersion = 1;

class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredCritique {
  std::string critique_id;
  std::string task_id;
  std::string source_id;
  std::string author_id;
  std::string text;
};

struct QcAssignment {
  std::string submission_id;
  std::string author_id;
  std::string reviewer_id;
};

template <typename T>
struct RecordCodec;

#define CRITKIT_RECORD_CODEC(Type, name)              \
  template <>                                         \
  struct RecordCodec<Type> {                          \
    static constexpr std::string_view type = name;    \
    static nlohmann::json encode(const Type& value);  \
    static Type decode(const nlohmann::json& j);      \
  }

CRITKIT_RECORD_CODEC(QATask, "qa_task");
CRITKIT_RECORD_CODEC(datasets::TamperRecord, "tamper");
CRITKIT_RECORD_CODEC(datasets::Decline, "decline");
CRITKIT_RECORD_CODEC(StoredCritique, "critique");
CRITKIT_RECORD_CODEC(RatingForm, "rating_form");
CRITKIT_RECORD_CODEC(ComparisonRecord, "comparison");
CRITKIT_RECORD_CODEC(InteractionLog, "interaction_log");
CRITKIT_RECORD_CODEC(QcAssignment, "qc_assignment");
CRITKIT_RECORD_CODEC(analytics::DoublyRatedItem, "double_rating");
CRITKIT_RECORD_CODEC(analytics::DcItem, "dc_item");

#undef CRITKIT_RECORD_CODEC

template <typename T>
std::string encode_line(const T& value) {
  nlohmann::json j = RecordCodec<T>::encode(value);
  j["type"] = RecordCodec<T>::type;
  j["version"] = kRecordVersion;
  return j.dump();
}

/// Throws RecordError on wrong type, unknown version or invalid contents.
template <typename T>
T decode_line(std::string_view line) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw RecordError("malformed JSON");
  if (!j.contains("type") || j["type"] != RecordCodec<T>::type) {
    throw RecordError("expected record type " + std::string(RecordCodec<T>::type));
  }
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    throw RecordError("missing version");
  }
  if (j["version"].get<int>() != kRecordVersion) {
    throw RecordError("unsupported version " + j["version"].dump());
  }
  try {
    return RecordCodec<T>::decode(j);
  } catch (const nlohmann::json::exception& e) {
    throw RecordError(e.what());
  }
}

struct LoadError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

template <typename T>
struct Loaded {
  std::vector<T> records;
  std::vector<LoadError> errors;
};

/// Corrupt lines are reported with their line number; the rest still load.
/// A final line without a terminating newline is an uncommitted write and
/// reported as an error.
template <typename T>
Loaded<T> load(std::istream& in) {
  Loaded<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const bool committed = !in.eof();
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!committed) {
      out.errors.push_back({lineno, "truncated record (no trailing newline)"});
      break;
    }
    try {
      out.records.push_back(decode_line<T>(line));
    } catch (const RecordError& e) {
      out.errors.push_back({lineno, e.what()});
    }
  }
  return out;
}

template <typename T>
Loaded<T> load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  return load<T>(in);
}

/// Directory of record files, one per record type. Appends are serialized
/// through one mutex per store and flushed line by line.
class Store {
 public:
  explicit Store(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  template <typename T>
  std::filesystem::path path_for() const {
    return dir_ / (std::string(RecordCodec<T>::type) + ".jsonl");
  }

  template <typename T>
  void append(const T& value) {
    auto line = encode_line(value);
    std::lock_guard lock(mu_);
    std::ofstream out(path_for<T>(), std::ios::app | std::ios::binary);
    if (!out) throw RecordError("cannot open " + path_for<T>().string() + " for append");
    out << line << '\n';
    out.flush();
    if (!out) throw RecordError("write failed for " + path_for<T>().string());
  }

  template <typename T>
  Loaded<T> load_all() const {
    return load_file<T>(path_for<T>());
  }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

// Exposed for embedding in other payloads.
nlohmann::json form_to_json(const RatingForm& form);
RatingForm form_from_json(const nlohmann::json& j);

}  // namespace critkit::records
