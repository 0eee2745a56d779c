#pragma once

// Generator and reward-scorer backends behind one calling convention.
//
// Backends are addressed by an endpoint string:
//   mock:critic            deterministic synthetic critic (generator)
//   mock:heuristic         published heuristic scorer (scorer)
//   mock:scripted:<path>   lookup table keyed by (seed, prefix hash)
//   replay:<path>          recorded request/response exchanges
//   http://host:port[/base]  live backend speaking the v1 wire protocol

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace critkit::gateway {

enum class BackendKind { generator, scorer };

struct BackendDescriptor {
  BackendKind kind = BackendKind::generator;
  std::string endpoint;
  // Name of the environment variable holding the bearer token, if any.
  std::string auth_env;
  std::chrono::milliseconds timeout{30000};
  std::size_t max_parallel = 4;
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{100};
  // Instructions forwarded to live critics. Mocks ignore it.
  std::string instructions;
};

/// Shipped default critic instructions; configuration, not ground truth.
extern const char* const kDefaultCriticInstructions;

/// Terminal marker some hosts leave in returned text.
inline constexpr std::string_view kEndOfSequenceMarker = "<|endoftext|>";

struct GenerationRequest {
  std::string request_id;
  std::string question;
  std::string answer;
  std::string critique_prefix;
  std::size_t max_continuation = 512;
  std::uint64_t sample_seed = 0;
  double temperature = 1.0;
};

struct Generation {
  std::string text;
  bool end_of_sequence = false;
  friend bool operator==(const Generation&, const Generation&) = default;
};

struct RewardRequest {
  std::string request_id;
  std::string question;
  std::string answer;
  std::string critique;
};

enum class ErrorKind { transport, protocol, config, invalid_request };

class GatewayError : public std::runtime_error {
 public:
  GatewayError(ErrorKind kind, std::string request_id, const std::string& message);

  ErrorKind kind() const { return kind_; }
  const std::string& request_id() const { return request_id_; }
  bool retriable() const { return kind_ == ErrorKind::transport; }

 private:
  ErrorKind kind_;
  std::string request_id_;
};

std::string_view to_string(ErrorKind kind);

/// Stable id derived from request contents when the caller supplies none.
std::string derive_request_id(const GenerationRequest& req);
std::string derive_request_id(const RewardRequest& req);

/// Bounds the number of concurrently executing calls.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(std::size_t limit);

  void acquire();
  void release();
  std::size_t limit() const { return limit_; }

  class Permit {
   public:
    explicit Permit(ConcurrencyLimiter& l) : limiter_(&l) { limiter_->acquire(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    ~Permit() { limiter_->release(); }

   private:
    ConcurrencyLimiter* limiter_;
  };

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t limit_;
  std::size_t in_use_ = 0;
};

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{100};
};

class Generator {
 public:
  explicit Generator(std::size_t max_parallel, RetryPolicy retry = {});
  virtual ~Generator() = default;
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  /// Validates, applies the concurrency bound and retries transport errors.
  Generation generate(const GenerationRequest& req);
  std::size_t max_parallel() const { return limiter_.limit(); }

 protected:
  virtual Generation do_generate(const GenerationRequest& req) = 0;

 private:
  ConcurrencyLimiter limiter_;
  RetryPolicy retry_;
};

class Scorer {
 public:
  explicit Scorer(std::size_t max_parallel, RetryPolicy retry = {});
  virtual ~Scorer() = default;
  Scorer(const Scorer&) = delete;
  Scorer& operator=(const Scorer&) = delete;

  /// Finite score, higher is better.
  double score(const RewardRequest& req);
  std::size_t max_parallel() const { return limiter_.limit(); }

 protected:
  virtual double do_score(const RewardRequest& req) = 0;

 private:
  ConcurrencyLimiter limiter_;
  RetryPolicy retry_;
};

template <typename T>
struct BatchItem {
  std::optional<T> value;
  std::optional<GatewayError> error;
  bool ok() const { return value.has_value(); }
};

/// Results are positionally aligned with the requests. Per-item failures
/// are isolated.
std::vector<BatchItem<Generation>> generate_batch(std::span<const GenerationRequest> reqs,
                                                  Generator& backend);

/// Same, with a backend per request.
std::vector<BatchItem<Generation>> generate_batch(std::span<const GenerationRequest> reqs,
                                                  std::span<Generator* const> backends);

std::vector<BatchItem<double>> score_batch(std::span<const RewardRequest> reqs, Scorer& backend);

std::unique_ptr<Generator> make_generator(const BackendDescriptor& desc);
std::unique_ptr<Scorer> make_scorer(const BackendDescriptor& desc);

// --- mock backends -------------------------------------------------------

struct SyntheticCriticOptions {
  double hallucination_rate = 0.25;
  double extra_highlight_rate = 0.35;
  double summary_rate = 0.5;
};

/// Deterministic stand-in critic. Output is a pure function of
/// (sample_seed, critique_prefix, answer). A prefix ending in an open fence
/// is completed with a quoted answer line and a comment; any other prefix
/// receives a fresh critique with one to three highlights.
class SyntheticCritic : public Generator {
 public:
  explicit SyntheticCritic(std::size_t max_parallel = 4, SyntheticCriticOptions opts = {});

 protected:
  Generation do_generate(const GenerationRequest& req) override;

 private:
  SyntheticCriticOptions opts_;
};

/// score = 1.0 * anchored - 2.0 * unanchored - 0.05 * (comment chars / 100)
class HeuristicScorer : public Scorer {
 public:
  static constexpr double kAnchoredBonus = 1.0;
  static constexpr double kUnanchoredPenalty = 2.0;
  static constexpr double kLengthPenaltyPer100Chars = 0.05;

  explicit HeuristicScorer(std::size_t max_parallel = 4);

  static double evaluate(std::string_view critique, std::string_view answer);

 protected:
  double do_score(const RewardRequest& req) override;
};

/// Table lookup keyed by (sample_seed, fnv1a64(critique_prefix)).
class ScriptedGenerator : public Generator {
 public:
  using Key = std::pair<std::uint64_t, std::uint64_t>;

  explicit ScriptedGenerator(std::map<Key, Generation> table, std::size_t max_parallel = 4);
  static std::unique_ptr<ScriptedGenerator> from_file(const std::string& path,
                                                      std::size_t max_parallel = 4);
  static Key key_for(std::uint64_t seed, std::string_view prefix);

 protected:
  Generation do_generate(const GenerationRequest& req) override;

 private:
  std::map<Key, Generation> table_;
};

}  // namespace critkit::gateway
