#pragma once

// JSON-over-HTTP front of the annotation service. Endpoints and payloads are
// listed in docs/wire.md ("Annotation API"). Errors come back as
//   {"error": {"code": "...", "message": "...", "fields": [...]}}

#include <map>
#include <memory>
#include <string>

#include "critkit/service.hpp"

namespace critkit::http_api {

inline constexpr std::string_view kApiVersion = "v1";

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
};

int status_for(service::ErrorCode code);

/// Transport-free request dispatcher.
class Api {
 public:
  explicit Api(service::AnnotationService& svc) : svc_(svc) {}
  Response handle(const Request& req) const;

 private:
  service::AnnotationService& svc_;
};

class Server {
 public:
  explicit Server(const Api& api);
  ~Server();

  /// False when the address cannot be bound. Port 0 picks a free port.
  bool bind(const std::string& host, int port);
  int port() const { return port_; }
  /// Blocks until stop() is called from another thread.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace critkit::http_api
