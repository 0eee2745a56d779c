#include "critkit/http_api.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

#include <httplib.h>

namespace critkit::http_api {

using nlohmann::json;
using service::ErrorCode;
using service::ServiceError;

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::unauthorized: return 401;
    case ErrorCode::bad_request: return 400;
    case ErrorCode::validation_failed: return 422;
    case ErrorCode::not_found: return 404;
    case ErrorCode::lease_conflict: return 409;
    case ErrorCode::lease_invalid: return 403;
    case ErrorCode::lease_expired: return 410;
    case ErrorCode::backend_unavailable: return 503;
  }
  return 500;
}

namespace {

Response error(int status, std::string_view code, const std::string& message,
               const std::vector<std::string>& fields = {}) {
  json e = {{"code", code}, {"message", message}};
  if (!fields.empty()) e["fields"] = fields;
  return {status, json{{"error", e}}.dump()};
}

Response ok(const json& body) { return {200, body.dump()}; }

// Field access that reports the JSON path on failure.
class Body {
 public:
  explicit Body(const json& j) : j_(j) {}

  template <typename T>
  T get(const char* key) const {
    if (!j_.contains(key)) throw ServiceError(ErrorCode::bad_request, "missing field", {std::string(key) + ": missing"});
    return as<T>(j_[key], key);
  }

  template <typename T>
  T get_or(const char* key, T fallback) const {
    if (!j_.contains(key) || j_[key].is_null()) return fallback;
    return as<T>(j_[key], key);
  }

  const json& raw(const char* key) const {
    if (!j_.contains(key)) throw ServiceError(ErrorCode::bad_request, "missing field", {std::string(key) + ": missing"});
    return j_[key];
  }

  template <typename T>
  static T as(const json& v, const std::string& path) {
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ServiceError(ErrorCode::bad_request, "wrong type", {path + ": wrong type"});
    }
  }

 private:
  const json& j_;
};

std::optional<int> opt_score(const json& f, const std::string& path, const char* key) {
  if (!f.contains(key) || f[key].is_null()) return std::nullopt;
  return Body::as<int>(f[key], path + key);
}

// Ranges are left to validate_form so that every bad field is listed.
RatingForm form_from_request(const json& f, const std::string& path) {
  if (!f.is_object()) throw ServiceError(ErrorCode::bad_request, "wrong type", {path + ": expected an object"});
  RatingForm form;
  if (f.contains("cbi") && !f["cbi"].is_null()) form.cbi = Body::as<std::vector<int>>(f["cbi"], path + "cbi");
  form.comprehensiveness = opt_score(f, path, "comprehensiveness");
  form.nitpick = opt_score(f, path, "nitpick");
  form.fake_problem = opt_score(f, path, "fake_problem");
  form.conciseness = opt_score(f, path, "conciseness");
  form.overall = opt_score(f, path, "overall");
  if (f.contains("rationale")) form.rationale = Body::as<std::string>(f["rationale"], path + "rationale");
  return form;
}

std::vector<datasets::Bug> bugs_from_request(const json& arr) {
  if (!arr.is_array()) throw ServiceError(ErrorCode::bad_request, "wrong type", {"bugs: expected an array"});
  std::vector<datasets::Bug> bugs;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    auto path = "bugs[" + std::to_string(i) + "].";
    const auto& b = arr[i];
    datasets::Bug bug;
    bug.description = b.contains("description") ? Body::as<std::string>(b["description"], path + "description") : "";
    bug.severity = b.contains("severity") ? Body::as<int>(b["severity"], path + "severity") : 0;
    auto span = b.contains("span") ? Body::as<std::vector<std::size_t>>(b["span"], path + "span")
                                   : std::vector<std::size_t>{};
    if (span.size() != 2) throw ServiceError(ErrorCode::bad_request, "wrong type", {path + "span: expected [start, end]"});
    bug.span = {span[0], span[1]};
    bugs.push_back(std::move(bug));
  }
  return bugs;
}

json lease_json(const service::TaskLease& l) {
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(l.expires_at.time_since_epoch());
  return {{"lease_id", l.lease_id},
          {"task_id", l.task_id},
          {"annotator_id", l.annotator_id},
          {"kind", service::to_string(l.kind)},
          {"expires_at_ms", ms.count()}};
}

json checks_json(const std::vector<datasets::AdversarialCheck>& checks) {
  json out = json::array();
  for (std::size_t i = 0; i < checks.size(); ++i) {
    out.push_back({{"bug", i},
                   {"samples", checks[i].samples},
                   {"caught_count", checks[i].caught_count},
                   {"passed", checks[i].passed()}});
  }
  return out;
}

}  // namespace

Response Api::handle(const Request& req) const {
  if (req.path == "/v1/health") {
    return ok({{"version", kApiVersion}, {"status", "ok"}});
  }
  static const std::vector<std::string> routes{
      "/v1/tasks/next",       "/v1/tasks/lease",          "/v1/leases/renew",
      "/v1/tamper/check",     "/v1/tamper/submit",        "/v1/comparisons/submit",
      "/v1/critiques/prefill", "/v1/critiques/submit",    "/v1/qc/select"};
  if (std::find(routes.begin(), routes.end(), req.path) == routes.end()) {
    return error(404, "not_found", "no route " + req.path);
  }
  if (req.method != "POST") return error(405, "method_not_allowed", "use POST");

  try {
    auto auth = req.headers.find("authorization");
    std::string token;
    if (auth != req.headers.end() && auth->second.starts_with("Bearer ")) token = auth->second.substr(7);
    const std::string who = svc_.authenticate(token);

    auto j = req.body.empty() ? json::object() : json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      return error(400, "bad_request", "body is not a JSON object");
    }
    Body body(j);

    if (req.path == "/v1/tasks/next" || req.path == "/v1/tasks/lease") {
      service::TaskKind kind;
      try {
        kind = service::task_kind_from_string(body.get<std::string>("kind"));
      } catch (const std::invalid_argument& e) {
        throw ServiceError(ErrorCode::bad_request, e.what(), {"kind: unknown task kind"});
      }
      std::optional<service::LeasedTask> t;
      if (req.path == "/v1/tasks/next") {
        t = svc_.next_task(who, kind);
      } else {
        t = svc_.lease_task(who, body.get<std::string>("task_id"), kind);
      }
      if (!t) return ok({{"version", kApiVersion}, {"lease", nullptr}, {"task", nullptr}});
      return ok({{"version", kApiVersion}, {"lease", lease_json(t->lease)}, {"task", t->payload}});
    }
    if (req.path == "/v1/leases/renew") {
      auto l = svc_.renew_lease(who, body.get<std::string>("lease_id"));
      return ok({{"version", kApiVersion}, {"lease", lease_json(l)}});
    }
    if (req.path == "/v1/tamper/check") {
      auto bugs = bugs_from_request(body.raw("bugs"));
      auto r = svc_.adversarial_check(who, body.get<std::string>("lease_id"),
                                      body.get<std::string>("tampered_answer"), bugs);
      return ok({{"version", kApiVersion},
                 {"verdict", r.verdict},
                 {"checks", checks_json(r.checks)},
                 {"critiques", r.critiques},
                 {"message", r.message}});
    }
    if (req.path == "/v1/tamper/submit") {
      datasets::TamperRecord draft;
      draft.tampered_answer = body.get<std::string>("tampered_answer");
      draft.bugs = bugs_from_request(body.raw("bugs"));
      draft.override_reason = body.get_or<std::string>("override_reason", "");
      draft.task_id = body.get_or<std::string>("task_id", "");
      auto r = svc_.submit_tamper(who, body.get<std::string>("lease_id"), std::move(draft));
      return ok({{"version", kApiVersion},
                 {"tamper_id", r.record.id},
                 {"verdict", r.record.verdict},
                 {"checks", checks_json(r.record.adversarial_checks)},
                 {"flagged", r.flagged},
                 {"warnings", r.warnings}});
    }
    if (req.path == "/v1/comparisons/submit") {
      const auto& arr = body.raw("forms");
      if (!arr.is_array()) throw ServiceError(ErrorCode::bad_request, "wrong type", {"forms: expected an array"});
      std::vector<RatingForm> forms;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        forms.push_back(form_from_request(arr[i], "forms[" + std::to_string(i) + "]."));
      }
      auto rec = svc_.submit_comparison(who, body.get<std::string>("lease_id"), std::move(forms));
      return ok({{"version", kApiVersion}, {"task_id", rec.task_id}, {"stored", true}});
    }
    if (req.path == "/v1/critiques/prefill") {
      auto p = svc_.prefill_critique(who, body.get<std::string>("lease_id"));
      json out = {{"version", kApiVersion},
                  {"enabled", p.enabled},
                  {"failed", p.failed},
                  {"message", p.message},
                  {"critique", nullptr}};
      if (p.enabled && !p.failed) {
        out["critique_id"] = p.critique_id;
        out["critique"] = service::critique_to_json(p.critique);
      }
      return ok(out);
    }
    if (req.path == "/v1/critiques/submit") {
      Critique c;
      try {
        c = service::critique_from_json(body.raw("critique"));
      } catch (const std::exception& e) {
        throw ServiceError(ErrorCode::bad_request, e.what(), {"critique: malformed"});
      }
      auto r = svc_.submit_critique(who, body.get<std::string>("lease_id"), std::move(c));
      return ok({{"version", kApiVersion},
                 {"critique_id", r.critique.critique_id},
                 {"interaction_log", records::RecordCodec<InteractionLog>::encode(r.log)}});
    }
    if (req.path == "/v1/qc/select") {
      std::optional<double> rate;
      if (j.contains("rate")) rate = body.get<double>("rate");
      auto r = svc_.qc_queue(rate);
      json queue = json::array();
      for (const auto& a : r.queue) queue.push_back(records::RecordCodec<records::QcAssignment>::encode(a));
      return ok({{"version", kApiVersion}, {"queue", queue}, {"warnings", r.warnings}});
    }
  } catch (const ServiceError& e) {
    return error(status_for(e.code()), service::to_string(e.code()), e.what(), e.fields());
  } catch (const records::RecordError& e) {
    return error(500, "storage_error", e.what());
  }
  return error(404, "not_found", "no route " + req.path);
}

struct Server::Impl {
  httplib::Server server;
};

Server::Server(const Api& api) : impl_(std::make_unique<Impl>()) {
  const Api* target = &api;
  auto handler = [target](const httplib::Request& hreq, httplib::Response& hres) {
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    req.body = hreq.body;
    for (const auto& [k, v] : hreq.headers) {
      std::string key = k;
      std::transform(key.begin(), key.end(), key.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      req.headers[key] = v;
    }
    auto res = target->handle(req);
    hres.status = res.status;
    hres.set_content(res.body, "application/json");
  };
  impl_->server.Get(R"(/.*)", handler);
  impl_->server.Post(R"(/.*)", handler);
}

Server::~Server() = default;

bool Server::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
    return port_ > 0;
  }
  if (!impl_->server.bind_to_port(host, port)) return false;
  port_ = port;
  return true;
}

void Server::run() { impl_->server.listen_after_bind(); }

void Server::stop() { impl_->server.stop(); }

}  // namespace critkit::http_api
