#pragma once

// Stateless HTTP facade: POST /v1/<command> with a parameter document,
// GET /v1/health. Usage errors answer 400, computation errors 422.

#include <chrono>
#include <string>

#include "httplib.h"

#include "esskit/api.hpp"
#include "esskit/version.hpp"

namespace esskit {

struct ServiceOptions {
  int replication_cap = 10000;
  std::chrono::milliseconds request_timeout{60000};
  std::string cors_origin = "*";
  /// Static assets for the elicitation UI, mounted at "/" when set.
  std::string ui_dir;
};

class Service {
 public:
  explicit Service(ServiceOptions options = {}) : options_(std::move(options)) { install(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves until stop(); returns false if the bind failed.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds to an ephemeral port and returns it (or -1); serve with
  /// listen_after_bind().
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  void stop() { server_.stop(); }

  httplib::Server& server() { return server_; }

 private:
  void install() {
    server_.set_payload_max_length(1 << 20);
    if (!options_.ui_dir.empty() && !server_.set_mount_point("/", options_.ui_dir)) {
      throw Error(ErrorCode::InvalidArgument, "UI directory '" + options_.ui_dir + "' does not exist");
    }
    server_.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      if (!options_.cors_origin.empty()) {
        res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
      }
    });
    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}, {"engine_version", engine_version}});
    });
    for (const auto command : api::kCommands) {
      const std::string name(command);
      server_.Post("/v1/" + name, [this, name](const httplib::Request& req, httplib::Response& res) {
        handle(name, req, res);
      });
    }
  }

  static void reply(httplib::Response& res, int status, const api::Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void handle(const std::string& command, const httplib::Request& req, httplib::Response& res) const {
    try {
      api::Json params;
      try {
        params = api::Json::parse(req.body);
      } catch (const api::Json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("request body is not valid JSON: ") + e.what());
      }
      api::RunLimits limits;
      limits.replication_cap = options_.replication_cap;
      limits.deadline = std::chrono::steady_clock::now() + options_.request_timeout;
      reply(res, 200, api::run(command, params, limits));
    } catch (const Error& e) {
      reply(res, e.is_usage_error() ? 400 : 422, api::error_json(e));
    } catch (const std::exception& e) {
      reply(res, 500, {{"code", "INTERNAL"}, {"message", e.what()}, {"engine_version", engine_version}});
    }
  }

  ServiceOptions options_;
  httplib::Server server_;
};

}  // namespace esskit
