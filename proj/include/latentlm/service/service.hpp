#pragma once

// JSON-over-HTTP access to a frozen model.
//
//   POST /encode       {"text"}              -> {"z": [P numbers]}
//   POST /decode       {"z"}                 -> {"text"}
//   POST /interpolate  {"a", "b", "steps"?}  -> {"rows": [{"tau", "text"}]}
//   POST /arith        {"a", "b", "c"}       -> {"z_d", "text"}
//   GET  /model/info                         -> {"config", "step", "seed", "vocab_size"}
//
// Errors are {"error": message} with status 400 for malformed requests, 413
// for sentences longer than the model accepts, 404/405 for unknown routes
// and 503 when the in-flight bound is reached.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <thread>

#include "latentlm/model/model.hpp"

namespace httplib {
class Server;
}

namespace latentlm {

struct ServiceOptions {
  /// Requests decoded concurrently; later ones get 503.
  std::size_t max_in_flight = 4;
  std::size_t worker_threads = 4;
  std::size_t max_body_bytes = 1 << 16;
  std::size_t max_interpolation_steps = 101;
};

struct ServiceResponse {
  int status = 200;
  std::string body;
};

/// Request handling independent of the transport; thread-safe.
class Service {
 public:
  Service(const Model& model, ServiceOptions options = {});

  ServiceResponse handle(std::string_view method, std::string_view path, std::string_view body) const;
  const ServiceOptions& options() const { return options_; }

 private:
  ServiceResponse dispatch(std::string_view method, std::string_view path, std::string_view body) const;

  const Model& model_;
  ServiceOptions options_;
  mutable std::atomic<std::size_t> in_flight_{0};
};

/// Runs a Service over HTTP on a background thread.
class HttpServer {
 public:
  HttpServer(const Model& model, ServiceOptions options = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and starts serving. Returns
  /// the bound port; throws IoError when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop() is called from elsewhere.
  void run(const std::string& host, int port);
  void stop();

 private:
  void configure();

  Service service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace latentlm
