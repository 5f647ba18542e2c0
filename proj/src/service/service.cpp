#include "latentlm/service/service.hpp"

#include <cmath>

#include "httplib.h"
#include "json.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/io/checkpoint.hpp"
#include "latentlm/latent/ops.hpp"

namespace latentlm {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Raised for requests that are well-formed HTTP but invalid for the API.
struct BadRequest {
  int status;
  std::string message;
};

ServiceResponse error(int status, const std::string& message) {
  return {status, ordered_json{{"error", message}}.dump()};
}

ServiceResponse ok(const ordered_json& j) { return {200, j.dump()}; }

json parse_object(std::string_view body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw BadRequest{400, "request body is not valid JSON"};
  if (!j.is_object()) throw BadRequest{400, "request body must be a JSON object"};
  return j;
}

std::string text_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw BadRequest{400, std::string("field '") + key + "' must be a string"};
  return it->get<std::string>();
}

std::vector<double> latent_field(const json& j, const char* key, std::size_t size) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw BadRequest{400, std::string("field '") + key + "' must be an array"};
  if (it->size() != size)
    throw BadRequest{400, std::string("field '") + key + "' must have " + std::to_string(size) + " entries"};
  std::vector<double> z;
  for (const auto& v : *it) {
    if (!v.is_number()) throw BadRequest{400, std::string("field '") + key + "' must hold numbers"};
    z.push_back(v.get<double>());
  }
  return z;
}

// Tokenizer failures are client errors; an over-long sentence gets 413.
template <typename F>
auto with_text_errors(F&& f) {
  try {
    return f();
  } catch (const RangeError& e) {
    throw BadRequest{413, e.what()};
  } catch (const TokenError& e) {
    throw BadRequest{400, e.what()};
  }
}

class InFlight {
 public:
  InFlight(std::atomic<std::size_t>& counter, std::size_t limit) : counter_(counter) {
    acquired_ = counter_.fetch_add(1) < limit;
  }
  ~InFlight() { counter_.fetch_sub(1); }
  bool acquired() const { return acquired_; }

 private:
  std::atomic<std::size_t>& counter_;
  bool acquired_;
};

}  // namespace

Service::Service(const Model& model, ServiceOptions options) : model_(model), options_(options) {}

ServiceResponse Service::handle(std::string_view method, std::string_view path, std::string_view body) const {
  try {
    return dispatch(method, path, body);
  } catch (const BadRequest& e) {
    return error(e.status, e.message);
  } catch (const Error& e) {
    return error(500, e.what());
  }
}

ServiceResponse Service::dispatch(std::string_view method, std::string_view path, std::string_view body) const {
  const std::size_t p = model_.params.config.latent;
  if (path == "/model/info") {
    if (method != "GET") return error(405, "use GET for /model/info");
    ordered_json j;
    j["config"] = model_config_to_json(model_.params.config);
    j["step"] = model_.step;
    j["seed"] = model_.seed;
    j["vocab_size"] = model_.vocab.size();
    return ok(j);
  }
  if (path != "/encode" && path != "/decode" && path != "/interpolate" && path != "/arith")
    return error(404, "no such endpoint");
  if (method != "POST") return error(405, "use POST for " + std::string(path));
  if (body.size() > options_.max_body_bytes) return error(413, "request body too large");

  const InFlight slot(in_flight_, options_.max_in_flight);
  if (!slot.acquired()) return error(503, "too many requests in flight");
  const json req = parse_object(body);

  if (path == "/encode") {
    const auto z = with_text_errors([&] { return embed_mean(model_, text_field(req, "text")); });
    return ok(ordered_json{{"z", z}});
  }
  if (path == "/decode") return ok(ordered_json{{"text", decode_latent(model_, latent_field(req, "z", p))}});
  if (path == "/interpolate") {
    const std::string a = text_field(req, "a"), b = text_field(req, "b");
    std::size_t steps = 11;
    if (const auto it = req.find("steps"); it != req.end()) {
      if (!it->is_number_integer() || it->get<long long>() < 2 ||
          it->get<long long>() > static_cast<long long>(options_.max_interpolation_steps))
        throw BadRequest{400, "field 'steps' must be an integer in [2, " +
                                  std::to_string(options_.max_interpolation_steps) + "]"};
      steps = it->get<std::size_t>();
    }
    const auto r = with_text_errors([&] { return interpolate(model_, a, b, steps); });
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < r.taus.size(); ++i) rows.push_back({{"tau", r.taus[i]}, {"text", r.sentences[i]}});
    return ok(ordered_json{{"rows", std::move(rows)}});
  }
  const std::string a = text_field(req, "a"), b = text_field(req, "b"), c = text_field(req, "c");
  const auto r = with_text_errors([&] { return arithmetic(model_, a, b, c); });
  return ok(ordered_json{{"z_d", r.z_d}, {"text", r.sentence}});
}

HttpServer::HttpServer(const Model& model, ServiceOptions options)
    : service_(model, options), server_(std::make_unique<httplib::Server>()) {
  configure();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::configure() {
  const auto& opt = service_.options();
  const std::size_t threads = opt.worker_threads;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  server_->set_payload_max_length(opt.max_body_bytes);
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = service_.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json; charset=utf-8");
  };
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty())
      res.set_content(ordered_json{{"error", httplib::status_message(res.status)}}.dump(),
                      "application/json; charset=utf-8");
  });
  server_->Get(".*", route);
  server_->Post(".*", route);
  server_->Put(".*", route);
  server_->Delete(".*", route);
}

int HttpServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  server_->listen_after_bind();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace latentlm
