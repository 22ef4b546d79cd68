#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "coad/dialogue.hpp"

namespace httplib {
class Server;
}

namespace coad {

struct ServiceOptions {
  std::chrono::seconds idle_timeout{30 * 60};
  std::size_t top_k = 3;
  InquiryOptions inquiry;
  std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

// Session-oriented diagnosis API. The handlers are plain member functions so
// they can be exercised without a socket; mount() wires them to an HTTP
// server under /v1.
//
//   POST /v1/sessions              {"explicit":[["name",1],...], "mode":"limited", "T_max":10}
//   POST /v1/sessions/{id}/answer  {"status":1}
//   GET  /v1/vocab
//   GET  /v1/healthz
//
// Session responses carry "session_id", "state" ("inquiry" or "diagnosis"),
// "turns", "T_max", "mode", "transcript" and either "inquiry" {id, symptom}
// or "diagnosis" {id, disease, probabilities, top}. Errors are
// {"code", "message"} with a 4xx status.
class DiagnosisService {
 public:
  DiagnosisService(std::shared_ptr<const CoadModel<float>> model, Vocab vocab, ServiceOptions options = {});

  ServiceResponse create_session(const nlohmann::json& body);
  ServiceResponse answer(const std::string& id, const nlohmann::json& body);
  ServiceResponse vocab() const;
  ServiceResponse health() const;

  // Parses the raw body and dispatches on method and path.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

  void mount(httplib::Server& server);

  std::size_t session_count() const;
  // Drops sessions idle for longer than the timeout; returns how many.
  std::size_t expire_idle();

 private:
  struct Entry {
    explicit Entry(DialogueSession s) : session(std::move(s)) {}
    std::mutex mutex;
    DialogueSession session;
    std::chrono::steady_clock::time_point last_used;
    bool expired = false;
  };

  std::shared_ptr<Entry> find(const std::string& id, ServiceResponse& error);
  nlohmann::json advance(const std::string& id, DialogueSession& session);
  nlohmann::json view(const std::string& id, const DialogueSession& session) const;
  std::string new_id();

  std::shared_ptr<const CoadModel<float>> model_;
  Vocab vocab_;
  ServiceOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

ServiceResponse error_response(int status, const std::string& code, const std::string& message);

}  // namespace coad
