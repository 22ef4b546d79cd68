#include "coad/service.hpp"

#include <iomanip>
#include <random>
#include <regex>
#include <sstream>

#include <httplib.h>

#include "coad/error.hpp"
#include "coad/log.hpp"

namespace coad {

using nlohmann::json;

ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"code", code}, {"message", message}}};
}

DiagnosisService::DiagnosisService(std::shared_ptr<const CoadModel<float>> model, Vocab vocab, ServiceOptions options)
    : model_(std::move(model)), vocab_(std::move(vocab)), options_(std::move(options)) {
  if (!model_) throw ConfigError("service needs a model");
  if (model_->config().symptom_vocab != vocab_.symptom_token_count() ||
      model_->config().disease_vocab != vocab_.disease_count()) {
    throw ConfigError("model and vocabulary sizes disagree");
  }
}

std::string DiagnosisService::new_id() {
  static thread_local std::random_device device;
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (int i = 0; i < 4; ++i) os << std::setw(8) << static_cast<std::uint32_t>(device());
  return os.str();
}

json DiagnosisService::view(const std::string& id, const DialogueSession& session) const {
  json transcript = json::array();
  for (const auto& e : session.transcript()) transcript.push_back({vocab_.symptom_name(e.symptom), to_int(e.status)});
  json out{{"session_id", id},
           {"mode", to_string(session.mode())},
           {"T_max", session.t_max()},
           {"turns", session.turns()},
           {"transcript", transcript}};
  if (session.terminal()) {
    const auto& d = *session.diagnosis();
    json probs = json::array();
    for (std::size_t i = 0; i < d.probabilities.size(); ++i) {
      probs.push_back({{"disease", vocab_.disease_name(static_cast<int>(i))}, {"probability", d.probabilities[i]}});
    }
    json top = json::array();
    for (const auto& [k, p] : d.top(options_.top_k)) {
      top.push_back({{"disease", vocab_.disease_name(k)}, {"probability", p}});
    }
    out["state"] = "diagnosis";
    out["diagnosis"] = {{"id", d.disease},
                        {"disease", vocab_.disease_name(d.disease)},
                        {"probabilities", probs},
                        {"top", top}};
  } else {
    const int s = *session.pending();
    out["state"] = "inquiry";
    out["inquiry"] = {{"id", s}, {"symptom", vocab_.symptom_name(s)}};
  }
  return out;
}

json DiagnosisService::advance(const std::string& id, DialogueSession& session) {
  if (!session.ready_to_diagnose()) next_inquiry(*model_, session, options_.inquiry);
  if (session.ready_to_diagnose()) diagnose(*model_, session);
  return view(id, session);
}

ServiceResponse DiagnosisService::create_session(const json& body) {
  if (!body.is_object()) return error_response(400, "bad_request", "request body must be a JSON object");
  const auto list = body.find("explicit");
  if (list == body.end() || !list->is_array() || list->empty()) {
    return error_response(400, "bad_request", "'explicit' must be a non-empty list of [symptom, status] pairs");
  }
  std::vector<SymptomEntry> explicit_symptoms;
  for (const auto& item : *list) {
    std::string name;
    json status = 1;
    if (item.is_array() && item.size() == 2 && item[0].is_string()) {
      name = item[0].get<std::string>();
      status = item[1];
    } else if (item.is_object() && item.contains("symptom") && item["symptom"].is_string()) {
      name = item["symptom"].get<std::string>();
      status = item.value("status", json(1));
    } else {
      return error_response(400, "bad_request", "each explicit entry must be [symptom, status]");
    }
    const int id = vocab_.symptom_id(name);
    if (id < 0) return error_response(400, "unknown_symptom", "unknown symptom '" + name + "'");
    if (!status.is_number_integer() || status.get<int>() < 0 || status.get<int>() > 2) {
      return error_response(400, "invalid_status", "status for '" + name + "' must be 0, 1 or 2");
    }
    explicit_symptoms.push_back({id, status_from_int(status.get<int>())});
  }
  TurnMode mode;
  int t_max;
  try {
    mode = parse_turn_mode(body.value("mode", std::string("limited")));
    const auto t = body.value("T_max", json(10));
    if (!t.is_number_integer()) return error_response(400, "bad_request", "'T_max' must be an integer");
    t_max = t.get<int>();
  } catch (const std::exception& e) {
    return error_response(400, "bad_request", e.what());
  }

  std::shared_ptr<Entry> entry;
  try {
    entry = std::make_shared<Entry>(DialogueSession(vocab_, explicit_symptoms, mode, t_max));
  } catch (const ConfigError& e) {
    return error_response(400, "bad_request", e.what());
  }
  entry->last_used = options_.clock();
  const auto id = new_id();
  std::lock_guard entry_lock(entry->mutex);
  {
    std::lock_guard lock(mutex_);
    sessions_[id] = entry;
  }
  return {201, advance(id, entry->session)};
}

std::shared_ptr<DiagnosisService::Entry> DiagnosisService::find(const std::string& id, ServiceResponse& error) {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    error = error_response(404, "unknown_session", "no session '" + id + "'");
    return nullptr;
  }
  return it->second;
}

ServiceResponse DiagnosisService::answer(const std::string& id, const json& body) {
  ServiceResponse error;
  auto entry = find(id, error);
  if (!entry) return error;
  std::lock_guard lock(entry->mutex);
  const auto now = options_.clock();
  if (entry->expired || now - entry->last_used > options_.idle_timeout) {
    entry->expired = true;
    std::lock_guard store_lock(mutex_);
    sessions_.erase(id);
    return error_response(410, "session_expired", "session '" + id + "' expired");
  }
  entry->last_used = now;
  if (entry->session.terminal()) {
    return error_response(409, "session_terminal", "session '" + id + "' already has a diagnosis");
  }
  if (!body.is_object() || !body.contains("status") || !body["status"].is_number_integer() ||
      body["status"].get<int>() < 0 || body["status"].get<int>() > 2) {
    return error_response(400, "invalid_status", "'status' must be 0, 1 or 2");
  }
  entry->session.answer(status_from_int(body["status"].get<int>()));
  return {200, advance(id, entry->session)};
}

ServiceResponse DiagnosisService::vocab() const {
  return {200, {{"symptoms", vocab_.symptoms()}, {"diseases", vocab_.diseases()}}};
}

ServiceResponse DiagnosisService::health() const {
  std::lock_guard lock(mutex_);
  return {200, {{"status", "ok"}, {"sessions", sessions_.size()}}};
}

std::size_t DiagnosisService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

std::size_t DiagnosisService::expire_idle() {
  const auto now = options_.clock();
  std::lock_guard lock(mutex_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock entry_lock(it->second->mutex, std::try_to_lock);
    if (entry_lock.owns_lock() && now - it->second->last_used > options_.idle_timeout) {
      it->second->expired = true;
      entry_lock.unlock();
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

ServiceResponse DiagnosisService::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex answer_path(R"(^/v1/sessions/([0-9a-f]+)/answer$)");
  json parsed;
  if (method == "POST") {
    parsed = json::parse(body, nullptr, false);
    if (parsed.is_discarded()) return error_response(400, "bad_request", "request body is not valid JSON");
  }
  std::smatch m;
  if (method == "POST" && path == "/v1/sessions") return create_session(parsed);
  if (method == "POST" && std::regex_match(path, m, answer_path)) return answer(m[1].str(), parsed);
  if (method == "GET" && path == "/v1/vocab") return vocab();
  if (method == "GET" && path == "/v1/healthz") return health();
  return error_response(404, "not_found", method + " " + path + " is not an endpoint");
}

void DiagnosisService::mount(httplib::Server& server) {
  const auto reply = [this](const httplib::Request& req, httplib::Response& res) {
    ServiceResponse r;
    try {
      r = handle(req.method, req.path, req.body);
    } catch (const std::exception& e) {
      log::warn(std::string("request failed: ") + e.what());
      r = error_response(500, "internal", e.what());
    }
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Post("/v1/sessions", reply);
  server.Post(R"(/v1/sessions/[0-9a-f]+/answer)", reply);
  server.Get("/v1/vocab", reply);
  server.Get("/v1/healthz", reply);
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto r = error_response(res.status, "not_found", req.method + " " + req.path + " is not an endpoint");
    res.set_content(r.body.dump(), "application/json");
  });
}

}  // namespace coad
