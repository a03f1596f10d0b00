#pragma once

// HTTP front end for live sessions. Each session writes <log_dir>/<id>.jsonl
// (one event per line, flushed per event) plus <id>.meta.json; a flush marker
// closes the file when the session ends or the service stops.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "chatassist/advisor.hpp"
#include "chatassist/error.hpp"
#include "chatassist/orchestrator.hpp"

namespace chatassist {

struct ServiceConfig {
  std::size_t max_clients = 3;
  PhaseMode mode = PhaseMode::collect;
  std::string advisor_bundle;
  std::string tagger_bundle;
  std::optional<VoteThresholds> thresholds;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::uint64_t seed = 0;
  std::filesystem::path log_dir = "logs";

  // Throws kBadConfig on unknown modes, bad thresholds or wrong types.
  static ServiceConfig from_json(const nlohmann::json& doc);
  static ServiceConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

class Service {
 public:
  // Loads bundles; kMissingModelBundle / kSchemaMismatch in advise modes.
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket; kPortInUse if that fails. Returns the port.
  int bind();
  // Serves until stop(). Requires bind().
  void run();
  // Stops serving and writes flush markers for open sessions. Idempotent and
  // safe to call from another thread.
  void stop();
  int port() const;

  // The operations behind the HTTP routes; each returns the response body.
  nlohmann::json create_session(const nlohmann::json& body);
  nlohmann::json post_message(const std::string& session_id, const nlohmann::json& body);
  nlohmann::json post_tag(const std::string& session_id, const nlohmann::json& body);
  nlohmann::json accept_advice(const std::string& session_id, const std::string& advice_id,
                               const nlohmann::json& body);
  nlohmann::json post_resource(const std::string& session_id, const nlohmann::json& body);
  nlohmann::json end_client(const std::string& session_id, const nlohmann::json& body);
  nlohmann::json metrics(const std::string& session_id);
  nlohmann::json events(const std::string& session_id, std::size_t from);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// HTTP status for an error code.
int http_status(ErrorCode code);

}  // namespace chatassist
