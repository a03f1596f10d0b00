#pragma once

// Session state machine: routes messages between one operator and its clients,
// runs tagging and advice in the advise modes, and appends every step to the
// session log. Also the offline side: time metrics, training export, replay.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "chatassist/advisor.hpp"
#include "chatassist/autotagger.hpp"
#include "chatassist/eventlog.hpp"
#include "chatassist/vectorcore.hpp"

namespace chatassist {

enum class PhaseMode { collect, advise_and_collect, advise_only };

std::string_view to_string(PhaseMode mode);
PhaseMode phase_mode_from_string(std::string_view text);
inline bool advises(PhaseMode mode) { return mode != PhaseMode::collect; }

struct SessionConfig {
  std::string session_id = "session";
  std::string operator_id = "operator";
  std::vector<std::string> client_ids;
  PhaseMode mode = PhaseMode::collect;
  std::uint64_t seed = 0;
  std::size_t max_clients = 3;
  // Required in the advise modes; the advisor schema (when present) also
  // drives the per-client vectors in collect mode.
  std::shared_ptr<const AdvisorBundle> advisor;
  std::shared_ptr<const Tagger> tagger;
};

using EventSink = std::function<void(const LogEvent&)>;

class Session {
 public:
  // Throws kTooManyClients, kBadArgs, kMissingModelBundle, kSchemaMismatch.
  static Session create(SessionConfig config, EventSink sink = {});

  const std::string& id() const { return config_.session_id; }
  PhaseMode mode() const { return config_.mode; }
  const SessionConfig& config() const { return config_; }
  const SessionLog& log() const { return log_; }
  const TagSchema* schema() const;

  // `now` is any monotone clock in ms; the first event anchors ts 0 and
  // later events get max(now - anchor, previous ts + 1).
  // Operator messages may carry explicit advice item ids in `acts`.
  std::vector<LogEvent> post_message(const std::string& client_id, Actor actor,
                                     const std::string& text, std::int64_t now,
                                     std::vector<std::string> acts = {});
  std::vector<LogEvent> record_tag(const std::string& client_id, const std::string& category,
                                   const std::string& value, std::size_t message_index,
                                   std::int64_t now);
  std::vector<LogEvent> accept_advice(const std::string& advice_id, const std::string& item_id,
                                      std::int64_t now);
  std::vector<LogEvent> record_resource_use(const std::string& client_id,
                                            const std::string& item_id, std::int64_t now);
  std::vector<LogEvent> end_client(const std::string& client_id, std::int64_t now);

  const InformationVector& vector(const std::string& client_id) const;
  std::size_t message_count(const std::string& client_id) const;
  bool client_open(const std::string& client_id) const;
  bool closed() const;
  // Latest advice event for the client, if any.
  std::optional<std::pair<std::string, AdviceMap>> latest_advice(const std::string& client_id) const;
  // Categories seen in tags that fall outside the schema.
  const std::vector<std::string>& schema_growth() const { return growth_; }

  nlohmann::json meta() const;

 private:
  struct ClientState {
    InformationVector vector;
    std::size_t messages = 0;
    bool open = true;
    std::optional<std::string> advice_id;
    std::optional<AdviceMap> advice;
  };

  Session() = default;
  ClientState& client(const std::string& client_id);
  const ClientState& client(const std::string& client_id) const;
  LogEvent& append(const std::string& client_id, Actor actor, EventKind kind,
                   nlohmann::json payload, std::int64_t now);
  void apply(ClientState& state, const TagEvent& tag, std::vector<LogEvent>& out,
             const LogEvent& event);
  void refresh_advice(const std::string& client_id, std::int64_t now, std::vector<LogEvent>& out);

  SessionConfig config_;
  EventSink sink_;
  SessionLog log_;
  std::map<std::string, ClientState> clients_;
  std::map<std::string, std::string> advice_owner_;  // advice id -> client id
  std::map<std::string, AdviceMap> advice_by_id_;
  std::vector<std::string> growth_;
  std::optional<std::int64_t> anchor_;
  std::size_t advice_counter_ = 0;
};

struct TimeMetrics {
  double total_session_time = 0.0;  // minutes
  double max_waiting_time = 0.0;
  double total_waiting_time = 0.0;

  nlohmann::json to_json() const;
};

// Waiting runs from the earliest unanswered client message to the next
// operator message to that client. Throws kIncompleteLog unless every client
// has a session_end.
TimeMetrics compute_time_metrics(const SessionLog& log);

// Sidecar metadata written next to each log as <session>.meta.json.
std::filesystem::path meta_path_for(const std::filesystem::path& log_file);

struct ExportOptions {
  bool quality_filter = false;
  // Demonstrations need a schema; when absent only the tag corpus is built.
  const TagSchema* schema = nullptr;
  const AdviceCatalog* catalog = nullptr;
};

struct ExportReport {
  std::size_t files_seen = 0;
  std::size_t files_used = 0;
  std::size_t advise_only_skipped = 0;
  std::vector<std::pair<std::string, std::string>> corrupt;  // file, reason
  std::size_t message_rows = 0;
  std::size_t tag_events = 0;
  std::size_t demonstration_rows = 0;

  nlohmann::json to_json() const;
};

struct TrainingCorpora {
  std::vector<TaggedMessage> tag_corpus;  // one row per client message
  std::vector<TagEvent> tag_events;       // tags kept for schema building
  std::vector<SessionLog> logs;
  std::vector<Demonstration> demonstrations;
  ExportReport report;
};

// Reads every *.jsonl log in the directory (sorted by name). Corrupt files are
// skipped and reported; advise_only sessions never enter the corpora.
TrainingCorpora export_training_data(const std::filesystem::path& dir,
                                     const ExportOptions& options = {});
// Same transformation over logs already in memory.
TrainingCorpora export_training_logs(std::vector<SessionLog> logs, const ExportOptions& options = {});

// Feeds the recorded client/operator events back through a fresh session at
// their recorded timestamps; derived events (auto tags, advice) are recomputed.
SessionLog replay(const SessionLog& recorded, SessionConfig config);

}  // namespace chatassist
