#pragma once

// Append-only session event log and its JSONL form: one event object per line
// with fields ts_ms, session_id, client_id, actor, kind, payload.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "chatassist/vectorcore.hpp"

namespace chatassist {

enum class Actor { client, human_operator, agent };
enum class EventKind { message, tag, advice, advice_accepted, resource_use, session_end };

std::string_view to_string(Actor actor);
std::string_view to_string(EventKind kind);
Actor actor_from_string(std::string_view text);
EventKind event_kind_from_string(std::string_view text);

struct LogEvent {
  std::int64_t ts_ms = 0;
  std::string session_id;
  std::string client_id;
  Actor actor = Actor::client;
  EventKind kind = EventKind::message;
  nlohmann::json payload = nlohmann::json::object();

  nlohmann::json to_json() const;
  static LogEvent from_json(const nlohmann::json& doc);
  std::string to_line() const { return to_json().dump(); }

  bool operator==(const LogEvent&) const = default;
};

// Typed views over event payloads.
TagEvent tag_from_event(const LogEvent& event);
nlohmann::json tag_payload(const TagEvent& tag);

struct SessionLog {
  std::vector<LogEvent> events;

  std::vector<std::string> client_ids() const;  // first-appearance order
  // Events of one client, in log order.
  std::vector<LogEvent> for_client(std::string_view client_id) const;
  // Throws kUnorderedLog when timestamps decrease.
  void check_ordered() const;
};

// Trailing line written on clean shutdown; not an event.
nlohmann::json flush_marker(std::string_view session_id, std::size_t event_count);
bool is_flush_marker(const nlohmann::json& line);

struct LogReadResult {
  SessionLog log;
  bool flushed = false;
};

// Throws kCorruptLog on unparsable lines or missing event fields.
LogReadResult read_log(std::istream& in);
LogReadResult read_log_file(const std::filesystem::path& path);
void write_log_file(const std::filesystem::path& path, const SessionLog& log, bool flushed);

}  // namespace chatassist
