#include "chatassist/eventlog.hpp"

#include <algorithm>
#include <fstream>
#include <istream>

#include "chatassist/error.hpp"

namespace chatassist {

using nlohmann::json;

std::string_view to_string(Actor actor) {
  switch (actor) {
    case Actor::client: return "client";
    case Actor::human_operator: return "operator";
    case Actor::agent: return "agent";
  }
  return "client";
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::message: return "message";
    case EventKind::tag: return "tag";
    case EventKind::advice: return "advice";
    case EventKind::advice_accepted: return "advice_accepted";
    case EventKind::resource_use: return "resource_use";
    case EventKind::session_end: return "session_end";
  }
  return "message";
}

Actor actor_from_string(std::string_view text) {
  if (text == "client") return Actor::client;
  if (text == "operator") return Actor::human_operator;
  if (text == "agent") return Actor::agent;
  throw Error(ErrorCode::kParseError, "unknown actor '" + std::string(text) + "'");
}

EventKind event_kind_from_string(std::string_view text) {
  for (auto kind : {EventKind::message, EventKind::tag, EventKind::advice,
                    EventKind::advice_accepted, EventKind::resource_use,
                    EventKind::session_end}) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(ErrorCode::kParseError, "unknown event kind '" + std::string(text) + "'");
}

json LogEvent::to_json() const {
  return json{{"ts_ms", ts_ms},
              {"session_id", session_id},
              {"client_id", client_id},
              {"actor", to_string(actor)},
              {"kind", to_string(kind)},
              {"payload", payload}};
}

LogEvent LogEvent::from_json(const json& doc) {
  try {
    LogEvent e;
    e.ts_ms = doc.at("ts_ms").get<std::int64_t>();
    e.session_id = doc.at("session_id").get<std::string>();
    e.client_id = doc.at("client_id").get<std::string>();
    e.actor = actor_from_string(doc.at("actor").get<std::string>());
    e.kind = event_kind_from_string(doc.at("kind").get<std::string>());
    e.payload = doc.value("payload", json::object());
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("log event: ") + ex.what());
  }
}

TagEvent tag_from_event(const LogEvent& event) {
  try {
    TagEvent tag;
    tag.session_id = event.session_id;
    tag.category = event.payload.at("category").get<std::string>();
    tag.value = event.payload.at("value").get<std::string>();
    tag.message_index = event.payload.at("message_index").get<std::size_t>();
    tag.timestamp = event.ts_ms;
    tag.source = tag_source_from_string(event.payload.value("source", std::string("manual")));
    return tag;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("tag payload: ") + ex.what());
  }
}

json tag_payload(const TagEvent& tag) {
  return json{{"category", tag.category},
              {"value", tag.value},
              {"message_index", tag.message_index},
              {"source", to_string(tag.source)}};
}

std::vector<std::string> SessionLog::client_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : events) {
    if (std::find(ids.begin(), ids.end(), e.client_id) == ids.end()) ids.push_back(e.client_id);
  }
  return ids;
}

std::vector<LogEvent> SessionLog::for_client(std::string_view client_id) const {
  std::vector<LogEvent> out;
  for (const auto& e : events) {
    if (e.client_id == client_id) out.push_back(e);
  }
  return out;
}

void SessionLog::check_ordered() const {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].ts_ms < events[i - 1].ts_ms) {
      throw Error(ErrorCode::kUnorderedLog,
                  "timestamp decreases at event " + std::to_string(i));
    }
  }
}

json flush_marker(std::string_view session_id, std::size_t event_count) {
  return json{{"marker", "flush"}, {"session_id", session_id}, {"events", event_count}};
}

bool is_flush_marker(const json& line) {
  return line.is_object() && line.contains("marker") && line["marker"] == "flush";
}

LogReadResult read_log(std::istream& in) {
  LogReadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (result.flushed) {
      throw Error(ErrorCode::kCorruptLog, "content after flush marker at line " +
                                              std::to_string(line_no));
    }
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw Error(ErrorCode::kCorruptLog, "unparsable line " + std::to_string(line_no));
    }
    if (is_flush_marker(doc)) {
      if (doc.value("events", std::size_t{0}) != result.log.events.size()) {
        throw Error(ErrorCode::kCorruptLog, "flush marker event count mismatch");
      }
      result.flushed = true;
      continue;
    }
    try {
      result.log.events.push_back(LogEvent::from_json(doc));
    } catch (const Error& e) {
      throw Error(ErrorCode::kCorruptLog,
                  "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return result;
}

LogReadResult read_log_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open log " + path.string());
  return read_log(in);
}

void write_log_file(const std::filesystem::path& path, const SessionLog& log, bool flushed) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write log " + path.string());
  for (const auto& e : log.events) out << e.to_line() << '\n';
  if (flushed) {
    const std::string id = log.events.empty() ? std::string() : log.events.front().session_id;
    out << flush_marker(id, log.events.size()).dump() << '\n';
  }
}

}  // namespace chatassist
