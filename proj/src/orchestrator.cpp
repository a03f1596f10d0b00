#include "chatassist/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "chatassist/error.hpp"

namespace chatassist {

using json = nlohmann::json;

std::string_view to_string(PhaseMode mode) {
  switch (mode) {
    case PhaseMode::collect: return "collect";
    case PhaseMode::advise_and_collect: return "advise_and_collect";
    case PhaseMode::advise_only: return "advise_only";
  }
  return "collect";
}

PhaseMode phase_mode_from_string(std::string_view text) {
  if (text == "collect") return PhaseMode::collect;
  if (text == "advise_and_collect") return PhaseMode::advise_and_collect;
  if (text == "advise_only") return PhaseMode::advise_only;
  throw Error(ErrorCode::kBadArgs, "unknown mode '" + std::string(text) + "'");
}

namespace {

bool all_silent(const AdviceMap& advice) {
  return std::all_of(advice.begin(), advice.end(),
                     [](const auto& entry) { return entry.second.silent(); });
}

}  // namespace

Session Session::create(SessionConfig config, EventSink sink) {
  if (config.client_ids.empty()) throw Error(ErrorCode::kBadArgs, "session needs at least one client");
  if (config.client_ids.size() > config.max_clients) {
    throw Error(ErrorCode::kTooManyClients, std::to_string(config.client_ids.size()) + " clients, max " +
                                                std::to_string(config.max_clients));
  }
  std::set<std::string> unique(config.client_ids.begin(), config.client_ids.end());
  if (unique.size() != config.client_ids.size() || unique.count("")) {
    throw Error(ErrorCode::kBadArgs, "client ids must be unique and non-empty");
  }
  if (advises(config.mode)) {
    if (!config.advisor) throw Error(ErrorCode::kMissingModelBundle, "advise mode without advisor bundle");
    if (!config.tagger) throw Error(ErrorCode::kMissingModelBundle, "advise mode without tagger bundle");
  }
  if (config.advisor && config.tagger && config.advisor->schema.hash() != config.tagger->schema().hash()) {
    throw Error(ErrorCode::kSchemaMismatch, "advisor schema " + config.advisor->schema.hash() +
                                                " vs tagger schema " + config.tagger->schema().hash());
  }
  Session s;
  s.config_ = std::move(config);
  s.sink_ = std::move(sink);
  const std::size_t n = s.schema() ? s.schema()->size() : 0;
  for (const auto& id : s.config_.client_ids) s.clients_[id].vector = InformationVector::empty(n);
  return s;
}

const TagSchema* Session::schema() const {
  if (config_.advisor) return &config_.advisor->schema;
  if (config_.tagger) return &config_.tagger->schema();
  return nullptr;
}

Session::ClientState& Session::client(const std::string& client_id) {
  auto it = clients_.find(client_id);
  if (it == clients_.end()) throw Error(ErrorCode::kUnknownClient, client_id);
  return it->second;
}

const Session::ClientState& Session::client(const std::string& client_id) const {
  auto it = clients_.find(client_id);
  if (it == clients_.end()) throw Error(ErrorCode::kUnknownClient, client_id);
  return it->second;
}

LogEvent& Session::append(const std::string& client_id, Actor actor, EventKind kind, json payload,
                          std::int64_t now) {
  LogEvent e;
  if (!anchor_) {
    anchor_ = now;
    e.ts_ms = 0;
  } else {
    e.ts_ms = std::max(now - *anchor_, log_.events.back().ts_ms + 1);
  }
  e.session_id = config_.session_id;
  e.client_id = client_id;
  e.actor = actor;
  e.kind = kind;
  e.payload = std::move(payload);
  log_.events.push_back(std::move(e));
  if (sink_) sink_(log_.events.back());
  return log_.events.back();
}

void Session::apply(ClientState& state, const TagEvent& tag, std::vector<LogEvent>& out,
                    const LogEvent& event) {
  out.push_back(event);
  const TagSchema* s = schema();
  if (s && s->labels.index_of(tag.category)) {
    state.vector = apply_tag(state.vector, tag, *s);
  } else if (std::find(growth_.begin(), growth_.end(), tag.category) == growth_.end()) {
    growth_.push_back(tag.category);
  }
}

void Session::refresh_advice(const std::string& client_id, std::int64_t now, std::vector<LogEvent>& out) {
  if (!advises(config_.mode)) return;
  ClientState& state = client(client_id);
  AdviceMap advice = chatassist::advise(state.vector, *config_.advisor);
  if (state.advice ? *state.advice == advice : all_silent(advice)) return;
  const std::string advice_id = "adv-" + std::to_string(++advice_counter_);
  out.push_back(append(client_id, Actor::agent, EventKind::advice,
                       json{{"advice_id", advice_id}, {"recommendations", advice_map_to_json(advice)}},
                       now));
  advice_owner_[advice_id] = client_id;
  advice_by_id_[advice_id] = advice;
  state.advice_id = advice_id;
  state.advice = std::move(advice);
}

std::vector<LogEvent> Session::post_message(const std::string& client_id, Actor actor,
                                            const std::string& text, std::int64_t now,
                                            std::vector<std::string> acts) {
  ClientState& state = client(client_id);
  if (!state.open) throw Error(ErrorCode::kSessionClosed, "client " + client_id + " has ended");
  if (actor == Actor::agent) throw Error(ErrorCode::kBadArgs, "agents do not post messages");
  if (!acts.empty()) {
    if (actor != Actor::human_operator) throw Error(ErrorCode::kBadArgs, "only operator messages carry acts");
    if (config_.advisor) {
      for (const auto& id : acts) config_.advisor->catalog.at(id);
    }
  }
  const std::size_t index = state.messages++;
  json payload{{"text", text}, {"message_index", index}};
  if (!acts.empty()) payload["acts"] = acts;

  std::vector<LogEvent> out;
  out.push_back(append(client_id, actor, EventKind::message, std::move(payload), now));
  const std::int64_t ts = out.back().ts_ms;
  if (advises(config_.mode) && actor == Actor::client) {
    TagContext context{config_.session_id, index, ts, config_.tagger->schema().hash()};
    for (auto& tag : config_.tagger->auto_tag(text, context)) {
      const LogEvent& e = append(client_id, Actor::agent, EventKind::tag, tag_payload(tag), now);
      tag.timestamp = e.ts_ms;
      apply(state, tag, out, e);
    }
  }
  refresh_advice(client_id, now, out);
  return out;
}

std::vector<LogEvent> Session::record_tag(const std::string& client_id, const std::string& category,
                                          const std::string& value, std::size_t message_index,
                                          std::int64_t now) {
  ClientState& state = client(client_id);
  if (!state.open) throw Error(ErrorCode::kSessionClosed, "client " + client_id + " has ended");
  if (message_index >= state.messages) {
    throw Error(ErrorCode::kMessageIndexOutOfRange,
                std::to_string(message_index) + " >= " + std::to_string(state.messages));
  }
  TagEvent tag;
  tag.session_id = config_.session_id;
  tag.category = trim(category);
  tag.value = trim(value);
  tag.message_index = message_index;
  tag.source = TagSource::manual;
  if (tag.category.empty() || tag.value.empty()) throw Error(ErrorCode::kBadArgs, "empty tag");

  std::vector<LogEvent> out;
  json payload = tag_payload(tag);
  if (schema() && !schema()->labels.index_of(tag.category)) payload["in_schema"] = false;
  const LogEvent& e = append(client_id, Actor::human_operator, EventKind::tag, std::move(payload), now);
  tag.timestamp = e.ts_ms;
  apply(state, tag, out, e);
  refresh_advice(client_id, now, out);
  return out;
}

std::vector<LogEvent> Session::accept_advice(const std::string& advice_id, const std::string& item_id,
                                             std::int64_t now) {
  auto owner = advice_owner_.find(advice_id);
  if (owner == advice_owner_.end()) throw Error(ErrorCode::kNotFound, "advice " + advice_id);
  ClientState& state = client(owner->second);
  if (!state.open) throw Error(ErrorCode::kSessionClosed, "client " + owner->second + " has ended");
  bool offered = false;
  for (const auto& [type, rec] : advice_by_id_.at(advice_id)) {
    for (const auto& option : rec.items) {
      if (std::find(option.item_ids.begin(), option.item_ids.end(), item_id) != option.item_ids.end()) {
        offered = true;
      }
    }
  }
  if (!offered) throw Error(ErrorCode::kUnknownActionRef, item_id + " was not offered in " + advice_id);
  return {append(owner->second, Actor::human_operator, EventKind::advice_accepted,
                 json{{"advice_id", advice_id}, {"item_id", item_id}}, now)};
}

std::vector<LogEvent> Session::record_resource_use(const std::string& client_id,
                                                   const std::string& item_id, std::int64_t now) {
  ClientState& state = client(client_id);
  if (!state.open) throw Error(ErrorCode::kSessionClosed, "client " + client_id + " has ended");
  if (config_.advisor) config_.advisor->catalog.at(item_id);
  return {append(client_id, Actor::human_operator, EventKind::resource_use, json{{"item_id", item_id}},
                 now)};
}

std::vector<LogEvent> Session::end_client(const std::string& client_id, std::int64_t now) {
  ClientState& state = client(client_id);
  if (!state.open) throw Error(ErrorCode::kSessionClosed, "client " + client_id + " has ended");
  state.open = false;
  return {append(client_id, Actor::client, EventKind::session_end, json::object(), now)};
}

const InformationVector& Session::vector(const std::string& client_id) const {
  return client(client_id).vector;
}

std::size_t Session::message_count(const std::string& client_id) const {
  return client(client_id).messages;
}

bool Session::client_open(const std::string& client_id) const { return client(client_id).open; }

bool Session::closed() const {
  return std::none_of(clients_.begin(), clients_.end(), [](const auto& c) { return c.second.open; });
}

std::optional<std::pair<std::string, AdviceMap>> Session::latest_advice(const std::string& client_id) const {
  const ClientState& state = client(client_id);
  if (!state.advice_id) return std::nullopt;
  return std::make_pair(*state.advice_id, *state.advice);
}

json Session::meta() const {
  json doc{{"session_id", config_.session_id},
           {"operator_id", config_.operator_id},
           {"clients", config_.client_ids},
           {"mode", to_string(config_.mode)},
           {"seed", config_.seed}};
  if (const TagSchema* s = schema()) doc["schema_hash"] = s->hash();
  return doc;
}

json TimeMetrics::to_json() const {
  return json{{"total_session_time", total_session_time},
              {"max_waiting_time", max_waiting_time},
              {"total_waiting_time", total_waiting_time}};
}

TimeMetrics compute_time_metrics(const SessionLog& log) {
  if (log.events.empty()) throw Error(ErrorCode::kIncompleteLog, "empty log");
  const auto clients = log.client_ids();
  TimeMetrics m;
  for (const auto& id : clients) {
    bool ended = false;
    std::int64_t waiting_since = -1;
    std::int64_t longest = 0;
    std::int64_t total = 0;
    for (const auto& e : log.events) {
      if (e.client_id != id) continue;
      if (e.kind == EventKind::session_end) ended = true;
      if (e.kind != EventKind::message) continue;
      if (e.actor == Actor::client) {
        if (waiting_since < 0) waiting_since = e.ts_ms;
      } else if (e.actor == Actor::human_operator && waiting_since >= 0) {
        const std::int64_t gap = e.ts_ms - waiting_since;
        longest = std::max(longest, gap);
        total += gap;
        waiting_since = -1;
      }
    }
    if (!ended) throw Error(ErrorCode::kIncompleteLog, "client " + id + " has no session_end");
    m.max_waiting_time += static_cast<double>(longest) / 60000.0;
    m.total_waiting_time += static_cast<double>(total) / 60000.0;
  }
  const double k = static_cast<double>(clients.size());
  m.max_waiting_time /= k;
  m.total_waiting_time /= k;
  m.total_session_time = static_cast<double>(log.events.back().ts_ms) / 60000.0;
  return m;
}

std::filesystem::path meta_path_for(const std::filesystem::path& log_file) {
  auto p = log_file;
  p.replace_extension(".meta.json");
  return p;
}

json ExportReport::to_json() const {
  json bad = json::array();
  for (const auto& [file, reason] : corrupt) bad.push_back({{"file", file}, {"reason", reason}});
  return json{{"files_seen", files_seen},
              {"files_used", files_used},
              {"advise_only_skipped", advise_only_skipped},
              {"corrupt", bad},
              {"message_rows", message_rows},
              {"tag_events", tag_events},
              {"demonstration_rows", demonstration_rows}};
}

namespace {

// Tags kept for training from one client's events: manual tags always, auto
// tags unless the quality filter drops them for lack of a later acceptance.
std::vector<std::pair<std::size_t, TagEvent>> kept_tags(const std::vector<LogEvent>& events,
                                                        bool quality_filter) {
  std::size_t last_acceptance = 0;
  bool any_acceptance = false;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].kind == EventKind::advice_accepted) {
      last_acceptance = i;
      any_acceptance = true;
    }
  }
  std::vector<std::pair<std::size_t, TagEvent>> out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].kind != EventKind::tag) continue;
    TagEvent tag = tag_from_event(events[i]);
    if (quality_filter && tag.source == TagSource::automatic &&
        !(any_acceptance && i < last_acceptance)) {
      continue;
    }
    out.emplace_back(i, std::move(tag));
  }
  return out;
}

void add_log(TrainingCorpora& corpora, SessionLog log, const ExportOptions& options) {
  for (const auto& client : log.client_ids()) {
    const auto events = log.for_client(client);
    const auto tags = kept_tags(events, options.quality_filter);
    for (const auto& [pos, tag] : tags) corpora.tag_events.push_back(tag);
    for (const auto& e : events) {
      if (e.kind != EventKind::message || e.actor != Actor::client) continue;
      TaggedMessage row;
      row.text = e.payload.value("text", std::string());
      const auto index = e.payload.at("message_index").get<std::size_t>();
      // Later tags win per category; manual beats auto on the same message.
      std::map<std::string, TagEvent> by_category;
      for (const auto& [pos, tag] : tags) {
        if (tag.message_index != index) continue;
        auto it = by_category.find(tag.category);
        if (it != by_category.end() && it->second.source == TagSource::manual &&
            tag.source == TagSource::automatic) {
          continue;
        }
        by_category[tag.category] = tag;
      }
      for (auto& [category, tag] : by_category) row.gold.push_back(std::move(tag));
      corpora.tag_corpus.push_back(std::move(row));
    }
  }
  if (options.schema && options.catalog) {
    auto demos = extract_demonstrations(log, *options.schema, *options.catalog,
                                        ExtractOptions{options.quality_filter});
    for (auto& d : demos) corpora.demonstrations.push_back(std::move(d));
  }
  corpora.logs.push_back(std::move(log));
}

void finish_report(TrainingCorpora& corpora) {
  corpora.report.message_rows = corpora.tag_corpus.size();
  corpora.report.tag_events = corpora.tag_events.size();
  corpora.report.demonstration_rows = corpora.demonstrations.size();
}

}  // namespace

TrainingCorpora export_training_logs(std::vector<SessionLog> logs, const ExportOptions& options) {
  TrainingCorpora corpora;
  for (auto& log : logs) {
    ++corpora.report.files_seen;
    log.check_ordered();
    add_log(corpora, std::move(log), options);
    ++corpora.report.files_used;
  }
  finish_report(corpora);
  return corpora;
}

TrainingCorpora export_training_data(const std::filesystem::path& dir, const ExportOptions& options) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kNotFound, "no log directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  TrainingCorpora corpora;
  for (const auto& file : files) {
    ++corpora.report.files_seen;
    const std::string name = file.filename().string();
    try {
      const auto meta_file = meta_path_for(file);
      if (std::filesystem::exists(meta_file)) {
        std::ifstream in(meta_file);
        json meta = json::parse(in, nullptr, false);
        if (meta.is_discarded() || !meta.is_object()) throw Error(ErrorCode::kCorruptLog, "bad meta file");
        if (meta.value("mode", std::string("collect")) == "advise_only") {
          ++corpora.report.advise_only_skipped;
          continue;
        }
      }
      auto result = read_log_file(file);
      result.log.check_ordered();
      TrainingCorpora single;
      add_log(single, result.log, options);
      for (auto& r : single.tag_corpus) corpora.tag_corpus.push_back(std::move(r));
      for (auto& t : single.tag_events) corpora.tag_events.push_back(std::move(t));
      for (auto& d : single.demonstrations) corpora.demonstrations.push_back(std::move(d));
      corpora.logs.push_back(std::move(single.logs.front()));
      ++corpora.report.files_used;
    } catch (const Error& e) {
      corpora.report.corrupt.emplace_back(name, e.what());
    } catch (const json::exception& e) {
      corpora.report.corrupt.emplace_back(name, e.what());
    }
  }
  finish_report(corpora);
  return corpora;
}

SessionLog replay(const SessionLog& recorded, SessionConfig config) {
  if (recorded.events.empty()) return {};
  config.session_id = recorded.events.front().session_id;
  if (config.client_ids.empty()) config.client_ids = recorded.client_ids();
  Session session = Session::create(std::move(config));
  for (const auto& e : recorded.events) {
    switch (e.kind) {
      case EventKind::message: {
        std::vector<std::string> acts;
        if (e.payload.contains("acts")) acts = e.payload.at("acts").get<std::vector<std::string>>();
        session.post_message(e.client_id, e.actor, e.payload.at("text").get<std::string>(), e.ts_ms,
                             std::move(acts));
        break;
      }
      case EventKind::tag: {
        if (e.actor == Actor::agent) break;
        const TagEvent tag = tag_from_event(e);
        session.record_tag(e.client_id, tag.category, tag.value, tag.message_index, e.ts_ms);
        break;
      }
      case EventKind::advice:
        break;
      case EventKind::advice_accepted:
        session.accept_advice(e.payload.at("advice_id").get<std::string>(),
                              e.payload.at("item_id").get<std::string>(), e.ts_ms);
        break;
      case EventKind::resource_use:
        session.record_resource_use(e.client_id, e.payload.at("item_id").get<std::string>(), e.ts_ms);
        break;
      case EventKind::session_end:
        session.end_client(e.client_id, e.ts_ms);
        break;
    }
  }
  return session.log();
}

}  // namespace chatassist
