#include "chatassist/server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>

#include "httplib.h"

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using nlohmann::json;

namespace {

template <typename T>
T config_field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadConfig, std::string("field '") + key + "': " + e.what());
  }
}

std::string required_string(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string())
    throw Error(ErrorCode::kBadArgs, std::string("missing string field '") + key + "'");
  return body.at(key).get<std::string>();
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2) << '\n';
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownClient:
      return 404;
    case ErrorCode::kSessionClosed:
    case ErrorCode::kIncompleteLog:
      return 409;
    case ErrorCode::kBadArgs:
    case ErrorCode::kParseError:
    case ErrorCode::kTooManyClients:
    case ErrorCode::kMessageIndexOutOfRange:
    case ErrorCode::kUnknownActionRef:
    case ErrorCode::kCategoryOutsideSchema:
      return 400;
    default:
      return 500;
  }
}

ServiceConfig ServiceConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kBadConfig, "config must be an object");
  ServiceConfig c;
  c.max_clients = config_field<std::size_t>(doc, "max_clients", c.max_clients);
  if (c.max_clients == 0) throw Error(ErrorCode::kBadConfig, "max_clients must be positive");
  try {
    c.mode = phase_mode_from_string(config_field<std::string>(doc, "mode", "collect"));
  } catch (const Error& e) {
    throw Error(ErrorCode::kBadConfig, e.what());
  }
  c.advisor_bundle = config_field<std::string>(doc, "advisor_bundle", "");
  c.tagger_bundle = config_field<std::string>(doc, "tagger_bundle", "");
  if (doc.contains("thresholds")) {
    const json& t = doc.at("thresholds");
    if (!t.is_object()) throw Error(ErrorCode::kBadConfig, "thresholds must be an object");
    VoteThresholds v;
    v.first_option = config_field<double>(t, "first_option", v.first_option);
    v.secondary_option = config_field<double>(t, "secondary_option", v.secondary_option);
    if (v.first_option < 0 || v.first_option > 1 || v.secondary_option < 0 || v.secondary_option > 1)
      throw Error(ErrorCode::kBadConfig, "thresholds must lie in [0, 1]");
    c.thresholds = v;
  }
  c.host = config_field<std::string>(doc, "host", c.host);
  c.port = config_field<int>(doc, "port", c.port);
  if (c.port < 0 || c.port > 65535) throw Error(ErrorCode::kBadConfig, "port out of range");
  c.seed = config_field<std::uint64_t>(doc, "seed", c.seed);
  c.log_dir = config_field<std::string>(doc, "log_dir", c.log_dir.string());
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadConfig, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

json ServiceConfig::to_json() const {
  json doc{{"max_clients", max_clients}, {"mode", to_string(mode)},
           {"advisor_bundle", advisor_bundle}, {"tagger_bundle", tagger_bundle},
           {"host", host}, {"port", port}, {"seed", seed}, {"log_dir", log_dir.string()}};
  if (thresholds)
    doc["thresholds"] = {{"first_option", thresholds->first_option},
                         {"secondary_option", thresholds->secondary_option}};
  return doc;
}

struct LiveSession {
  std::mutex mu;
  std::condition_variable cv;
  std::optional<Session> session;
  std::filesystem::path log_path;
  std::ofstream log;
  std::size_t written = 0;
  bool flushed = false;

  void write_marker() {
    if (flushed) return;
    log << flush_marker(session->id(), written).dump() << '\n';
    log.flush();
    json meta = session->meta();
    meta["schema_growth"] = session->schema_growth();
    write_json_file(meta_path_for(log_path), meta);
    flushed = true;
  }
};

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<const AdvisorBundle> advisor;
  std::shared_ptr<const Tagger> tagger;
  httplib::Server http;
  int port = -1;
  std::atomic<bool> stopping{false};
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::mutex mu;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions;
  std::size_t counter = 0;

  std::int64_t now_ms(const json& body) const {
    if (body.is_object() && body.contains("now_ms") && body.at("now_ms").is_number_integer())
      return body.at("now_ms").get<std::int64_t>();
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
        .count();
  }

  std::shared_ptr<LiveSession> find(const std::string& id) {
    std::lock_guard lock(mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw Error(ErrorCode::kNotFound, "no session '" + id + "'");
    return it->second;
  }

  // Runs `op` under the session lock and wakes stream readers afterwards.
  template <typename Op>
  json mutate(const std::string& id, Op op) {
    auto live = find(id);
    std::vector<LogEvent> events;
    {
      std::lock_guard lock(live->mu);
      if (live->flushed) throw Error(ErrorCode::kSessionClosed, "session '" + id + "' is closed");
      events = op(*live->session);
      if (live->session->closed()) live->write_marker();
    }
    live->cv.notify_all();
    json out = json::array();
    for (const auto& e : events) out.push_back(e.to_json());
    return json{{"events", out}};
  }

  void routes(Service& service);
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  const ServiceConfig& c = impl_->config;
  if (!c.advisor_bundle.empty()) {
    AdvisorBundle bundle;
    try {
      bundle = AdvisorBundle::load(c.advisor_bundle);
    } catch (const Error& e) {
      throw Error(ErrorCode::kMissingModelBundle, e.what());
    }
    if (c.thresholds)
      for (auto& [type, ensemble] : bundle.ensembles) ensemble.thresholds = *c.thresholds;
    impl_->advisor = std::make_shared<const AdvisorBundle>(std::move(bundle));
  }
  if (!c.tagger_bundle.empty()) {
    try {
      impl_->tagger = std::make_shared<const Tagger>(Tagger::load(c.tagger_bundle));
    } catch (const Error& e) {
      throw Error(ErrorCode::kMissingModelBundle, e.what());
    }
  }
  if (advises(c.mode) && (!impl_->advisor || !impl_->tagger))
    throw Error(ErrorCode::kMissingModelBundle,
                std::string(to_string(c.mode)) + " needs advisor_bundle and tagger_bundle");
  if (impl_->advisor && impl_->tagger && impl_->advisor->schema.hash() != impl_->tagger->schema().hash())
    throw Error(ErrorCode::kSchemaMismatch, "advisor and tagger were trained on different schemas");
  std::filesystem::create_directories(c.log_dir);
  impl_->routes(*this);
}

Service::~Service() { stop(); }

int Service::bind() {
  auto& http = impl_->http;
  const auto& c = impl_->config;
  // httplib's default sets SO_REUSEPORT, which lets a second service share the port.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  if (c.port == 0) {
    impl_->port = http.bind_to_any_port(c.host);
    if (impl_->port < 0) throw Error(ErrorCode::kPortInUse, "no free port on " + c.host);
  } else {
    if (!http.bind_to_port(c.host, c.port))
      throw Error(ErrorCode::kPortInUse, c.host + ":" + std::to_string(c.port));
    impl_->port = c.port;
  }
  return impl_->port;
}

void Service::run() {
  if (impl_->port < 0) bind();
  if (impl_->stopping) return;
  impl_->http.listen_after_bind();
}

void Service::stop() {
  if (impl_->stopping.exchange(true)) return;
  {
    std::lock_guard lock(impl_->mu);
    for (auto& [id, live] : impl_->sessions) live->cv.notify_all();
  }
  impl_->http.stop();
  std::lock_guard lock(impl_->mu);
  for (auto& [id, live] : impl_->sessions) {
    std::lock_guard session_lock(live->mu);
    live->write_marker();
    live->cv.notify_all();
  }
}

int Service::port() const { return impl_->port; }

json Service::create_session(const json& body) {
  if (impl_->stopping) throw Error(ErrorCode::kSessionClosed, "service is stopping");
  if (!body.is_object()) throw Error(ErrorCode::kBadArgs, "body must be an object");
  SessionConfig sc;
  sc.mode = impl_->config.mode;
  sc.max_clients = impl_->config.max_clients;
  sc.advisor = impl_->advisor;
  sc.tagger = impl_->tagger;
  if (body.contains("operator_id")) sc.operator_id = required_string(body, "operator_id");
  if (!body.contains("clients") || !body.at("clients").is_array())
    throw Error(ErrorCode::kBadArgs, "missing array field 'clients'");
  for (const auto& c : body.at("clients")) {
    if (!c.is_string()) throw Error(ErrorCode::kBadArgs, "client ids must be strings");
    sc.client_ids.push_back(c.get<std::string>());
  }

  auto live = std::make_shared<LiveSession>();
  std::lock_guard lock(impl_->mu);
  const std::size_t n = ++impl_->counter;
  sc.session_id = body.contains("session_id") ? required_string(body, "session_id") : "s-" + std::to_string(n);
  if (sc.session_id.empty() || sc.session_id.find_first_of("/\\") != std::string::npos ||
      sc.session_id.front() == '.')
    throw Error(ErrorCode::kBadArgs, "bad session id '" + sc.session_id + "'");
  if (impl_->sessions.count(sc.session_id))
    throw Error(ErrorCode::kBadArgs, "session '" + sc.session_id + "' already exists");
  sc.seed = mix_seed(impl_->config.seed, n);

  LiveSession* raw = live.get();
  live->session = Session::create(sc, [raw](const LogEvent& e) {
    raw->log << e.to_line() << '\n';
    raw->log.flush();
    ++raw->written;
  });
  live->log_path = impl_->config.log_dir / (sc.session_id + ".jsonl");
  live->log.open(live->log_path, std::ios::trunc);
  if (!live->log) throw Error(ErrorCode::kBadConfig, "cannot write " + live->log_path.string());
  write_json_file(meta_path_for(live->log_path), live->session->meta());
  impl_->sessions.emplace(sc.session_id, live);
  return json{{"session_id", sc.session_id}, {"clients", sc.client_ids},
              {"mode", to_string(sc.mode)}, {"log", live->log_path.string()}};
}

json Service::post_message(const std::string& id, const json& body) {
  const std::string client = required_string(body, "client_id");
  const std::string text = required_string(body, "text");
  const Actor actor = [&] {
    try {
      return actor_from_string(required_string(body, "actor"));
    } catch (const Error& e) {
      throw Error(ErrorCode::kBadArgs, e.what());
    }
  }();
  if (actor == Actor::agent) throw Error(ErrorCode::kBadArgs, "agents do not post messages");
  std::vector<std::string> acts;
  if (body.contains("acts")) {
    if (!body.at("acts").is_array()) throw Error(ErrorCode::kBadArgs, "'acts' must be an array");
    for (const auto& a : body.at("acts")) {
      if (!a.is_string()) throw Error(ErrorCode::kBadArgs, "'acts' must hold strings");
      acts.push_back(a.get<std::string>());
    }
  }
  const std::int64_t now = impl_->now_ms(body);
  return impl_->mutate(id, [&](Session& s) { return s.post_message(client, actor, text, now, acts); });
}

json Service::post_tag(const std::string& id, const json& body) {
  const std::string client = required_string(body, "client_id");
  const std::string category = required_string(body, "category");
  const std::string value = required_string(body, "value");
  if (!body.contains("message_index") || !body.at("message_index").is_number_unsigned())
    throw Error(ErrorCode::kBadArgs, "missing non-negative 'message_index'");
  const auto index = body.at("message_index").get<std::size_t>();
  const std::int64_t now = impl_->now_ms(body);
  return impl_->mutate(id, [&](Session& s) { return s.record_tag(client, category, value, index, now); });
}

json Service::accept_advice(const std::string& id, const std::string& advice_id, const json& body) {
  const std::string item = required_string(body, "item_id");
  const std::int64_t now = impl_->now_ms(body);
  return impl_->mutate(id, [&](Session& s) { return s.accept_advice(advice_id, item, now); });
}

json Service::post_resource(const std::string& id, const json& body) {
  const std::string client = required_string(body, "client_id");
  const std::string item = required_string(body, "item_id");
  const std::int64_t now = impl_->now_ms(body);
  return impl_->mutate(id, [&](Session& s) { return s.record_resource_use(client, item, now); });
}

json Service::end_client(const std::string& id, const json& body) {
  const std::string client = required_string(body, "client_id");
  const std::int64_t now = impl_->now_ms(body);
  return impl_->mutate(id, [&](Session& s) { return s.end_client(client, now); });
}

json Service::metrics(const std::string& id) {
  auto live = impl_->find(id);
  std::lock_guard lock(live->mu);
  json out = compute_time_metrics(live->session->log()).to_json();
  out["session_id"] = id;
  return out;
}

json Service::events(const std::string& id, std::size_t from) {
  auto live = impl_->find(id);
  std::lock_guard lock(live->mu);
  const auto& all = live->session->log().events;
  json out = json::array();
  for (std::size_t i = from; i < all.size(); ++i) out.push_back(all[i].to_json());
  return json{{"events", out}, {"next", std::max(from, all.size())}, {"closed", live->flushed}};
}

void Service::Impl::routes(Service& service) {
  auto guarded = [](auto fn, int ok_status = 200) {
    return [fn, ok_status](const httplib::Request& req, httplib::Response& res) {
      try {
        json body = json::object();
        if (!req.body.empty()) {
          try {
            body = json::parse(req.body);
          } catch (const json::exception& e) {
            throw Error(ErrorCode::kBadArgs, std::string("body is not JSON: ") + e.what());
          }
        }
        res.status = ok_status;
        res.set_content(fn(req, body).dump(), "application/json");
      } catch (const Error& e) {
        res.status = http_status(e.code());
        res.set_content(json{{"error", error_name(e.code())}, {"message", e.what()}}.dump(),
                        "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
      }
    };
  };
  auto param = [](const httplib::Request& req, const char* key) { return req.path_params.at(key); };
  auto from_param = [](const httplib::Request& req) -> std::size_t {
    if (!req.has_param("from")) return 0;
    try {
      return std::stoull(req.get_param_value("from"));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kBadArgs, "bad 'from'");
    }
  };
  Service* s = &service;

  http.Get("/health", guarded([this](const auto&, const json&) {
             std::lock_guard lock(mu);
             return json{{"status", "ok"}, {"mode", to_string(config.mode)}, {"sessions", sessions.size()}};
           }));
  http.Post("/sessions",
            guarded([s](const auto&, const json& body) { return s->create_session(body); }, 201));
  http.Post("/sessions/:id/messages", guarded([s, param](const auto& req, const json& body) {
              return s->post_message(param(req, "id"), body);
            }));
  http.Post("/sessions/:id/tags", guarded([s, param](const auto& req, const json& body) {
              return s->post_tag(param(req, "id"), body);
            }));
  http.Post("/sessions/:id/advice/:advice_id/accept", guarded([s, param](const auto& req, const json& body) {
              return s->accept_advice(param(req, "id"), param(req, "advice_id"), body);
            }));
  http.Post("/sessions/:id/resources", guarded([s, param](const auto& req, const json& body) {
              return s->post_resource(param(req, "id"), body);
            }));
  http.Post("/sessions/:id/end", guarded([s, param](const auto& req, const json& body) {
              return s->end_client(param(req, "id"), body);
            }));
  http.Get("/sessions/:id/metrics",
           guarded([s, param](const auto& req, const json&) { return s->metrics(param(req, "id")); }));
  http.Get("/sessions/:id/events", guarded([s, param, from_param](const auto& req, const json&) {
             return s->events(param(req, "id"), from_param(req));
           }));

  // Server-sent events: one `data:` frame per log event, ends when the session closes.
  http.Get("/sessions/:id/stream", [this, param, from_param](const httplib::Request& req,
                                                              httplib::Response& res) {
    std::shared_ptr<LiveSession> live;
    std::size_t cursor = 0;
    try {
      live = find(param(req, "id"));
      cursor = from_param(req);
    } catch (const Error& e) {
      res.status = http_status(e.code());
      res.set_content(json{{"error", error_name(e.code())}, {"message", e.what()}}.dump(), "application/json");
      return;
    }
    auto next = std::make_shared<std::size_t>(cursor);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, live, next](std::size_t,
                                                                             httplib::DataSink& sink) {
      std::string chunk;
      bool done = false;
      {
        std::unique_lock lock(live->mu);
        live->cv.wait_for(lock, std::chrono::milliseconds(250), [&] {
          return stopping || live->flushed || live->session->log().events.size() > *next;
        });
        const auto& all = live->session->log().events;
        for (; *next < all.size(); ++*next)
          chunk += "id: " + std::to_string(*next) + "\ndata: " + all[*next].to_line() + "\n\n";
        done = live->flushed || stopping;
      }
      if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
      if (done) {
        const std::string end = "event: end\ndata: {}\n\n";
        sink.write(end.data(), end.size());
        sink.done();
      }
      return true;
    });
  });
}

}  // namespace chatassist
