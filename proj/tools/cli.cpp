#include "cli.hpp"

#include <pthread.h>

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "chatassist/advisor.hpp"
#include "chatassist/autotagger.hpp"
#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"
#include "chatassist/nnet.hpp"
#include "chatassist/orchestrator.hpp"
#include "chatassist/server.hpp"
#include "chatassist/simulation.hpp"

#ifndef CHATASSIST_DATA_DIR
#define CHATASSIST_DATA_DIR "data"
#endif

namespace chatassist {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string data;
  std::string out;
  std::string bundle;
  std::string storyboards;
  std::string test;
  std::string catalog;
  std::string config;
  std::string mode;
  std::string host;
  std::size_t sessions = 50;
  std::size_t train_sessions = 60;
  std::size_t clients = 0;  // 0: 3 for simulate, the config value for serve
  std::size_t labels = 0;
  std::size_t ensemble_size = 25;
  std::uint64_t seed = 0;
  int port = -1;
  bool quality_filter = false;
  std::vector<double> thresholds;
  std::string report = "text";
};

std::string default_domain_dir() { return (fs::path(CHATASSIST_DATA_DIR) / "student_loans").string(); }

std::string catalog_path(const Options& o) {
  return o.catalog.empty() ? (fs::path(default_domain_dir()) / "catalog.json").string() : o.catalog;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return digest(bytes.str());
}

// Names and contents of the regular files below `dir`, in sorted order.
std::string dir_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t state = fnv1a64("");
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    state = fnv1a64(fs::relative(f, dir).generic_string(), state);
    state = fnv1a64(std::string(1, '\0'), state);
    state = fnv1a64(bytes.str(), state);
  }
  return hex64(state);
}

Domain load_domain(const Options& o) {
  const fs::path dir = o.data.empty() ? fs::path(default_domain_dir()) : fs::path(o.data);
  return Domain::load(dir / "domain.json", dir / "catalog.json");
}

std::vector<Storyboard> load_library(const Options& o, const Domain& domain) {
  if (o.storyboards.empty()) return {};
  return load_storyboard_library(o.storyboards, domain);
}

struct Bundle {
  std::shared_ptr<const AdvisorBundle> advisor;
  std::shared_ptr<const Tagger> tagger;
};

Bundle load_bundle(const fs::path& dir, bool need_advisor, bool need_tagger) {
  Bundle b;
  const auto a = dir / "advisor.json";
  const auto t = dir / "tagger.json";
  if (fs::exists(a)) b.advisor = std::make_shared<const AdvisorBundle>(AdvisorBundle::load(a));
  if (fs::exists(t)) b.tagger = std::make_shared<const Tagger>(Tagger::load(t));
  if ((need_advisor && !b.advisor) || (need_tagger && !b.tagger))
    throw Error(ErrorCode::kMissingModelBundle, "bundle " + dir.string() + " lacks advisor.json or tagger.json");
  if (b.advisor && b.tagger && b.advisor->schema.hash() != b.tagger->schema().hash())
    throw Error(ErrorCode::kSchemaMismatch, "advisor and tagger in " + dir.string() + " use different schemas");
  return b;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  out << text;
}

void write_session_logs(const fs::path& dir, const std::vector<SimulatedSession>& sessions) {
  fs::create_directories(dir);
  for (const auto& s : sessions) {
    const auto path = dir / (s.meta.at("session_id").get<std::string>() + ".jsonl");
    write_log_file(path, s.log, true);
    write_text(meta_path_for(path), s.meta.dump(2) + "\n");
  }
}

TrainingConfig training_config(const Options& o) {
  TrainingConfig tc;
  tc.labels = o.labels;
  tc.quality_filter = o.quality_filter;
  tc.ensemble.ensemble_size = o.ensemble_size;
  if (o.thresholds.size() == 2) tc.ensemble.thresholds = {o.thresholds[0], o.thresholds[1]};
  return tc;
}

// ---------------------------------------------------------------- subcommands

json cmd_ingest(const Options& o) {
  auto corpora = export_training_data(o.data, ExportOptions{o.quality_filter});
  json report{{"seed", o.seed}, {"inputs", {{"data", dir_digest(o.data)}}}, {"export", corpora.report.to_json()}};
  const fs::path out = o.out;
  fs::create_directories(out);
  std::ostringstream tags;
  for (const auto& m : corpora.tag_corpus) tags << tagged_message_to_json(m).dump() << '\n';
  write_text(out / "tag_corpus.jsonl", tags.str());
  if (!corpora.tag_events.empty()) {
    const TagSchema schema = training_schema(corpora, o.labels);
    const AdviceCatalog catalog = AdviceCatalog::load(catalog_path(o));
    std::vector<AdviceItem> usable;
    for (const auto& item : catalog.items())
      if (item.type != AdviceType::topic_acquisition || schema.labels.index_of(*item.action_ref))
        usable.push_back(item);
    const AdviceCatalog kept(std::move(usable));
    std::ostringstream demos;
    std::size_t rows = 0;
    for (const auto& log : corpora.logs) {
      for (const auto& d : extract_demonstrations(log, schema, kept, ExtractOptions{o.quality_filter})) {
        demos << d.to_json().dump() << '\n';
        ++rows;
      }
    }
    write_text(out / "schema.json", schema.to_json().dump(2) + "\n");
    write_text(out / "demonstrations.jsonl", demos.str());
    report["schema_hash"] = schema.hash();
    report["demonstrations"] = rows;
  } else {
    write_text(out / "demonstrations.jsonl", "");
    report["demonstrations"] = 0;
  }
  report["tag_corpus"] = corpora.tag_corpus.size();
  write_text(out / "ingest_report.json", report.dump(2) + "\n");
  return report;
}

json cmd_train_advisor(const Options& o) {
  auto corpora = export_training_data(o.data, ExportOptions{o.quality_filter});
  const AdviceCatalog catalog = AdviceCatalog::load(catalog_path(o));
  auto [advisor, report] = train_advisor_bundle(corpora, catalog, training_config(o), o.seed);
  const fs::path out = fs::path(o.out) / "advisor.json";
  fs::create_directories(o.out);
  advisor->save(out);
  report["inputs"] = {{"data", dir_digest(o.data)}, {"catalog", file_digest(catalog_path(o))}};
  report["export"] = corpora.report.to_json();
  report["bundle"] = out.string();
  return report;
}

json cmd_train_tagger(const Options& o) {
  auto corpora = export_training_data(o.data, ExportOptions{o.quality_filter});
  const TagSchema schema = training_schema(corpora, o.labels);
  auto [tagger, report] = train_tagger_model(corpora, schema, TaggerHyper{}, o.seed);
  const fs::path out = fs::path(o.out) / "tagger.json";
  fs::create_directories(o.out);
  tagger->save(out);
  report["inputs"] = {{"data", dir_digest(o.data)}};
  report["bundle"] = out.string();
  return report;
}

json cmd_simulate(const Options& o) {
  const Domain domain = load_domain(o);
  const auto library = load_library(o, domain);
  SimulationConfig sc;
  sc.clients = o.clients;
  json report{{"seed", o.seed}, {"sessions", o.sessions}, {"clients", o.clients}};
  json inputs{{"domain", dir_digest(o.data.empty() ? default_domain_dir() : o.data)}};
  if (!o.storyboards.empty()) inputs["storyboards"] = dir_digest(o.storyboards);

  const std::string mode = o.mode.empty() ? "compare" : o.mode;
  if (mode == "collect") {
    auto sessions = generate_expert_sessions(domain, library, o.sessions, sc, o.seed);
    json rows = json::array();
    std::vector<TimeMetrics> metrics;
    for (const auto& s : sessions) {
      json row = s.metrics.to_json();
      row["session_id"] = s.meta.at("session_id");
      rows.push_back(row);
      metrics.push_back(s.metrics);
    }
    if (!o.out.empty()) write_session_logs(o.out, sessions);
    report["mode"] = "collect";
    report["metrics"] = rows;
    report["mean"] = mean_metrics(metrics).to_json();
    report["inputs"] = inputs;
    return report;
  }
  if (mode != "compare") throw Error(ErrorCode::kBadArgs, "simulate --mode must be collect or compare");

  ModelSet models;
  if (!o.bundle.empty()) {
    auto b = load_bundle(o.bundle, true, true);
    models = {b.advisor, b.tagger};
    inputs["bundle"] = dir_digest(o.bundle);
  } else {
    // No bundle: run the expert phase first and train on it.
    auto expert = generate_expert_sessions(domain, library, o.train_sessions, sc, mix_seed(o.seed, 1));
    std::vector<SessionLog> logs;
    for (const auto& s : expert) logs.push_back(s.log);
    auto trained = train_models(export_training_logs(std::move(logs)), domain.catalog(), training_config(o),
                                mix_seed(o.seed, 2));
    models = trained.models;
    report["training"] = trained.report;
    report["training"]["sessions"] = o.train_sessions;
  }
  auto cmp = compare_modes(domain, library, models, o.sessions, sc, mix_seed(o.seed, 3));
  report["mode"] = "compare";
  report["comparison"] = cmp.to_json();
  report["follows_lower_total_time"] = cmp.follows.mean.total_session_time < cmp.ignores.mean.total_session_time;
  report["follows_lower_waiting_time"] =
      cmp.follows.mean.total_waiting_time < cmp.ignores.mean.total_waiting_time;
  report["reduction_over_10pct"] = cmp.total_time_reduction() > 0.10;
  report["inputs"] = inputs;
  return report;
}

json cmd_eval(const Options& o) {
  const Bundle b = load_bundle(o.bundle, false, false);
  if (!b.advisor && !b.tagger) throw Error(ErrorCode::kMissingModelBundle, "empty bundle " + o.bundle);
  auto test = export_training_data(o.test);
  std::optional<TrainingCorpora> train;
  if (!o.data.empty()) train = export_training_data(o.data);

  json report{{"seed", o.seed}, {"inputs", {{"bundle", dir_digest(o.bundle)}, {"test", dir_digest(o.test)}}}};
  if (train) report["inputs"]["data"] = dir_digest(o.data);

  if (b.advisor) {
    const auto& schema = b.advisor->schema;
    std::vector<Demonstration> test_demos, train_demos;
    for (const auto& log : test.logs) {
      auto d = extract_demonstrations(log, schema, b.advisor->catalog);
      test_demos.insert(test_demos.end(), d.begin(), d.end());
    }
    if (train) {
      for (const auto& log : train->logs) {
        auto d = extract_demonstrations(log, schema, b.advisor->catalog);
        train_demos.insert(train_demos.end(), d.begin(), d.end());
      }
    }
    json types = json::object();
    for (const auto& [type, ensemble] : b.advisor->ensembles) {
      AdviceClassCatalog classes = ensemble.classes;
      auto data = build_dataset(test_demos, type, schema, classes, false);
      json t{{"rows", data.data.size()}, {"dropped", data.dropped}, {"members", ensemble.members.size()}};
      if (data.data.size() > 0 && !ensemble.members.empty()) {
        const double ens = evaluate_top_k(ensemble, data.data, 2);
        const double best = best_member_top_k(ensemble, data.data, 2);
        double majority = 0.0;
        if (train) {
          AdviceClassCatalog frozen = ensemble.classes;
          auto reference = build_dataset(train_demos, type, schema, frozen, false);
          majority = majority_baseline(reference.data, data.data, 2);
        } else {
          majority = majority_baseline(ensemble.test_data, data.data, 2);
        }
        t["ensemble_top2"] = ens;
        t["best_member_top2"] = best;
        t["majority_top2"] = majority;
        t["ensemble_ge_best_minus_0.02"] = ens >= best - 0.02;
        t["ensemble_ge_majority_plus_0.10"] = ens >= majority + 0.10;
      }
      types[std::string(to_string(type))] = t;
    }
    report["advisor"] = types;
  }

  if (b.tagger) {
    const F1Score f = f1_eval(*b.tagger, test.tag_corpus);
    report["tagger"] = {{"precision", f.precision}, {"recall", f.recall}, {"f1", f.f1},
                        {"messages", test.tag_corpus.size()}};
    if (train && !train->logs.empty()) {
      // Same schema, half the training logs vs all of them.
      std::vector<SessionLog> half(train->logs.begin(), train->logs.begin() + (train->logs.size() + 1) / 2);
      auto half_corpora = export_training_logs(std::move(half));
      auto [t50, r50] = train_tagger_model(half_corpora, b.tagger->schema(), TaggerHyper{}, o.seed);
      auto [t100, r100] = train_tagger_model(*train, b.tagger->schema(), TaggerHyper{}, o.seed);
      const double f50 = f1_eval(*t50, test.tag_corpus).f1;
      const double f100 = f1_eval(*t100, test.tag_corpus).f1;
      report["data_growth"] = {{"f1_50pct", f50}, {"f1_100pct", f100}, {"improvement", f100 - f50}};
    }
  }
  return report;
}

json cmd_serve(const Options& o, std::ostream& out) {
  ServiceConfig config = o.config.empty() ? ServiceConfig{} : ServiceConfig::load(o.config);
  if (!o.mode.empty()) {
    try {
      config.mode = phase_mode_from_string(o.mode);
    } catch (const Error& e) {
      throw Error(ErrorCode::kBadArgs, e.what());
    }
  }
  if (!o.bundle.empty()) {
    config.advisor_bundle = (fs::path(o.bundle) / "advisor.json").string();
    config.tagger_bundle = (fs::path(o.bundle) / "tagger.json").string();
  }
  if (o.port >= 0) config.port = o.port;
  if (!o.out.empty()) config.log_dir = o.out;
  if (o.clients) config.max_clients = o.clients;
  if (!o.host.empty()) config.host = o.host;
  config.seed = o.seed ? o.seed : config.seed;
  if (o.thresholds.size() == 2) config.thresholds = VoteThresholds{o.thresholds[0], o.thresholds[1]};

  // Signals go to a dedicated thread so stop() runs outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service service(config);
  const int port = service.bind();
  out << json{{"listening", port}, {"host", config.host}, {"mode", to_string(config.mode)},
              {"log_dir", config.log_dir.string()}}
             .dump()
      << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
  });
  service.run();
  waiter.join();
  return json{{"seed", config.seed}, {"stopped", true}, {"port", port}};
}

// ------------------------------------------------------------------- output

void flatten(const json& doc, const std::string& prefix, std::ostream& out) {
  if (doc.is_object()) {
    for (const auto& [k, v] : doc.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (doc.is_array() && !doc.empty() && doc.front().is_object()) {
    for (std::size_t i = 0; i < doc.size(); ++i) flatten(doc[i], prefix + "[" + std::to_string(i) + "]", out);
  } else {
    out << prefix << ": " << (doc.is_string() ? doc.get<std::string>() : doc.dump()) << '\n';
  }
}

void print_text(const std::string& command, const json& report, std::ostream& out) {
  if (command == "simulate" && report.contains("comparison")) {
    const json& c = report.at("comparison");
    out << std::fixed << std::setprecision(3);
    out << "mode             total_session_time  max_waiting_time  total_waiting_time\n";
    for (const char* m : {"follows_advice", "ignores_advice"}) {
      const json& mean = c.at(m).at("mean");
      out << std::left << std::setw(17) << m << std::right << std::setw(18)
          << mean.at("total_session_time").get<double>() << std::setw(18)
          << mean.at("max_waiting_time").get<double>() << std::setw(20)
          << mean.at("total_waiting_time").get<double>() << '\n';
    }
    out << "total time reduction: " << c.at("total_time_reduction").get<double>() * 100 << "%"
        << (report.at("reduction_over_10pct").get<bool>() ? " (>10%)" : " (<=10%, informational)") << '\n';
    out << "waiting time reduction: " << c.at("waiting_time_reduction").get<double>() * 100 << "%\n";
    out << "seed: " << report.at("seed") << '\n';
    json rest = report;
    rest.erase("comparison");
    flatten(rest, "", out);
    return;
  }
  flatten(report, "", out);
}

int fail(std::ostream& err, int code, std::string_view name, const std::string& message) {
  err << json{{"error", name}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"chatassist: operator advisor life-cycle (ingest, train, simulate, serve, eval)"};
  app.require_subcommand(1);
  Options o;
  o.port = -1;
  o.clients = 0;

  auto report_opt = [&](CLI::App* sub) {
    sub->add_option("--report", o.report, "Report format")->check(CLI::IsMember({"text", "structured"}));
    sub->add_option("--seed", o.seed, "Master seed");
  };

  auto* ingest = app.add_subcommand("ingest", "Session logs -> tag corpus and demonstrations");
  ingest->add_option("--data", o.data, "Directory of JSONL session logs")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", o.out, "Output directory")->required();
  ingest->add_option("--catalog", o.catalog, "Advice catalog")->check(CLI::ExistingFile);
  ingest->add_option("--labels", o.labels, "Schema size (0: every category)");
  ingest->add_flag("--quality-filter", o.quality_filter, "Drop unconfirmed auto tags");
  report_opt(ingest);

  auto* train_advisor = app.add_subcommand("train-advisor", "Train one gated ensemble per advice type");
  train_advisor->add_option("--data", o.data, "Directory of JSONL session logs")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_advisor->add_option("--out", o.out, "Bundle directory")->required();
  train_advisor->add_option("--catalog", o.catalog, "Advice catalog")->check(CLI::ExistingFile);
  train_advisor->add_option("--labels", o.labels, "Schema size (0: every category)");
  train_advisor->add_option("--ensemble-size", o.ensemble_size, "Members per ensemble")->check(CLI::PositiveNumber);
  train_advisor->add_option("--thresholds", o.thresholds, "First and secondary vote thresholds")->expected(2);
  train_advisor->add_flag("--quality-filter", o.quality_filter, "Drop unconfirmed auto tags");
  report_opt(train_advisor);

  auto* train_tagger = app.add_subcommand("train-tagger", "Train the auto-tagger");
  train_tagger->add_option("--data", o.data, "Directory of JSONL session logs")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_tagger->add_option("--out", o.out, "Bundle directory")->required();
  train_tagger->add_option("--labels", o.labels, "Schema size (0: every category)");
  train_tagger->add_flag("--quality-filter", o.quality_filter, "Drop unconfirmed auto tags");
  report_opt(train_tagger);

  auto* simulate = app.add_subcommand("simulate", "Scripted operator with storyboard clients");
  simulate->add_option("--data", o.data, "Domain directory (domain.json, catalog.json)")
      ->check(CLI::ExistingDirectory);
  simulate->add_option("--storyboards", o.storyboards, "Storyboard library")->check(CLI::ExistingDirectory);
  simulate->add_option("--bundle", o.bundle, "Trained bundle; trained on the fly when absent")
      ->check(CLI::ExistingDirectory);
  simulate->add_option("--sessions", o.sessions, "Sessions per operator mode")->check(CLI::PositiveNumber);
  simulate->add_option("--train-sessions", o.train_sessions, "Expert sessions when training on the fly")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--clients", o.clients, "Clients per session")->check(CLI::Range(1, 3));
  simulate->add_option("--mode", o.mode, "compare (both operator modes) or collect (expert logs)")
      ->check(CLI::IsMember({"compare", "collect"}));
  simulate->add_option("--ensemble-size", o.ensemble_size, "Members per ensemble")->check(CLI::PositiveNumber);
  simulate->add_option("--out", o.out, "Write session logs here (collect mode)");
  report_opt(simulate);

  auto* serve = app.add_subcommand("serve", "Run the session service");
  serve->add_option("--config", o.config, "Service config JSON")->check(CLI::ExistingFile);
  serve->add_option("--bundle", o.bundle, "Bundle directory")->check(CLI::ExistingDirectory);
  serve->add_option("--mode", o.mode, "collect, advise_and_collect or advise_only");
  serve->add_option("--port", o.port, "Port (0: any free port)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", o.host, "Listen address");
  serve->add_option("--clients", o.clients, "Max clients per session")->check(CLI::PositiveNumber);
  serve->add_option("--thresholds", o.thresholds, "First and secondary vote thresholds")->expected(2);
  serve->add_option("--out", o.out, "Log directory");
  report_opt(serve);

  auto* eval = app.add_subcommand("eval", "Top-2 accuracy, tagger F1 and data-growth comparison");
  eval->add_option("--bundle", o.bundle, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--test", o.test, "Held-out session logs")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", o.data, "Training logs (baseline and data-growth comparison)")
      ->check(CLI::ExistingDirectory);
  report_opt(eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, 2, "BadArgs", e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  if (o.thresholds.size() == 2 &&
      (o.thresholds[0] < 0 || o.thresholds[0] > 1 || o.thresholds[1] < 0 || o.thresholds[1] > 1))
    return fail(err, 2, "BadArgs", "thresholds must lie in [0, 1]");
  if (command != "serve" && o.clients == 0) o.clients = 3;
  try {
    json report;
    if (command == "ingest") report = cmd_ingest(o);
    else if (command == "train-advisor") report = cmd_train_advisor(o);
    else if (command == "train-tagger") report = cmd_train_tagger(o);
    else if (command == "simulate") report = cmd_simulate(o);
    else if (command == "serve") report = cmd_serve(o, out);
    else report = cmd_eval(o);
    report["command"] = command;
    if (o.report == "structured") out << report.dump(2) << '\n';
    else print_text(command, report, out);
    return 0;
  } catch (const Error& e) {
    return fail(err, e.code() == ErrorCode::kBadArgs ? 2 : 1, error_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail(err, 1, "Internal", e.what());
  }
}

}  // namespace chatassist
