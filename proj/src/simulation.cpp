#include "chatassist/simulation.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using json = nlohmann::json;

namespace {

struct SimClient {
  std::string id;
  BotState bot;
  InformationVector knowledge;  // what the operator has read, over the domain schema
  std::set<std::string> provided;
  std::set<std::string> opened;
  std::map<std::string, int> ask_counts;
  std::vector<TagEvent> pending_tags;
  std::optional<std::int64_t> waiting_since;
  bool in_turn = false;
  bool closed = false;
};

enum class StepKind { arrival, turn, post };

struct Step {
  StepKind kind = StepKind::turn;
  std::size_t client = 0;
  ClientMessage message;
  OperatorAction action;
};

}  // namespace

SimulatedSession simulate_session(const Domain& domain, const std::vector<Storyboard>& stories,
                                  const SimulationConfig& config, const ModelSet& models,
                                  std::uint64_t seed, const std::string& session_id) {
  SessionConfig sc;
  sc.session_id = session_id;
  sc.mode = config.session_mode;
  sc.seed = seed;
  sc.max_clients = std::max<std::size_t>(3, stories.size());
  sc.advisor = models.advisor;
  sc.tagger = models.tagger;
  for (std::size_t i = 0; i < stories.size(); ++i) sc.client_ids.push_back("c" + std::to_string(i + 1));
  Session session = Session::create(sc);

  const TagSchema known_schema = domain_schema(domain);
  std::mt19937_64 sim_rng(mix_seed(seed, 1));
  std::mt19937_64 op_rng(mix_seed(seed, 2));
  std::uniform_int_distribution<std::int64_t> think(config.timing.think_min_ms, config.timing.think_max_ms);

  std::vector<SimClient> clients;
  for (std::size_t i = 0; i < stories.size(); ++i) {
    SimClient c;
    c.id = sc.client_ids[i];
    c.bot = BotState::start(stories[i], mix_seed(seed, 100 + i), config.bot);
    c.knowledge = InformationVector::empty(known_schema.size());
    clients.push_back(std::move(c));
  }

  std::map<std::pair<std::int64_t, std::uint64_t>, Step> queue;
  std::uint64_t seq = 0;
  auto schedule = [&](std::int64_t t, Step step) { queue.emplace(std::make_pair(t, seq++), std::move(step)); };

  std::uniform_int_distribution<std::int64_t> jitter(0, std::max<std::int64_t>(0, config.timing.stagger_ms / 3));
  for (std::size_t i = 0; i < clients.size(); ++i) {
    auto [opening, state] = bot_respond(clients[i].bot, "", domain);
    clients[i].bot = std::move(state);
    const std::int64_t t = i == 0 ? 0 : static_cast<std::int64_t>(i) * config.timing.stagger_ms + jitter(sim_rng);
    schedule(t, Step{StepKind::arrival, i, std::move(opening), {}});
  }

  bool busy = false;
  bool turn_pending = false;
  std::size_t steps = 0;
  while (!queue.empty()) {
    if (++steps > config.max_steps) throw Error(ErrorCode::kInsufficientData, "simulation did not terminate");
    auto node = queue.extract(queue.begin());
    const std::int64_t t = node.key().first;
    Step& step = node.mapped();
    SimClient& c = clients[step.client];

    if (step.kind == StepKind::arrival) {
      if (c.closed) continue;
      const auto events = session.post_message(c.id, Actor::client, step.message.text, t);
      const auto index = events.front().payload.at("message_index").get<std::size_t>();
      auto read = [&](const std::string& label, const std::string& value) {
        TagEvent tag;
        tag.session_id = session_id;
        tag.category = label;
        tag.value = value;
        tag.message_index = index;
        tag.source = TagSource::manual;
        c.knowledge = apply_tag(c.knowledge, tag, known_schema);
        c.pending_tags.push_back(tag);
      };
      // the request is what an operator marks first
      if (step.message.inquiry) read(domain.inquiry_label(), *step.message.inquiry);
      for (const auto& d : step.message.disclosures) read(d.label, d.value);
      if (step.message.closing) {
        session.end_client(c.id, t);
        c.closed = true;
        c.waiting_since.reset();
        c.pending_tags.clear();
      } else if (!c.waiting_since) {
        c.waiting_since = t;
      }
      if (!busy && !turn_pending) {
        turn_pending = true;
        schedule(t, Step{StepKind::turn, 0, {}, {}});
      }
    } else if (step.kind == StepKind::turn) {
      turn_pending = false;
      std::optional<std::size_t> next;
      for (std::size_t i = 0; i < clients.size(); ++i) {
        const SimClient& k = clients[i];
        if (k.closed || k.in_turn || !k.waiting_since) continue;
        if (!next || *k.waiting_since < *clients[*next].waiting_since) next = i;
      }
      if (!next) continue;
      SimClient& target = clients[*next];
      busy = true;
      target.in_turn = true;
      std::int64_t effort = 0;
      if (config.manual_tagging) {
        for (const auto& tag : target.pending_tags) {
          session.record_tag(target.id, tag.category, tag.value, tag.message_index, t);
          effort += config.timing.tag_ms;
        }
      }
      target.pending_tags.clear();

      ClientView view;
      view.vector = target.knowledge;
      view.schema = &known_schema;
      view.provided = target.provided;
      view.opened = target.opened;
      view.ask_counts = target.ask_counts;
      if (advises(config.session_mode)) {
        if (auto latest = session.latest_advice(target.id)) view.advice = latest->second;
      }
      OperatorAction action =
          scripted_operator_step(view, domain, config.operator_mode, config.timing, op_rng, config.expert_noise);
      effort += action.effort_ms;
      schedule(t + effort, Step{StepKind::post, *next, {}, std::move(action)});
    } else {
      busy = false;
      c.in_turn = false;
      if (!c.closed) {
        const OperatorAction& action = step.action;
        if (!action.accepted_items.empty()) {
          auto latest = session.latest_advice(c.id);
          for (const auto& item : action.accepted_items) session.accept_advice(latest->first, item, t);
        }
        for (const auto& r : action.resources) {
          session.record_resource_use(c.id, r, t);
          c.opened.insert(r);
        }
        std::vector<std::string> acts = action.acts;
        if (models.advisor) {
          std::erase_if(acts, [&](const std::string& id) { return !models.advisor->catalog.find(id); });
        }
        session.post_message(c.id, Actor::human_operator, action.text, t, std::move(acts));
        c.waiting_since.reset();
        if (action.asked_label) ++c.ask_counts[*action.asked_label];
        for (const auto& act : action.acts) {
          const AdviceItem* item = domain.catalog().find(act);
          if (item && item->type == AdviceType::resolution) c.provided.insert(act);
        }
        auto [reply, state] = bot_respond(c.bot, action.text, domain);
        c.bot = std::move(state);
        schedule(t + think(sim_rng), Step{StepKind::arrival, step.client, std::move(reply), {}});
      }
      if (!turn_pending) {
        turn_pending = true;
        schedule(t, Step{StepKind::turn, 0, {}, {}});
      }
    }
  }

  SimulatedSession out;
  out.log = session.log();
  out.metrics = compute_time_metrics(out.log);
  out.storyboards = stories;
  out.meta = session.meta();
  out.meta["operator_mode"] = to_string(config.operator_mode);
  return out;
}

std::vector<Storyboard> draw_storyboards(const Domain& domain, const std::vector<Storyboard>& library,
                                         std::size_t clients, std::uint64_t seed) {
  std::vector<Storyboard> out;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < clients; ++i) {
    if (library.empty()) {
      out.push_back(random_storyboard(domain, mix_seed(seed, 10 + i)));
    } else {
      std::uniform_int_distribution<std::size_t> d(0, library.size() - 1);
      out.push_back(library[d(rng)]);
    }
  }
  return out;
}

std::vector<SimulatedSession> generate_expert_sessions(const Domain& domain,
                                                       const std::vector<Storyboard>& library,
                                                       std::size_t sessions, const SimulationConfig& config,
                                                       std::uint64_t seed) {
  SimulationConfig expert = config;
  expert.operator_mode = OperatorMode::expert;
  expert.session_mode = PhaseMode::collect;
  expert.manual_tagging = true;
  std::vector<SimulatedSession> out;
  for (std::size_t s = 0; s < sessions; ++s) {
    const std::uint64_t session_seed = mix_seed(seed, s);
    auto stories = draw_storyboards(domain, library, config.clients, mix_seed(session_seed, 7));
    out.push_back(simulate_session(domain, stories, expert, {}, session_seed,
                                   "p1-" + std::to_string(s + 1)));
  }
  return out;
}

TagSchema training_schema(const TrainingCorpora& corpora, std::size_t labels) {
  if (corpora.tag_events.empty()) throw Error(ErrorCode::kEmptyCorpus, "no tags in the training logs");
  std::set<std::string> categories;
  for (const auto& t : corpora.tag_events) categories.insert(trim(t.category));
  return build_schema(corpora.tag_events, labels ? labels : std::min<std::size_t>(32, categories.size()));
}

std::pair<std::shared_ptr<const AdvisorBundle>, json> train_advisor_bundle(
    const TrainingCorpora& corpora, const AdviceCatalog& catalog, const TrainingConfig& config,
    std::uint64_t seed) {
  auto bundle = std::make_shared<AdvisorBundle>();
  bundle->schema = training_schema(corpora, config.labels);
  // Topic items about labels that never made it into the schema cannot be advised.
  std::vector<AdviceItem> usable;
  json dropped = json::array();
  for (const auto& item : catalog.items()) {
    if (item.type == AdviceType::topic_acquisition && !bundle->schema.labels.index_of(*item.action_ref)) {
      dropped.push_back(item.id);
    } else {
      usable.push_back(item);
    }
  }
  bundle->catalog = AdviceCatalog(std::move(usable));
  bundle->catalog.check_against(bundle->schema);

  std::vector<Demonstration> demos;
  for (const auto& log : corpora.logs) {
    auto d = extract_demonstrations(log, bundle->schema, bundle->catalog,
                                    ExtractOptions{config.quality_filter});
    demos.insert(demos.end(), d.begin(), d.end());
  }
  json report{{"seed", seed},
              {"schema_hash", bundle->schema.hash()},
              {"labels", bundle->schema.size()},
              {"demonstrations", demos.size()},
              {"catalog_items_dropped", dropped}};
  json ensembles = json::object();
  for (auto type : kAdviceTypes) {
    AdviceClassCatalog classes;
    auto dataset = build_dataset(demos, type, bundle->schema, classes, true);
    Ensemble e = train_ensemble(dataset.data, classes, config.ensemble, mix_seed(seed, 50 + type_index(type)));
    e.type = type;
    e.schema_hash = bundle->schema.hash();
    ensembles[std::string(to_string(type))] = {{"classes", classes.size()},
                                               {"members", e.members.size()},
                                               {"attempts", e.attempts},
                                               {"p_threshold", e.p_threshold},
                                               {"top2_accuracy", evaluate_top_k(e, e.test_data, 2)}};
    bundle->ensembles.emplace(type, std::move(e));
  }
  report["ensembles"] = ensembles;
  return {std::move(bundle), std::move(report)};
}

std::pair<std::shared_ptr<const Tagger>, json> train_tagger_model(const TrainingCorpora& corpora,
                                                                   const TagSchema& schema,
                                                                   const TaggerHyper& base,
                                                                   std::uint64_t seed) {
  TaggerHyper hyper = base;
  hyper.seed = mix_seed(seed, 60);
  std::vector<TaggedMessage> corpus;
  for (const auto& row : corpora.tag_corpus) {
    TaggedMessage kept{row.text, {}};
    for (const auto& g : row.gold) {
      if (schema.labels.index_of(g.category)) kept.gold.push_back(g);
    }
    corpus.push_back(std::move(kept));
  }
  auto tagger = std::make_shared<Tagger>(train_tagger(corpus, schema, hyper));
  json report{{"seed", seed},
              {"schema_hash", schema.hash()},
              {"tag_corpus", corpus.size()},
              {"tagger_train_f1", f1_eval(*tagger, corpus).f1}};
  return {std::move(tagger), std::move(report)};
}

TrainedModels train_models(const TrainingCorpora& corpora, const AdviceCatalog& catalog,
                           const TrainingConfig& config, std::uint64_t seed) {
  auto [advisor, report] = train_advisor_bundle(corpora, catalog, config, seed);
  auto [tagger, tagger_report] = train_tagger_model(corpora, advisor->schema, config.tagger, seed);
  report["tag_corpus"] = tagger_report["tag_corpus"];
  report["tagger_train_f1"] = tagger_report["tagger_train_f1"];
  TrainedModels out;
  out.models.advisor = std::move(advisor);
  out.models.tagger = std::move(tagger);
  out.report = std::move(report);
  return out;
}

TimeMetrics mean_metrics(const std::vector<TimeMetrics>& metrics) {
  TimeMetrics m;
  if (metrics.empty()) return m;
  for (const auto& x : metrics) {
    m.total_session_time += x.total_session_time;
    m.max_waiting_time += x.max_waiting_time;
    m.total_waiting_time += x.total_waiting_time;
  }
  const double k = static_cast<double>(metrics.size());
  m.total_session_time /= k;
  m.max_waiting_time /= k;
  m.total_waiting_time /= k;
  return m;
}

double ComparisonReport::total_time_reduction() const {
  const double base = ignores.mean.total_session_time;
  return base > 0 ? (base - follows.mean.total_session_time) / base : 0.0;
}

double ComparisonReport::waiting_time_reduction() const {
  const double base = ignores.mean.total_waiting_time;
  return base > 0 ? (base - follows.mean.total_waiting_time) / base : 0.0;
}

json ComparisonReport::to_json() const {
  auto mode_doc = [](const ModeSummary& s) {
    json rows = json::array();
    for (const auto& m : s.sessions) rows.push_back(m.to_json());
    return json{{"mode", to_string(s.mode)}, {"mean", s.mean.to_json()}, {"sessions", rows}};
  };
  return json{{"seed", seed},
              {"follows_advice", mode_doc(follows)},
              {"ignores_advice", mode_doc(ignores)},
              {"total_time_reduction", total_time_reduction()},
              {"waiting_time_reduction", waiting_time_reduction()}};
}

ComparisonReport compare_modes(const Domain& domain, const std::vector<Storyboard>& library,
                               const ModelSet& models, std::size_t sessions,
                               const SimulationConfig& config, std::uint64_t seed) {
  ComparisonReport report;
  report.seed = seed;
  report.follows.mode = OperatorMode::follows_advice;
  report.ignores.mode = OperatorMode::ignores_advice;
  for (std::size_t s = 0; s < sessions; ++s) {
    const std::uint64_t session_seed = mix_seed(seed, s);
    auto stories = draw_storyboards(domain, library, config.clients, mix_seed(session_seed, 7));
    for (ModeSummary* summary : {&report.follows, &report.ignores}) {
      SimulationConfig c = config;
      c.operator_mode = summary->mode;
      c.session_mode = PhaseMode::advise_and_collect;
      c.manual_tagging = false;
      auto run = simulate_session(domain, stories, c, models, session_seed,
                                  std::string(summary->mode == OperatorMode::follows_advice ? "f-" : "i-") +
                                      std::to_string(s + 1));
      summary->sessions.push_back(run.metrics);
    }
  }
  report.follows.mean = mean_metrics(report.follows.sessions);
  report.ignores.mean = mean_metrics(report.ignores.sessions);
  return report;
}

}  // namespace chatassist
