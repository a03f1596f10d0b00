#include "chatassist/advisor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using nlohmann::json;

std::string_view to_string(AdviceType type) {
  switch (type) {
    case AdviceType::topic_acquisition: return "topic_acquisition";
    case AdviceType::resolution: return "resolution";
    case AdviceType::useful_information: return "useful_information";
  }
  return "topic_acquisition";
}

AdviceType advice_type_from_string(std::string_view text) {
  for (auto type : kAdviceTypes) {
    if (to_string(type) == text) return type;
  }
  throw Error(ErrorCode::kParseError, "unknown advice type '" + std::string(text) + "'");
}

// --- catalog ---------------------------------------------------------------

json AdviceItem::to_json() const {
  json doc{{"id", id}, {"type", to_string(type)}, {"display_text", display_text}};
  if (action_ref) doc["action_ref"] = *action_ref;
  if (!template_text.empty()) doc["template"] = template_text;
  if (!cues.empty()) doc["cues"] = cues;
  return doc;
}

AdviceItem AdviceItem::from_json(const json& doc) {
  AdviceItem item;
  item.id = doc.at("id").get<std::string>();
  item.type = advice_type_from_string(doc.at("type").get<std::string>());
  item.display_text = doc.at("display_text").get<std::string>();
  if (doc.contains("action_ref")) item.action_ref = doc.at("action_ref").get<std::string>();
  item.template_text = doc.value("template", std::string());
  for (const auto& cue : doc.value("cues", std::vector<std::string>{})) {
    item.cues.push_back(to_lower(cue));
  }
  return item;
}

AdviceCatalog::AdviceCatalog(std::vector<AdviceItem> items) : items_(std::move(items)) {
  std::set<std::string> seen;
  for (const auto& item : items_) {
    if (item.id.empty()) throw Error(ErrorCode::kBadConfig, "advice item without id");
    if (!seen.insert(item.id).second) {
      throw Error(ErrorCode::kBadConfig, "duplicate advice item id '" + item.id + "'");
    }
    if (item.type == AdviceType::topic_acquisition && !item.action_ref) {
      throw Error(ErrorCode::kBadConfig, "topic item '" + item.id + "' names no label");
    }
  }
}

const AdviceItem* AdviceCatalog::find(std::string_view id) const {
  for (const auto& item : items_) {
    if (item.id == id) return &item;
  }
  return nullptr;
}

const AdviceItem& AdviceCatalog::at(std::string_view id) const {
  if (const auto* item = find(id)) return *item;
  throw Error(ErrorCode::kUnknownActionRef, "advice item '" + std::string(id) + "' not in catalog");
}

void AdviceCatalog::check_against(const TagSchema& schema) const {
  for (const auto& item : items_) {
    if (item.type == AdviceType::topic_acquisition && !schema.labels.index_of(*item.action_ref)) {
      throw Error(ErrorCode::kSchemaMismatch,
                  "topic item '" + item.id + "' references label outside the schema");
    }
  }
}

std::vector<std::string> AdviceCatalog::infer_acts(std::string_view text) const {
  const std::string lower = to_lower(text);
  const bool question = lower.find('?') != std::string::npos;
  std::vector<std::string> acts;
  for (const auto& item : items_) {
    if (item.type == AdviceType::topic_acquisition && !question) continue;
    for (const auto& cue : item.cues) {
      if (!cue.empty() && lower.find(cue) != std::string::npos) {
        acts.push_back(item.id);
        break;
      }
    }
  }
  return acts;
}

json AdviceCatalog::to_json() const {
  json items = json::array();
  for (const auto& item : items_) items.push_back(item.to_json());
  return json{{"version", 1}, {"items", items}};
}

AdviceCatalog AdviceCatalog::from_json(const json& doc) {
  try {
    std::vector<AdviceItem> items;
    const json& list = doc.is_array() ? doc : doc.at("items");
    for (const auto& entry : list) items.push_back(AdviceItem::from_json(entry));
    return AdviceCatalog(std::move(items));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("advice catalog: ") + e.what());
  }
}

AdviceCatalog AdviceCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open catalog " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kParseError, "catalog is not JSON");
  return from_json(doc);
}

std::string AdviceCatalog::hash() const { return digest(to_json().dump()); }

AdviceSet make_advice_set(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

AdviceClassCatalog::AdviceClassCatalog() : classes_{AdviceSet{}} {}

std::size_t AdviceClassCatalog::intern(const AdviceSet& set) {
  if (auto i = find(set)) return *i;
  classes_.push_back(set);
  return classes_.size() - 1;
}

std::optional<std::size_t> AdviceClassCatalog::find(const AdviceSet& set) const {
  auto it = std::find(classes_.begin(), classes_.end(), set);
  if (it == classes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - classes_.begin());
}

std::string AdviceClassCatalog::label(std::size_t i) const {
  const auto& set = classes_.at(i);
  if (set.empty()) return "∅";
  std::string out = "{";
  for (std::size_t k = 0; k < set.size(); ++k) out += (k ? "," : "") + set[k];
  return out + "}";
}

json AdviceClassCatalog::to_json() const { return classes_; }

AdviceClassCatalog AdviceClassCatalog::from_json(const json& doc) {
  AdviceClassCatalog out;
  auto sets = doc.get<std::vector<AdviceSet>>();
  if (sets.empty() || !sets.front().empty()) {
    throw Error(ErrorCode::kParseError, "class catalog must start with the empty set");
  }
  out.classes_.clear();
  for (auto& set : sets) {
    if (make_advice_set(set) != set) throw Error(ErrorCode::kParseError, "unsorted advice set");
    if (std::find(out.classes_.begin(), out.classes_.end(), set) != out.classes_.end()) {
      throw Error(ErrorCode::kParseError, "duplicate advice class");
    }
    out.classes_.push_back(std::move(set));
  }
  return out;
}

std::string AdviceClassCatalog::hash() const { return digest(to_json().dump()); }

// --- demonstrations --------------------------------------------------------

json Demonstration::to_json() const {
  json targets = json::object();
  for (auto type : kAdviceTypes) targets[std::string(to_string(type))] = this->targets[type_index(type)];
  return json{{"session_id", session_id},
              {"client_id", client_id},
              {"t", state.tag_count},
              {"V", state.values},
              {"W", std::vector<int>(state.present.begin(), state.present.end())},
              {"targets", targets}};
}

Demonstration Demonstration::from_json(const json& doc) {
  try {
    Demonstration d;
    d.session_id = doc.at("session_id").get<std::string>();
    d.client_id = doc.at("client_id").get<std::string>();
    d.state.values = doc.at("V").get<std::vector<std::string>>();
    for (int bit : doc.at("W").get<std::vector<int>>()) {
      d.state.present.push_back(static_cast<std::uint8_t>(bit));
    }
    d.state.tag_count = doc.at("t").get<std::size_t>();
    for (auto type : kAdviceTypes) {
      d.targets[type_index(type)] = make_advice_set(
          doc.at("targets").at(std::string(to_string(type))).get<std::vector<std::string>>());
    }
    if (!d.state.consistent()) throw Error(ErrorCode::kMalformedVector, "demonstration vector");
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("demonstration: ") + e.what());
  }
}

namespace {

struct OperatorAction {
  std::size_t position;
  AdviceType type;
  AdviceSet set;
};

std::vector<OperatorAction> actions_of(const LogEvent& event, std::size_t position,
                                       const AdviceCatalog& catalog) {
  std::vector<OperatorAction> out;
  if (event.actor != Actor::human_operator) return out;
  std::vector<std::string> ids;
  if (event.kind == EventKind::message) {
    if (event.payload.contains("acts")) {
      ids = event.payload.at("acts").get<std::vector<std::string>>();
    } else {
      ids = catalog.infer_acts(event.payload.value("text", std::string()));
    }
  } else if (event.kind == EventKind::resource_use) {
    ids.push_back(event.payload.at("item_id").get<std::string>());
  } else {
    return out;
  }
  std::array<std::vector<std::string>, 3> by_type;
  for (const auto& id : ids) by_type[type_index(catalog.at(id).type)].push_back(id);
  for (auto type : kAdviceTypes) {
    if (!by_type[type_index(type)].empty()) {
      out.push_back({position, type, make_advice_set(by_type[type_index(type)])});
    }
  }
  return out;
}

}  // namespace

std::vector<Demonstration> extract_demonstrations(const SessionLog& log, const TagSchema& schema,
                                                  const AdviceCatalog& catalog,
                                                  const ExtractOptions& options) {
  log.check_ordered();
  std::vector<Demonstration> demos;
  for (const auto& client : log.client_ids()) {
    const auto events = log.for_client(client);

    std::size_t last_acceptance = 0;
    bool any_acceptance = false;
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].kind == EventKind::advice_accepted) {
        last_acceptance = i;
        any_acceptance = true;
      }
    }

    std::vector<OperatorAction> actions;
    std::vector<std::pair<std::size_t, InformationVector>> snapshots;
    InformationVector x = InformationVector::empty(schema.size());
    snapshots.emplace_back(0, x);
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (e.kind == EventKind::tag) {
        TagEvent tag = tag_from_event(e);
        if (options.quality_filter && tag.source == TagSource::automatic &&
            !(any_acceptance && i < last_acceptance)) {
          continue;
        }
        if (!schema.labels.index_of(tag.category)) continue;
        x = apply_tag(x, tag, schema);
        snapshots.emplace_back(i, x);
        continue;
      }
      auto acts = actions_of(e, i, catalog);
      actions.insert(actions.end(), acts.begin(), acts.end());
    }

    const std::string session = events.empty() ? std::string() : events.front().session_id;
    for (const auto& [position, state] : snapshots) {
      Demonstration d;
      d.session_id = session;
      d.client_id = client;
      d.state = state;
      for (auto type : kAdviceTypes) {
        for (const auto& action : actions) {
          if (action.type == type && action.position > position) {
            d.targets[type_index(type)] = action.set;
            break;
          }
        }
      }
      demos.push_back(std::move(d));
    }
  }
  return demos;
}

DemonstrationDataset build_dataset(std::span<const Demonstration> demos, AdviceType type,
                                   const TagSchema& schema, AdviceClassCatalog& classes,
                                   bool grow) {
  DemonstrationDataset out;
  for (const auto& d : demos) {
    const auto& target = d.targets[type_index(type)];
    std::optional<std::size_t> cls = grow ? classes.intern(target) : classes.find(target);
    if (!cls) {
      ++out.dropped;
      continue;
    }
    out.data.add(encode(d.state, schema), *cls);
  }
  out.data.num_classes = classes.size();
  return out;
}

// --- ensemble --------------------------------------------------------------

std::size_t Ensemble::input_dim() const {
  return members.empty() ? 0 : members.front().network.spec().input_dim;
}

double majority_baseline(const LabeledDataset& train, const LabeledDataset& test, std::size_t k) {
  if (test.empty()) throw Error(ErrorCode::kEmptyDataset, "baseline on empty test set");
  const auto counts = train.class_counts();
  std::vector<double> scores(counts.begin(), counts.end());
  const auto chosen = top_k(scores, k);
  std::size_t hits = 0;
  for (auto label : test.labels) {
    if (std::find(chosen.begin(), chosen.end(), label) != chosen.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

Ensemble train_ensemble(const LabeledDataset& data, const AdviceClassCatalog& classes,
                        const EnsembleConfig& config, std::uint64_t seed) {
  data.validate();
  if (data.num_classes != classes.size()) {
    throw Error(ErrorCode::kBadConfig, "dataset classes do not match the advice class catalog");
  }
  if (config.ensemble_size == 0) throw Error(ErrorCode::kBadConfig, "ensemble size must be positive");
  std::size_t present_classes = 0;
  for (auto c : data.class_counts()) present_classes += c > 0 ? 1 : 0;
  if (present_classes < 2) {
    throw Error(ErrorCode::kInsufficientData, "need at least two target classes");
  }
  if (data.size() < config.min_rows_per_member * config.ensemble_size) {
    throw Error(ErrorCode::kInsufficientData,
                std::to_string(data.size()) + " rows < " +
                    std::to_string(config.min_rows_per_member * config.ensemble_size));
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(mix_seed(seed, 1));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(data.size()))));
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const LabeledDataset train = data.subset(train_idx);

  Ensemble ensemble;
  ensemble.classes = classes;
  ensemble.thresholds = config.thresholds;
  ensemble.ensemble_size = config.ensemble_size;
  ensemble.test_data = data.subset(test_idx);
  ensemble.test_digest = ensemble.test_data.digest();
  ensemble.train_digest = train.digest();
  ensemble.p_threshold = config.p_threshold
                             ? *config.p_threshold
                             : majority_baseline(train, ensemble.test_data) + config.p_threshold_margin;

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[train.labels[i]].push_back(i);
  std::vector<std::size_t> present_counts;
  for (const auto& rows : by_class) {
    if (!rows.empty()) present_counts.push_back(rows.size());
  }
  std::sort(present_counts.begin(), present_counts.end());
  const std::size_t balanced_per_class = present_counts[present_counts.size() / 2];
  const auto subset_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(config.random_subset_fraction * static_cast<double>(train.size()))));

  const std::size_t max_attempts =
      config.max_attempts ? config.max_attempts : 10 * config.ensemble_size;
  const std::size_t input_dim = data.input_dim();

  for (std::uint64_t candidate = 0; ensemble.members.size() < config.ensemble_size; ++candidate) {
    if (candidate >= max_attempts) {
      throw Error(ErrorCode::kGateUnsatisfiable,
                  std::to_string(ensemble.members.size()) + " of " +
                      std::to_string(config.ensemble_size) + " members after " +
                      std::to_string(max_attempts) + " attempts at P_threshold=" +
                      std::to_string(ensemble.p_threshold));
    }
    const std::uint64_t candidate_seed = mix_seed(seed, 1000 + candidate);
    std::mt19937_64 rng(candidate_seed);
    const double num = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const bool balanced = !(num > 0.5);

    std::vector<std::size_t> picks;
    if (!balanced) {
      picks.resize(train.size());
      std::iota(picks.begin(), picks.end(), 0);
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(subset_size);
    } else {
      for (const auto& rows : by_class) {
        if (rows.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
        for (std::size_t k = 0; k < balanced_per_class; ++k) picks.push_back(rows[pick(rng)]);
      }
    }

    Network net = generate_random_network(mix_seed(candidate_seed, 2), input_dim,
                                          data.num_classes, config.arch);
    net = chatassist::train(std::move(net), train.subset(picks), config.hyper);
    const double p_net = accuracy(net, ensemble.test_data, 1);
    ++ensemble.attempts;
    if (p_net > ensemble.p_threshold) {
      ensemble.members.push_back({std::move(net), p_net, candidate, balanced});
    }
  }
  return ensemble;
}

json Ensemble::to_json() const {
  json member_docs = json::array();
  const std::string catalog_hash = classes.hash();
  for (const auto& m : members) {
    member_docs.push_back({{"network", network_to_json(m.network, catalog_hash)},
                           {"heldout_accuracy", m.heldout_accuracy},
                           {"candidate", m.candidate},
                           {"balanced_subset", m.balanced_subset}});
  }
  return json{{"version", 1},
              {"advice_type", to_string(type)},
              {"classes", classes.to_json()},
              {"thresholds",
               {{"first_option", thresholds.first_option},
                {"secondary_option", thresholds.secondary_option},
                {"p_threshold", p_threshold}}},
              {"ensemble_size", ensemble_size},
              {"attempts", attempts},
              {"schema_hash", schema_hash},
              {"train_digest", train_digest},
              {"test_digest", test_digest},
              {"test_data", test_data.to_json()},
              {"members", member_docs}};
}

Ensemble Ensemble::from_json(const json& doc) {
  try {
    if (doc.at("version").get<int>() != 1) throw Error(ErrorCode::kParseError, "ensemble version");
    Ensemble e;
    e.type = advice_type_from_string(doc.at("advice_type").get<std::string>());
    e.classes = AdviceClassCatalog::from_json(doc.at("classes"));
    const auto& t = doc.at("thresholds");
    e.thresholds.first_option = t.at("first_option").get<double>();
    e.thresholds.secondary_option = t.at("secondary_option").get<double>();
    e.p_threshold = t.at("p_threshold").get<double>();
    e.ensemble_size = doc.at("ensemble_size").get<std::size_t>();
    e.attempts = doc.value("attempts", std::size_t{0});
    e.schema_hash = doc.value("schema_hash", std::string());
    e.train_digest = doc.value("train_digest", std::string());
    e.test_digest = doc.value("test_digest", std::string());
    e.test_data = LabeledDataset::from_json(doc.at("test_data"));
    const std::string catalog_hash = e.classes.hash();
    for (const auto& m : doc.at("members")) {
      std::string member_hash;
      Network net = network_from_json(m.at("network"), &member_hash);
      if (member_hash != catalog_hash) {
        throw Error(ErrorCode::kSchemaMismatch, "member trained on a different class catalog");
      }
      if (net.spec().output_dim != e.classes.size()) {
        throw Error(ErrorCode::kDimMismatch, "member outputs do not match class catalog");
      }
      e.members.push_back({std::move(net), m.at("heldout_accuracy").get<double>(),
                           m.at("candidate").get<std::uint64_t>(),
                           m.at("balanced_subset").get<bool>()});
    }
    for (const auto& m : e.members) {
      if (m.network.spec().input_dim != e.input_dim()) {
        throw Error(ErrorCode::kDimMismatch, "members disagree on input width");
      }
    }
    if (e.test_data.digest() != e.test_digest) {
      throw Error(ErrorCode::kParseError, "archived test data does not match its digest");
    }
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("ensemble: ") + ex.what());
  }
}

// --- voting ----------------------------------------------------------------

Recommendation vote_ballots(std::span<const std::size_t> ballots, std::size_t num_classes,
                            const VoteThresholds& thresholds, const AdviceClassCatalog* classes) {
  Recommendation out;
  if (ballots.empty()) return out;
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto b : ballots) {
    if (b >= num_classes) throw Error(ErrorCode::kDimMismatch, "ballot outside class range");
    ++counts[b];
  }
  std::vector<std::size_t> options;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) options.push_back(c);
  }
  std::stable_sort(options.begin(), options.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });

  const double members = static_cast<double>(ballots.size());
  const double limits[2] = {thresholds.first_option, thresholds.secondary_option};
  for (std::size_t k = 0; k < 2 && k < options.size(); ++k) {
    const std::size_t cls = options[k];
    const double rank = static_cast<double>(counts[cls]) / members;
    if (!(rank > limits[k]) || cls == 0) continue;
    RecommendedOption option{cls, rank, {}};
    if (classes) option.item_ids = (*classes)[cls];
    out.items.push_back(std::move(option));
  }
  return out;
}

std::vector<std::size_t> member_ballots(const Ensemble& ensemble, std::span<const double> x) {
  if (x.size() != ensemble.input_dim()) {
    throw Error(ErrorCode::kDimMismatch, "vector width " + std::to_string(x.size()) +
                                             " != ensemble input " +
                                             std::to_string(ensemble.input_dim()));
  }
  std::vector<std::size_t> ballots;
  ballots.reserve(ensemble.members.size());
  for (const auto& m : ensemble.members) ballots.push_back(argmax(predict(m.network, x)));
  return ballots;
}

Recommendation vote(const Ensemble& ensemble, std::span<const double> x) {
  const auto ballots = member_ballots(ensemble, x);
  return vote_ballots(ballots, ensemble.classes.size(), ensemble.thresholds, &ensemble.classes);
}

double best_member_top_k(const Ensemble& ensemble, const LabeledDataset& test, std::size_t k) {
  double best = 0.0;
  for (const auto& m : ensemble.members) best = std::max(best, accuracy(m.network, test, k));
  return best;
}

double evaluate_top_k(const Ensemble& ensemble, const LabeledDataset& test, std::size_t k) {
  if (test.empty()) throw Error(ErrorCode::kEmptyDataset, "empty test set");
  if (k == 0) throw Error(ErrorCode::kBadConfig, "k must be positive");
  if (ensemble.members.empty()) throw Error(ErrorCode::kBadConfig, "ensemble has no members");
  const std::size_t classes = ensemble.classes.size();
  if (test.input_dim() != ensemble.input_dim()) {
    throw Error(ErrorCode::kDimMismatch, "test rows do not match ensemble input");
  }
  const Eigen::MatrixXd features = test.feature_matrix();
  Eigen::MatrixXd votes = Eigen::MatrixXd::Zero(features.rows(), static_cast<Eigen::Index>(classes));
  Eigen::MatrixXd mean_prob = Eigen::MatrixXd::Zero(features.rows(), static_cast<Eigen::Index>(classes));
  for (const auto& m : ensemble.members) {
    const Eigen::MatrixXd probs = m.network.forward(features);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < probs.cols(); ++c) {
        if (probs(r, c) > probs(r, best)) best = c;
      }
      votes(r, best) += 1.0;
    }
    mean_prob += probs;
  }
  mean_prob /= static_cast<double>(ensemble.members.size());

  std::size_t hits = 0;
  std::vector<std::size_t> order(classes);
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto ia = static_cast<Eigen::Index>(a);
      const auto ib = static_cast<Eigen::Index>(b);
      if (votes(r, ia) != votes(r, ib)) return votes(r, ia) > votes(r, ib);
      return mean_prob(r, ia) > mean_prob(r, ib);
    });
    const auto label = test.labels[static_cast<std::size_t>(r)];
    const auto end = order.begin() + static_cast<std::ptrdiff_t>(std::min(k, classes));
    if (std::find(order.begin(), end, label) != end) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// --- recommendations & bundle ---------------------------------------------

json Recommendation::to_json() const {
  json list = json::array();
  for (const auto& item : items) {
    list.push_back({{"class", item.class_index}, {"rank", item.rank}, {"item_ids", item.item_ids}});
  }
  return json{{"silent", silent()}, {"items", list}};
}

Recommendation Recommendation::from_json(const json& doc) {
  Recommendation r;
  for (const auto& item : doc.at("items")) {
    r.items.push_back({item.at("class").get<std::size_t>(), item.at("rank").get<double>(),
                       item.at("item_ids").get<std::vector<std::string>>()});
  }
  return r;
}

json advice_map_to_json(const AdviceMap& advice) {
  json doc = json::object();
  for (const auto& [type, rec] : advice) doc[std::string(to_string(type))] = rec.to_json();
  return doc;
}

AdviceMap advice_map_from_json(const json& doc) {
  AdviceMap out;
  for (const auto& [key, value] : doc.items()) {
    out[advice_type_from_string(key)] = Recommendation::from_json(value);
  }
  return out;
}

AdviceMap advise(const InformationVector& x, const AdvisorBundle& bundle) {
  const EncodedVector encoded = encode(x, bundle.schema);
  AdviceMap out;
  for (auto type : kAdviceTypes) {
    auto it = bundle.ensembles.find(type);
    if (it == bundle.ensembles.end()) {
      out[type] = Recommendation{};
      continue;
    }
    Recommendation rec = vote(it->second, encoded);
    if (type == AdviceType::topic_acquisition) {
      std::vector<RecommendedOption> kept;
      for (auto& option : rec.items) {
        std::erase_if(option.item_ids, [&](const std::string& id) {
          const auto* item = bundle.catalog.find(id);
          if (!item || !item->action_ref) return false;
          auto label = bundle.schema.labels.index_of(*item->action_ref);
          return label && x.present[*label] == 1;
        });
        if (!option.item_ids.empty()) kept.push_back(std::move(option));
      }
      rec.items = std::move(kept);
    }
    out[type] = std::move(rec);
  }
  return out;
}

json AdvisorBundle::to_json() const {
  json ensemble_docs = json::object();
  for (const auto& [type, e] : ensembles) ensemble_docs[std::string(to_string(type))] = e.to_json();
  return json{{"version", 1},
              {"schema_hash", schema.hash()},
              {"schema", schema.to_json()},
              {"catalog", catalog.to_json()},
              {"ensembles", ensemble_docs}};
}

AdvisorBundle AdvisorBundle::from_json(const json& doc) {
  try {
    if (doc.at("version").get<int>() != 1) throw Error(ErrorCode::kParseError, "bundle version");
    AdvisorBundle b;
    b.schema = TagSchema::from_json(doc.at("schema"));
    if (doc.at("schema_hash").get<std::string>() != b.schema.hash()) {
      throw Error(ErrorCode::kSchemaMismatch, "bundle schema hash mismatch");
    }
    b.catalog = AdviceCatalog::from_json(doc.at("catalog"));
    const std::size_t dim = encoded_dim(b.schema);
    for (const auto& [key, value] : doc.at("ensembles").items()) {
      Ensemble e = Ensemble::from_json(value);
      if (e.schema_hash != b.schema.hash() || e.input_dim() != dim) {
        throw Error(ErrorCode::kSchemaMismatch, "ensemble '" + key + "' built for another schema");
      }
      b.ensembles.emplace(advice_type_from_string(key), std::move(e));
    }
    return b;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParseError, std::string("advisor bundle: ") + ex.what());
  }
}

void AdvisorBundle::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  out << to_json().dump() << '\n';
}

AdvisorBundle AdvisorBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingModelBundle, "cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kParseError, path.string() + " is not JSON");
  return from_json(doc);
}

}  // namespace chatassist
