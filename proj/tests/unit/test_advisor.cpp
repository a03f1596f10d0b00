#include <algorithm>
#include <map>
#include <random>

#include "doctest.h"

#include "chatassist/advisor.hpp"
#include "chatassist/eventlog.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace chatassist;
using nlohmann::json;

namespace {

AdviceItem item(std::string id, AdviceType type, std::optional<std::string> ref, std::vector<std::string> cues) {
  AdviceItem i;
  i.id = std::move(id);
  i.type = type;
  i.display_text = i.id;
  i.action_ref = std::move(ref);
  i.cues = std::move(cues);
  return i;
}

AdviceCatalog small_catalog() {
  return AdviceCatalog({
      item("ask:university", AdviceType::topic_acquisition, "university", {"university"}),
      item("ask:savings", AdviceType::topic_acquisition, "savings", {"savings", "saved"}),
      item("ask:sex", AdviceType::topic_acquisition, "sex", {"sex", "gender"}),
      item("res:federal", AdviceType::resolution, std::nullopt, {"federal loan options are"}),
      item("calc:repayment", AdviceType::useful_information, "calc:repayment", {}),
      item("info:selective_service", AdviceType::useful_information, "info:selective_service", {}),
      item("info:fafsa_guide", AdviceType::useful_information, "info:fafsa_guide", {}),
  });
}

TagSchema small_schema() {
  TagSchema s;
  s.labels = LabelList({"inquiry", "savings", "sex", "university"});
  s.vocab.add("inquiry", "federal_loan_options");
  s.vocab.add("savings", "20k");
  s.vocab.add("sex", "male");
  s.vocab.add("sex", "female");
  s.vocab.add("university", "UCLA");
  s.vocab.add("university", "MIT");
  return s;
}

SessionLog read_fixture(const std::string& name) {
  return read_log_file(testing::fixture(name)).log;
}

Network fixed_member(const std::vector<std::size_t>& map) {
  // One-hot input i goes to class map[i] with a large logit.
  const auto n = static_cast<Eigen::Index>(map.size());
  DenseLayer layer{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) layer.weights(static_cast<Eigen::Index>(map[i]), i) = 10.0;
  return Network(NetworkSpec{map.size(), map.size(), {}, Activation::relu, 0}, {layer});
}

InformationVector with(const TagSchema& s, std::vector<std::pair<std::string, std::string>> tags) {
  auto x = InformationVector::empty(s.size());
  for (auto& [c, v] : tags) {
    TagEvent t;
    t.category = c;
    t.value = v;
    x = apply_tag(x, t, s);
  }
  return x;
}

Demonstration demo(const InformationVector& x, AdviceSet topic, AdviceSet res, AdviceSet info) {
  Demonstration d;
  d.session_id = "s";
  d.client_id = "c";
  d.state = x;
  d.targets = {std::move(topic), std::move(res), std::move(info)};
  return d;
}

}  // namespace

TEST_CASE("advice sets are sorted and unique; class 0 is the empty set") {
  CHECK(make_advice_set({"b", "a", "b"}) == AdviceSet{"a", "b"});
  AdviceClassCatalog classes;
  CHECK(classes.size() == 1);
  CHECK(classes[0].empty());
  CHECK(classes.intern({"x"}) == 1);
  CHECK(classes.intern({"x"}) == 1);
  CHECK(classes.intern({}) == 0);
  CHECK(*classes.find({"x"}) == 1);
  CHECK_FALSE(classes.find({"y"}));
  CHECK(AdviceClassCatalog::from_json(classes.to_json()) == classes);
}

TEST_CASE("catalog checks topic items against the schema and infers acts") {
  auto catalog = small_catalog();
  CHECK_NOTHROW(catalog.check_against(small_schema()));
  TagSchema narrow;
  narrow.labels = LabelList({"inquiry"});
  CHECK_ERROR_CODE(catalog.check_against(narrow), ErrorCode::kSchemaMismatch);
  CHECK(catalog.infer_acts("Which university will you attend?") == std::vector<std::string>{"ask:university"});
  CHECK(catalog.infer_acts("I like that university.").empty());  // topic cues need a question
  CHECK_ERROR_CODE(catalog.at("nope"), ErrorCode::kUnknownActionRef);
  CHECK(AdviceCatalog::from_json(catalog.to_json()).hash() == catalog.hash());
}

TEST_CASE("demonstrations from the 6-event fixture, traced by hand") {
  auto log = read_fixture("demo6.jsonl");
  REQUIRE(log.events.size() == 6);
  TagSchema s = small_schema();
  auto demos = extract_demonstrations(log, s, small_catalog());
  // Snapshots: before any tag, after the inquiry tag, after the university tag.
  REQUIRE(demos.size() == 3);
  const auto topic = type_index(AdviceType::topic_acquisition);
  CHECK(demos[0].state == InformationVector::empty(s.size()));
  CHECK(demos[0].targets[topic] == AdviceSet{"ask:university"});
  CHECK(demos[1].state.values[*s.labels.index_of("inquiry")] == "federal_loan_options");
  CHECK(demos[1].targets[topic] == AdviceSet{"ask:university"});
  // The last snapshot has nothing after it.
  for (const auto& t : demos[2].targets) CHECK(t.empty());
  for (const auto& d : demos) {
    CHECK(d.targets[type_index(AdviceType::resolution)].empty());
    CHECK(d.targets[type_index(AdviceType::useful_information)].empty());
  }
}

TEST_CASE("resource use after a snapshot becomes the useful-information target") {
  auto log = read_fixture("demo6.jsonl");
  LogEvent use;
  use.ts_ms = 4500;
  use.session_id = "demo6";
  use.client_id = "c1";
  use.actor = Actor::human_operator;
  use.kind = EventKind::resource_use;
  use.payload = {{"item_id", "calc:repayment"}};
  log.events.insert(log.events.begin() + 5, use);
  auto demos = extract_demonstrations(log, small_schema(), small_catalog());
  REQUIRE(demos.size() == 3);
  CHECK(demos[2].targets[type_index(AdviceType::useful_information)] == AdviceSet{"calc:repayment"});
  CHECK(demos[0].targets[type_index(AdviceType::useful_information)] == AdviceSet{"calc:repayment"});
}

TEST_CASE("extraction errors") {
  auto log = read_fixture("demo6.jsonl");
  auto unordered = log;
  std::swap(unordered.events[1], unordered.events[3]);
  CHECK_ERROR_CODE(extract_demonstrations(unordered, small_schema(), small_catalog()), ErrorCode::kUnorderedLog);
  auto unknown = log;
  unknown.events[2].payload["acts"] = json::array({"ask:pet"});
  CHECK_ERROR_CODE(extract_demonstrations(unknown, small_schema(), small_catalog()), ErrorCode::kUnknownActionRef);
}

TEST_CASE("build_dataset interns classes when growing, drops them when frozen") {
  TagSchema s = small_schema();
  std::vector<Demonstration> demos{demo(with(s, {}), {"ask:university"}, {}, {}),
                                   demo(with(s, {{"university", "MIT"}}), {"ask:savings"}, {}, {})};
  AdviceClassCatalog classes;
  auto grown = build_dataset(demos, AdviceType::topic_acquisition, s, classes, true);
  CHECK(grown.data.size() == 2);
  CHECK(classes.size() == 3);
  AdviceClassCatalog frozen;
  frozen.intern({"ask:university"});
  auto kept = build_dataset(demos, AdviceType::topic_acquisition, s, frozen, false);
  CHECK(kept.data.size() == 1);
  CHECK(kept.dropped == 1);
  CHECK(grown.data.input_dim() == encoded_dim(s));
}

TEST_CASE("vote examples") {
  const VoteThresholds half{0.5, 0.25};
  std::vector<std::size_t> unanimous(10, 1);
  auto r = vote_ballots(unanimous, 3, half);
  REQUIRE(r.items.size() == 1);
  CHECK(r.items[0].class_index == 1);
  CHECK(r.items[0].rank == 1.0);

  // 40 / 35 / 25 over classes A=1, B=2, C=3 with first 0.5 and secondary 0.3.
  std::vector<std::size_t> split;
  split.insert(split.end(), 8, 1);
  split.insert(split.end(), 7, 2);
  split.insert(split.end(), 5, 3);
  auto s = vote_ballots(split, 4, VoteThresholds{0.5, 0.3});
  REQUIRE(s.items.size() == 1);
  CHECK(s.items[0].class_index == 2);
  CHECK(s.items[0].rank == doctest::Approx(0.35));

  CHECK(vote_ballots(std::vector<std::size_t>(5, 0), 3, half).silent());
  CHECK_ERROR_CODE(vote_ballots(std::vector<std::size_t>{3}, 3, half), ErrorCode::kDimMismatch);
}

TEST_CASE("voting properties hold for every ballot sequence up to 5 members and 4 classes") {
  auto report = oracle::check_voting(5, 4);
  CHECK_MESSAGE(report.violations == 0, report.first_failure);
  CHECK(report.sequences > 1000);
}

TEST_CASE("evaluate_top_k on a fixed 3-member ensemble equals the hand count") {
  Ensemble e;
  e.classes.intern({"a"});
  e.classes.intern({"b"});
  e.members.push_back({fixed_member({0, 1, 2})});
  e.members.push_back({fixed_member({0, 2, 2})});
  e.members.push_back({fixed_member({1, 2, 0})});
  e.ensemble_size = 3;
  LabeledDataset test;
  test.num_classes = 3;
  auto onehot = [](std::size_t i) {
    std::vector<double> x(3, 0.0);
    x[i] = 1.0;
    return x;
  };
  // (input, label): top-2 sets are {0,1} for e0, {2,1} for e1, {2,0} for e2.
  const std::vector<std::pair<std::size_t, std::size_t>> rows{{0, 0}, {0, 1}, {0, 2}, {1, 2}, {1, 1},
                                                              {1, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}};
  for (auto [i, label] : rows) test.add(onehot(i), label);
  CHECK(evaluate_top_k(e, test, 2) == doctest::Approx(0.6));
  CHECK(evaluate_top_k(e, test, 3) == 1.0);
  CHECK(evaluate_top_k(e, test, 1) == doctest::Approx(0.3));  // winners 0, 2, 2
  CHECK(best_member_top_k(e, test, 1) == doctest::Approx(0.3));  // each member hits 3 rows

  Ensemble perfect;
  perfect.classes = e.classes;
  perfect.members.push_back({fixed_member({0, 1, 2})});
  LabeledDataset exact;
  exact.num_classes = 3;
  for (std::size_t i = 0; i < 3; ++i) exact.add(onehot(i), i);
  CHECK(evaluate_top_k(perfect, exact, 2) == 1.0);
  CHECK(evaluate_top_k(perfect, exact, 1) == 1.0);

  LabeledDataset empty;
  empty.num_classes = 3;
  CHECK_ERROR_CODE(evaluate_top_k(e, empty, 2), ErrorCode::kEmptyDataset);
}

TEST_CASE("member order does not change votes") {
  Ensemble e;
  e.classes.intern({"a"});
  e.classes.intern({"b"});
  e.thresholds = {0.3, 0.2};
  e.members.push_back({fixed_member({0, 1, 2})});
  e.members.push_back({fixed_member({1, 2, 2})});
  e.members.push_back({fixed_member({1, 2, 0})});
  Ensemble swapped = e;
  std::reverse(swapped.members.begin(), swapped.members.end());
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> x(3, 0.0);
    x[i] = 1.0;
    CHECK(vote(e, x) == vote(swapped, x));
  }
  CHECK_ERROR_CODE(vote(e, std::vector<double>(4, 0.0)), ErrorCode::kDimMismatch);
}

namespace {

LabeledDataset noisy_blobs(std::uint64_t seed, std::size_t rows) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_int_distribution<std::size_t> c(0, 2);
  LabeledDataset d;
  d.num_classes = 3;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto label = c(rng);
    std::vector<double> x{g(rng) + 1.5 * double(label == 1), g(rng) + 1.5 * double(label == 2), g(rng)};
    d.add(x, label);
  }
  return d;
}

AdviceClassCatalog three_classes() {
  AdviceClassCatalog classes;
  classes.intern({"a"});
  classes.intern({"b"});
  return classes;
}

}  // namespace

TEST_CASE("a zero gate keeps the first candidates") {
  auto d = noisy_blobs(1, 200);
  EnsembleConfig config;
  config.ensemble_size = 5;
  config.p_threshold = 0.0;
  auto e = train_ensemble(d, three_classes(), config, 7);
  CHECK(e.members.size() == 5);
  CHECK(e.attempts == 5);
  for (std::size_t i = 0; i < e.members.size(); ++i) CHECK(e.members[i].candidate == i);
}

TEST_CASE("an impossible gate is reported") {
  auto d = noisy_blobs(2, 200);
  EnsembleConfig config;
  config.ensemble_size = 3;
  config.p_threshold = 1.0;
  config.max_attempts = 6;
  CHECK_ERROR_CODE(train_ensemble(d, three_classes(), config, 7), ErrorCode::kGateUnsatisfiable);
}

TEST_CASE("ensemble training preconditions") {
  EnsembleConfig config;
  config.ensemble_size = 25;
  CHECK_ERROR_CODE(train_ensemble(noisy_blobs(3, 100), three_classes(), config, 1), ErrorCode::kInsufficientData);
  LabeledDataset one_class;
  one_class.num_classes = 3;
  for (int i = 0; i < 300; ++i) one_class.add({double(i), 0.0, 1.0}, 1);
  config.ensemble_size = 2;
  CHECK_ERROR_CODE(train_ensemble(one_class, three_classes(), config, 1), ErrorCode::kInsufficientData);
}

TEST_CASE("gated ensembles: every member clears the gate, training is deterministic, bundles round-trip") {
  auto d = noisy_blobs(4, 400);
  EnsembleConfig config;
  config.ensemble_size = 6;
  auto e = train_ensemble(d, three_classes(), config, 11);
  REQUIRE(e.members.size() == 6);
  for (const auto& m : e.members) CHECK(accuracy(m.network, e.test_data, 1) > e.p_threshold);
  CHECK(e.test_digest == e.test_data.digest());
  auto again = train_ensemble(d, three_classes(), config, 11);
  REQUIRE(again.members.size() == e.members.size());
  for (std::size_t i = 0; i < e.members.size(); ++i) CHECK(again.members[i].network == e.members[i].network);

  auto back = Ensemble::from_json(json::parse(e.to_json().dump()));
  REQUIRE(back.members.size() == e.members.size());
  for (std::size_t i = 0; i < e.members.size(); ++i) CHECK(back.members[i].network == e.members[i].network);
  CHECK(back.p_threshold == e.p_threshold);
  CHECK(back.test_data.digest() == e.test_digest);
  CHECK(back.classes == e.classes);
}

TEST_CASE("the default gate is the majority baseline plus 0.05") {
  auto d = noisy_blobs(5, 300);
  EnsembleConfig config;
  config.ensemble_size = 3;
  auto e = train_ensemble(d, three_classes(), config, 3);
  // Recompute the majority class of the train split from the archived digests'
  // complement: rows not in the test split.
  std::map<std::string, int> test_rows;
  for (const auto& r : e.test_data.rows) ++test_rows[json(r).dump()];
  std::vector<std::size_t> counts(3, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto key = json(d.rows[i]).dump();
    if (test_rows[key] > 0) {
      --test_rows[key];
      continue;
    }
    ++counts[d.labels[i]];
  }
  const auto majority = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const double hits = static_cast<double>(std::count(e.test_data.labels.begin(), e.test_data.labels.end(), majority));
  CHECK(e.p_threshold == doctest::Approx(hits / static_cast<double>(e.test_data.size()) + 0.05));
}

namespace {

AdvisorBundle toy_bundle() {
  TagSchema s = small_schema();
  std::vector<Demonstration> demos;
  // Opening question: university, then savings once the university is known.
  for (int i = 0; i < 12; ++i) demos.push_back(demo(with(s, {}), {"ask:university"}, {}, {}));
  for (int i = 0; i < 8; ++i) demos.push_back(demo(with(s, {{"university", "UCLA"}}), {"ask:savings"}, {}, {}));
  // Federal-loan inquiries: male applicants get the Selective Service resource.
  for (int i = 0; i < 10; ++i) {
    demos.push_back(demo(with(s, {{"inquiry", "federal_loan_options"}, {"sex", "male"}}), {}, {"res:federal"},
                         {"info:selective_service"}));
    demos.push_back(demo(with(s, {{"inquiry", "federal_loan_options"}, {"sex", "female"}}), {}, {"res:federal"},
                         {"info:fafsa_guide"}));
  }
  AdvisorBundle b;
  b.schema = s;
  b.catalog = small_catalog();
  EnsembleConfig config;
  config.ensemble_size = 3;
  config.min_rows_per_member = 5;
  config.p_threshold = 0.0;
  config.hyper.epochs = 200;
  for (auto type : kAdviceTypes) {
    AdviceClassCatalog classes;
    auto data = build_dataset(demos, type, s, classes, true);
    auto e = train_ensemble(data.data, classes, config, 100 + type_index(type));
    e.type = type;
    e.schema_hash = s.hash();
    b.ensembles.emplace(type, std::move(e));
  }
  return b;
}

bool has_item(const Recommendation& r, const std::string& id) {
  for (const auto& o : r.items)
    if (std::count(o.item_ids.begin(), o.item_ids.end(), id)) return true;
  return false;
}

}  // namespace

TEST_CASE("advise on a toy bundle") {
  const AdvisorBundle b = toy_bundle();
  const TagSchema& s = b.schema;

  auto opening = advise(with(s, {}), b);
  CHECK(has_item(opening[AdviceType::topic_acquisition], "ask:university"));

  auto male = advise(with(s, {{"inquiry", "federal_loan_options"}, {"sex", "male"}}), b);
  CHECK(has_item(male[AdviceType::useful_information], "info:selective_service"));
  CHECK(has_item(male[AdviceType::resolution], "res:federal"));

  // Everything known: no question is worth asking.
  auto full = advise(with(s, {{"inquiry", "federal_loan_options"}, {"savings", "20k"}, {"sex", "male"},
                              {"university", "MIT"}}),
                     b);
  CHECK(full[AdviceType::topic_acquisition].silent());

  // A bundle without an ensemble for a type stays silent for it.
  AdvisorBundle partial = b;
  partial.ensembles.erase(AdviceType::resolution);
  CHECK(advise(with(s, {}), partial)[AdviceType::resolution].silent());

  auto reloaded = AdvisorBundle::from_json(json::parse(b.to_json().dump()));
  for (auto type : kAdviceTypes) CHECK(advise(with(s, {}), reloaded)[type] == opening[type]);
  CHECK(advice_map_from_json(advice_map_to_json(male)) == male);
}
