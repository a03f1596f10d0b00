// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fails.
// Thresholds and time budgets are fixed here; run from ctest or by hand.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "chatassist/digest.hpp"
#include "chatassist/simulation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace chatassist;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kOracleStreams = 1000;
constexpr std::size_t kVoteMembers = 7;
constexpr std::size_t kVoteClasses = 4;
constexpr std::size_t kSeeds = 10;
constexpr std::size_t kSeedsNeeded = 9;
constexpr double kBestMemberSlack = 0.02;
constexpr double kMajorityMargin = 0.10;
constexpr std::size_t kMinSnapshots = 2000;
constexpr std::size_t kMinClasses = 6;
constexpr std::size_t kGradientNets = 20;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGrowthMeanImprovement = 0.03;
constexpr std::size_t kCompareSessions = 50;
constexpr double kInformationalReduction = 0.10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

const Domain& domain() {
  static const Domain d = Domain::load(testing::domain_file(), testing::catalog_file());
  return d;
}

// The pipeline the CLI runs without a bundle: 60 expert sessions, full training.
struct Trained {
  std::vector<SimulatedSession> expert;
  ModelSet models;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.expert = generate_expert_sessions(domain(), {}, 60, SimulationConfig{}, mix_seed(1, 1));
    std::vector<SessionLog> logs;
    for (const auto& s : out.expert) logs.push_back(s.log);
    out.models = train_models(export_training_logs(std::move(logs)), domain().catalog(), TrainingConfig{},
                              mix_seed(1, 2))
                     .models;
    return out;
  }();
  return t;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

Outcome vector_oracle() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, snapshots = 0;
  for (std::size_t i = 0; i < kOracleStreams; ++i) {
    const auto r = oracle::random_stream(rng);
    const auto got = snapshot_stream(r.tags, oracle::schema_of(r));
    const auto want = oracle::fold(r.tags, r.labels, r.vocab);
    snapshots += want.size();
    bool ok = got.size() == want.size();
    for (std::size_t k = 0; ok && k < got.size(); ++k) ok = oracle::same(got[k], want[k]);
    if (!ok) ++mismatches;
  }
  return {mismatches == 0, std::to_string(kOracleStreams - mismatches) + "/" + std::to_string(kOracleStreams) +
                               " streams match (" + std::to_string(snapshots) + " snapshots)"};
}

Outcome voting() {
  const auto r = oracle::check_voting(kVoteMembers, kVoteClasses);
  std::string detail = std::to_string(r.sequences) + " ballot sequences, " + std::to_string(r.checks) +
                       " threshold pairs, " + std::to_string(r.violations) + " violations";
  if (!r.first_failure.empty()) detail += "; first: " + r.first_failure;
  return {r.violations == 0, detail};
}

Outcome gate_soundness() {
  testing::TempDir dir("acceptance-gate");
  trained().models.advisor->save(dir / "advisor.json");
  const AdvisorBundle bundle = AdvisorBundle::load(dir / "advisor.json");
  std::size_t members = 0, violations = 0;
  for (const auto& [type, e] : bundle.ensembles) {
    if (e.test_data.digest() != e.test_digest) ++violations;
    for (const auto& m : e.members) {
      ++members;
      if (!(accuracy(m.network, e.test_data, 1) > e.p_threshold)) ++violations;
    }
  }
  return {members > 0 && violations == 0,
          std::to_string(members) + " members over " + std::to_string(bundle.ensembles.size()) +
              " ensembles, " + std::to_string(violations) + " violations"};
}

Outcome ensemble_benefit() {
  std::size_t passed = 0;
  std::ostringstream detail;
  SimulationConfig sc;
  sc.expert_noise = 0.05;
  const TagSchema schema = domain_schema(domain());
  const AdviceType type = AdviceType::topic_acquisition;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    auto demos = [&](std::uint64_t stream) {
      std::vector<Demonstration> out;
      for (const auto& s : generate_expert_sessions(domain(), {}, 100, sc, mix_seed(seed, stream))) {
        auto d = extract_demonstrations(s.log, schema, domain().catalog());
        out.insert(out.end(), d.begin(), d.end());
      }
      return out;
    };
    const auto train_demos = demos(1), test_demos = demos(2);
    AdviceClassCatalog classes;
    const auto train = build_dataset(train_demos, type, schema, classes, true).data;
    const auto test = build_dataset(test_demos, type, schema, classes, false).data;
    EnsembleConfig config;
    const Ensemble e = train_ensemble(train, classes, config, seed);
    const double ens = evaluate_top_k(e, test, 2);
    const double best = best_member_top_k(e, test, 2);
    const double majority = majority_baseline(train, test, 2);
    const bool corpus_ok = train.size() + test.size() >= kMinSnapshots && classes.size() >= kMinClasses;
    const bool ok = corpus_ok && ens >= best - kBestMemberSlack && ens >= majority + kMajorityMargin;
    passed += ok;
    detail << (seed > 1 ? "; " : "") << "s" << seed << " ens=" << fmt(ens) << " best=" << fmt(best)
           << " maj=" << fmt(majority) << " rows=" << train.size() + test.size() << " C=" << classes.size()
           << (ok ? "" : " (miss)");
  }
  return {passed >= kSeedsNeeded,
          std::to_string(passed) + "/" + std::to_string(kSeeds) + " seeds; " + detail.str()};
}

Outcome gradients() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> label(0, 3);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < kGradientNets; ++s) {
    Network net = generate_random_network(100 + s, 6, 4, ArchConfig{3, 4, 12});
    for (auto& layer : net.layers())
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * g(rng);
    LabeledDataset d;
    d.num_classes = 4;
    for (int r = 0; r < 10; ++r) {
      std::vector<double> row(6);
      for (auto& v : row) v = g(rng);
      d.add(std::move(row), label(rng));
    }
    worst = std::max(worst, oracle::max_gradient_error(net, d));
  }
  return {worst < kGradientTolerance,
          std::to_string(kGradientNets) + " nets, worst relative error " + std::to_string(worst)};
}

Outcome tagger_growth() {
  std::size_t passed = 0;
  double total = 0.0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    std::vector<SessionLog> train_logs, test_logs;
    for (auto& s : generate_expert_sessions(domain(), {}, 30, SimulationConfig{}, mix_seed(seed, 1)))
      train_logs.push_back(std::move(s.log));
    for (auto& s : generate_expert_sessions(domain(), {}, 10, SimulationConfig{}, mix_seed(seed, 2)))
      test_logs.push_back(std::move(s.log));
    const auto full = export_training_logs(train_logs);
    const auto half = export_training_logs(
        std::vector<SessionLog>(train_logs.begin(), train_logs.begin() + train_logs.size() / 2));
    const auto test = export_training_logs(test_logs);
    const TagSchema schema = training_schema(full, 0);
    const double f50 = f1_eval(*train_tagger_model(half, schema, TaggerHyper{}, seed).first, test.tag_corpus).f1;
    const double f100 = f1_eval(*train_tagger_model(full, schema, TaggerHyper{}, seed).first, test.tag_corpus).f1;
    passed += f100 >= f50;
    total += f100 - f50;
    detail << (seed > 1 ? "; " : "") << "s" << seed << " " << fmt(f50) << "->" << fmt(f100);
  }
  const double mean = total / static_cast<double>(kSeeds);
  return {passed >= kSeedsNeeded && mean >= kGrowthMeanImprovement,
          std::to_string(passed) + "/" + std::to_string(kSeeds) + " seeds, mean improvement " + fmt(mean) + "; " +
              detail.str()};
}

Outcome end_to_end() {
  const auto r = compare_modes(domain(), {}, trained().models, kCompareSessions, SimulationConfig{}, mix_seed(1, 3));
  const auto& f = r.follows.mean;
  const auto& i = r.ignores.mean;
  const bool ok = f.total_session_time < i.total_session_time && f.total_waiting_time < i.total_waiting_time;
  const double reduction = r.total_time_reduction();
  return {ok, "total " + fmt(f.total_session_time) + " vs " + fmt(i.total_session_time) + " min, waiting " +
                  fmt(f.total_waiting_time) + " vs " + fmt(i.total_waiting_time) + " min; info: reduction " +
                  fmt(100 * reduction) + "% " + (reduction >= kInformationalReduction ? ">=" : "<") + " 10%"};
}

Outcome replay_determinism() {
  testing::TempDir dir("acceptance-replay");
  SimulationConfig config;
  config.operator_mode = OperatorMode::follows_advice;
  config.session_mode = PhaseMode::advise_and_collect;
  config.manual_tagging = false;
  std::size_t sessions = 0, advice = 0, mismatches = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto stories = draw_storyboards(domain(), {}, 3, mix_seed(77, s));
    auto run = simulate_session(domain(), stories, config, trained().models, mix_seed(78, s),
                                "r-" + std::to_string(s));
    const fs::path file = dir / ("r-" + std::to_string(s) + ".jsonl");
    write_log_file(file, run.log, true);
    const auto recorded = read_log_file(file).log;
    SessionConfig sc;
    sc.mode = PhaseMode::advise_and_collect;
    sc.advisor = trained().models.advisor;
    sc.tagger = trained().models.tagger;
    const auto replayed = replay(recorded, sc);
    ++sessions;
    std::vector<std::string> a, b;
    for (const auto& e : recorded.events)
      if (e.kind == EventKind::advice) a.push_back(e.to_line());
    for (const auto& e : replayed.events)
      if (e.kind == EventKind::advice) b.push_back(e.to_line());
    advice += a.size();
    bool same = a == b && replayed.events.size() == recorded.events.size();
    for (std::size_t k = 0; same && k < recorded.events.size(); ++k)
      same = replayed.events[k].to_line() == recorded.events[k].to_line();
    mismatches += !same;
  }
  return {advice > 0 && mismatches == 0, std::to_string(sessions) + " sessions, " + std::to_string(advice) +
                                             " advice events, " + std::to_string(mismatches) + " mismatching logs"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"vector_oracle", 10, vector_oracle},
      {"voting_properties", 30, voting},
      {"gate_soundness", 0, gate_soundness},
      {"ensemble_benefit", 300, ensemble_benefit},
      {"gradient_check", 60, gradients},
      {"tagger_growth", 300, tagger_growth},
      {"end_to_end_trend", 120, end_to_end},
      {"replay_determinism", 0, replay_determinism},
  };
  // Shared training is setup, not part of any criterion's runtime.
  const auto setup_start = std::chrono::steady_clock::now();
  trained();
  std::cout << "setup: trained shared models in "
            << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - setup_start).count()) << " s\n";
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.budget_s) + " s budget";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << fmt(secs) << " s): " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
