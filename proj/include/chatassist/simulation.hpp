#pragma once

// Discrete-event sessions between the scripted operator and storyboard bots,
// and the life-cycle built on them: expert sessions in collect mode, training
// on their logs, then assisted vs unassisted sessions with the trained models.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "chatassist/advisor.hpp"
#include "chatassist/autotagger.hpp"
#include "chatassist/clientsim.hpp"
#include "chatassist/orchestrator.hpp"

namespace chatassist {

struct SimulationConfig {
  OperatorMode operator_mode = OperatorMode::expert;
  PhaseMode session_mode = PhaseMode::collect;
  std::size_t clients = 3;
  TimingModel timing;
  BotConfig bot;
  double expert_noise = 0.05;
  bool manual_tagging = true;  // the operator tags what it reads
  std::size_t max_steps = 100000;
};

struct ModelSet {
  std::shared_ptr<const AdvisorBundle> advisor;
  std::shared_ptr<const Tagger> tagger;
};

struct SimulatedSession {
  SessionLog log;
  TimeMetrics metrics;
  std::vector<Storyboard> storyboards;
  nlohmann::json meta;
};

// One client per storyboard. Byte-identical output for equal inputs.
SimulatedSession simulate_session(const Domain& domain, const std::vector<Storyboard>& stories,
                                  const SimulationConfig& config, const ModelSet& models,
                                  std::uint64_t seed, const std::string& session_id);

// Storyboards for one session: drawn from the library, or generated when it is empty.
std::vector<Storyboard> draw_storyboards(const Domain& domain, const std::vector<Storyboard>& library,
                                         std::size_t clients, std::uint64_t seed);

// Expert sessions in collect mode with manual tags.
std::vector<SimulatedSession> generate_expert_sessions(const Domain& domain,
                                                       const std::vector<Storyboard>& library,
                                                       std::size_t sessions, const SimulationConfig& config,
                                                       std::uint64_t seed);

struct TrainingConfig {
  std::size_t labels = 0;  // 0: every category seen
  bool quality_filter = false;
  EnsembleConfig ensemble;
  TaggerHyper tagger;
};

struct TrainedModels {
  ModelSet models;
  nlohmann::json report;
};

// Schema from the corpora's tags: the n most frequent categories, or all of them
// when labels is 0. Advisor and tagger trained on the same corpora share it.
TagSchema training_schema(const TrainingCorpora& corpora, std::size_t labels);
// One ensemble per advice type.
std::pair<std::shared_ptr<const AdvisorBundle>, nlohmann::json> train_advisor_bundle(
    const TrainingCorpora& corpora, const AdviceCatalog& catalog, const TrainingConfig& config,
    std::uint64_t seed);
std::pair<std::shared_ptr<const Tagger>, nlohmann::json> train_tagger_model(const TrainingCorpora& corpora,
                                                                   const TagSchema& schema,
                                                                   const TaggerHyper& hyper,
                                                                   std::uint64_t seed);
// Both of the above.
TrainedModels train_models(const TrainingCorpora& corpora, const AdviceCatalog& catalog,
                           const TrainingConfig& config, std::uint64_t seed);

struct ModeSummary {
  OperatorMode mode = OperatorMode::follows_advice;
  std::vector<TimeMetrics> sessions;
  TimeMetrics mean;
};

struct ComparisonReport {
  ModeSummary follows;
  ModeSummary ignores;
  std::uint64_t seed = 0;

  double total_time_reduction() const;    // relative, ignores -> follows
  double waiting_time_reduction() const;
  nlohmann::json to_json() const;
};

// Both operator modes over the same seeded storyboards, advise_and_collect.
ComparisonReport compare_modes(const Domain& domain, const std::vector<Storyboard>& library,
                               const ModelSet& models, std::size_t sessions,
                               const SimulationConfig& config, std::uint64_t seed);

TimeMetrics mean_metrics(const std::vector<TimeMetrics>& metrics);

}  // namespace chatassist
