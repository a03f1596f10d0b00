#pragma once

// Small advisor + tagger trained once per test binary on simulated expert
// sessions; big enough to produce advice, quick enough for unit tests.

#include "chatassist/simulation.hpp"
#include "support.hpp"

namespace testing {

inline const chatassist::Domain& domain() {
  static const chatassist::Domain d = chatassist::Domain::load(domain_file(), catalog_file());
  return d;
}

struct SmallModels {
  chatassist::ModelSet models;
  std::vector<chatassist::SimulatedSession> sessions;
};

inline const SmallModels& small_models() {
  static const SmallModels m = [] {
    SmallModels out;
    out.sessions = chatassist::generate_expert_sessions(domain(), {}, 30, chatassist::SimulationConfig{}, 1);
    std::vector<chatassist::SessionLog> logs;
    for (const auto& s : out.sessions) logs.push_back(s.log);
    chatassist::TrainingConfig config;
    config.ensemble.ensemble_size = 5;
    out.models = chatassist::train_models(chatassist::export_training_logs(logs), domain().catalog(), config, 2).models;
    return out;
  }();
  return m;
}

}  // namespace testing
