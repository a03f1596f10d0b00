#pragma once

// Rule-based client bots driven by storyboards, plus a scripted operator so
// whole sessions can run without people.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "chatassist/advisor.hpp"
#include "chatassist/vectorcore.hpp"

namespace chatassist {

struct AttributeSpec {
  std::string name;
  std::string label;                  // tag category the attribute maps to
  std::vector<std::string> cues;      // lowercase keywords that mark a question about it
  std::vector<std::string> answers;   // templates with {value}
  std::string vague_answer;
  std::vector<std::string> values;    // pool for generated personas
};

struct ResourceRule {
  std::string item;                          // useful_information item id
  std::map<std::string, std::string> when;   // label -> required value; empty = always
};

struct ObjectiveSpec {
  std::string id;
  std::string description;
  std::vector<std::string> questions;
  std::vector<std::string> requires_labels;
  std::string resolution;  // resolution item id
  std::string marker;      // lowercase phrase whose presence satisfies the objective
  std::vector<ResourceRule> resources;
};

// Everything the simulator knows about one service domain.
class Domain {
 public:
  static Domain from_json(const nlohmann::json& doc, AdviceCatalog catalog);
  static Domain load(const std::filesystem::path& domain_file,
                     const std::filesystem::path& catalog_file);

  const std::string& name() const { return name_; }
  const std::string& inquiry_label() const { return inquiry_label_; }
  const std::vector<AttributeSpec>& attributes() const { return attributes_; }
  const std::vector<ObjectiveSpec>& objectives() const { return objectives_; }
  const AdviceCatalog& catalog() const { return catalog_; }
  const AttributeSpec* attribute(std::string_view name) const;
  const ObjectiveSpec* objective(std::string_view id) const;
  // Topic item asking about a label, if the catalog has one.
  const AdviceItem* ask_item(std::string_view label) const;
  const std::string& phrase(std::string_view key) const;

 private:
  std::string name_;
  std::string inquiry_label_;
  std::vector<AttributeSpec> attributes_;
  std::vector<ObjectiveSpec> objectives_;
  std::map<std::string, std::string, std::less<>> phrases_;
  AdviceCatalog catalog_;
};

// Every attribute label plus the inquiry label, vocabularies from the value
// pools and objective ids. Models what an operator can recognize on reading.
TagSchema domain_schema(const Domain& domain);

enum class DisclosurePolicy { volunteers, answers_if_asked, evasive_once };

std::string_view to_string(DisclosurePolicy policy);

struct Storyboard {
  std::string name;
  std::map<std::string, std::string> persona;
  std::vector<std::string> objectives;
  std::map<std::string, DisclosurePolicy> disclosure;  // missing = answers_if_asked

  DisclosurePolicy policy(const std::string& attribute) const;
  nlohmann::json to_json() const;
};

// Validates against the domain: kParseError, kUnknownAttribute, kUnresolvableObjective.
Storyboard load_storyboard(const nlohmann::json& doc, const Domain& domain);
Storyboard load_storyboard_file(const std::filesystem::path& path, const Domain& domain);
// Every *.storyboard / *.json file in the directory, sorted by file name.
std::vector<Storyboard> load_storyboard_library(const std::filesystem::path& dir,
                                                const Domain& domain);
// Persona over most domain attributes (each kept with p=0.85), 1-3 objectives,
// random policies.
Storyboard random_storyboard(const Domain& domain, std::uint64_t seed);

struct BotConfig {
  double p_ask = 0.6;
  int patience = 40;
};

struct BotState {
  Storyboard story;
  std::set<std::string> asked;        // attributes the operator asked about
  std::set<std::string> evaded;       // evasive_once attributes already dodged
  std::set<std::string> disclosed;
  std::set<std::string> satisfied;    // objective ids
  std::mt19937_64 rng;
  int patience = 40;
  double p_ask = 0.6;
  bool opened = false;
  bool closed = false;

  static BotState start(Storyboard story, std::uint64_t seed, const BotConfig& config = {});
};

struct Disclosure {
  std::string label;
  std::string value;
};

struct ClientMessage {
  std::string text;
  bool closing = false;
  std::vector<Disclosure> disclosures;    // attribute values stated in this message
  std::optional<std::string> inquiry;     // objective raised by this message
};

// One bot turn. Deterministic given the state's rng; never fails.
std::pair<ClientMessage, BotState> bot_respond(const BotState& state,
                                               std::string_view last_operator_message,
                                               const Domain& domain);

enum class OperatorMode { follows_advice, ignores_advice, expert };

std::string_view to_string(OperatorMode mode);

struct TimingModel {
  std::int64_t read_ms = 4000;
  std::int64_t type_ms = 9000;
  std::int64_t advice_ms = 1500;     // reading and taking one advice item
  std::int64_t lookup_ms = 40000;    // unassisted search for an answer or resource
  std::int64_t resource_ms = 5000;   // opening a resource already identified
  std::int64_t tag_ms = 2500;        // one manual tag
  std::int64_t think_min_ms = 8000;  // client reply delay bounds
  std::int64_t think_max_ms = 20000;
  std::int64_t stagger_ms = 15000;   // gap between client arrivals
};

// What the operator currently knows about one client.
struct ClientView {
  InformationVector vector;
  const TagSchema* schema = nullptr;
  AdviceMap advice;  // latest advice event for the client, empty if none
  std::set<std::string> provided;  // resolution items already sent
  std::set<std::string> opened;    // resources already used
  std::map<std::string, int> ask_counts;

  std::optional<std::string> value_of(std::string_view label) const;
  bool known(std::string_view label) const;
};

struct OperatorAction {
  std::vector<std::string> resources;       // opened before the reply
  std::string text;
  std::vector<std::string> acts;            // advice items the message realizes
  std::vector<std::string> accepted_items;  // items taken from the advice box
  std::optional<std::string> asked_label;
  std::int64_t effort_ms = 0;
};

// follows_advice executes pending advice (resource, resolution, question) and
// falls back to the fixed order; ignores_advice walks the fixed attribute order
// and pays lookup time for answers and resources; expert asks only what the
// current inquiry requires, with `noise` probability of a shuffled order.
OperatorAction scripted_operator_step(const ClientView& view, const Domain& domain,
                                      OperatorMode mode, const TimingModel& timing,
                                      std::mt19937_64& rng, double noise = 0.0);

}  // namespace chatassist
