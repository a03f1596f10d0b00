#pragma once

// Learning-from-demonstration advisor.
//
// Each information-vector snapshot is paired with the operator's next action of
// each advice type; an ensemble of randomly shaped networks per type learns
// that mapping, and a thresholded two-option vote turns member predictions into
// zero, one or two recommended advice sets.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "chatassist/eventlog.hpp"
#include "chatassist/nnet.hpp"
#include "chatassist/vectorcore.hpp"

namespace chatassist {

enum class AdviceType { topic_acquisition, resolution, useful_information };

inline constexpr std::array<AdviceType, 3> kAdviceTypes = {
    AdviceType::topic_acquisition, AdviceType::resolution, AdviceType::useful_information};

std::string_view to_string(AdviceType type);
AdviceType advice_type_from_string(std::string_view text);
inline std::size_t type_index(AdviceType type) { return static_cast<std::size_t>(type); }

struct AdviceItem {
  std::string id;
  AdviceType type = AdviceType::topic_acquisition;
  std::string display_text;
  std::optional<std::string> action_ref;  // label to ask about, resource id, calculator id
  std::string template_text;              // operator message realizing the item, if any
  std::vector<std::string> cues;          // lowercase phrases that identify the item in text

  nlohmann::json to_json() const;
  static AdviceItem from_json(const nlohmann::json& doc);
};

class AdviceCatalog {
 public:
  AdviceCatalog() = default;
  explicit AdviceCatalog(std::vector<AdviceItem> items);

  const std::vector<AdviceItem>& items() const { return items_; }
  const AdviceItem* find(std::string_view id) const;
  const AdviceItem& at(std::string_view id) const;  // throws kUnknownActionRef
  // Every topic_acquisition item must reference a schema label.
  void check_against(const TagSchema& schema) const;
  // Items whose cues occur in the text; topic items additionally need a '?'.
  std::vector<std::string> infer_acts(std::string_view text) const;

  nlohmann::json to_json() const;
  static AdviceCatalog from_json(const nlohmann::json& doc);
  static AdviceCatalog load(const std::filesystem::path& path);
  std::string hash() const;

 private:
  std::vector<AdviceItem> items_;
};

// A set of advice item ids, sorted and unique. Empty means ∅ (stay silent).
using AdviceSet = std::vector<std::string>;
AdviceSet make_advice_set(std::vector<std::string> ids);

// Closed class universe for one advice type; class 0 is always ∅.
class AdviceClassCatalog {
 public:
  AdviceClassCatalog();

  std::size_t size() const { return classes_.size(); }
  const AdviceSet& operator[](std::size_t i) const { return classes_.at(i); }
  std::size_t intern(const AdviceSet& set);
  std::optional<std::size_t> find(const AdviceSet& set) const;
  std::string label(std::size_t i) const;

  nlohmann::json to_json() const;
  static AdviceClassCatalog from_json(const nlohmann::json& doc);
  std::string hash() const;

  bool operator==(const AdviceClassCatalog&) const = default;

 private:
  std::vector<AdviceSet> classes_;
};

// D_j = (X_j, A_j) for the three advice types, in symbolic form.
struct Demonstration {
  std::string session_id;
  std::string client_id;
  InformationVector state;
  std::array<AdviceSet, 3> targets;

  nlohmann::json to_json() const;
  static Demonstration from_json(const nlohmann::json& doc);
};

struct ExtractOptions {
  // Keep only manual tags and auto tags later confirmed by an advice acceptance.
  bool quality_filter = false;
};

// One demonstration per snapshot per client. Targets are the operator's next
// action of each type after the snapshot: questions and resolutions come from
// operator message acts (explicit payload "acts" or cue inference), useful
// information from resource_use events; no later action gives ∅.
std::vector<Demonstration> extract_demonstrations(const SessionLog& log, const TagSchema& schema,
                                                  const AdviceCatalog& catalog,
                                                  const ExtractOptions& options = {});

struct DemonstrationDataset {
  LabeledDataset data;
  std::size_t dropped = 0;  // rows whose target set is outside a frozen catalog
};

// Encodes demonstrations for one advice type. With grow=true unseen target sets
// are interned into `classes`; otherwise such rows are dropped and counted.
DemonstrationDataset build_dataset(std::span<const Demonstration> demos, AdviceType type,
                                   const TagSchema& schema, AdviceClassCatalog& classes,
                                   bool grow);

struct VoteThresholds {
  double first_option = 0.40;
  double secondary_option = 0.25;
};

struct EnsembleConfig {
  std::size_t ensemble_size = 25;
  std::optional<double> p_threshold;  // default: majority-class accuracy + 0.05
  double p_threshold_margin = 0.05;
  VoteThresholds thresholds;
  ArchConfig arch;
  TrainingHyper hyper;
  double test_fraction = 0.2;
  double random_subset_fraction = 0.8;
  std::size_t min_rows_per_member = 10;
  std::size_t max_attempts = 0;  // 0 means 10 * ensemble_size
};

struct EnsembleMember {
  Network network;
  double heldout_accuracy = 0.0;
  std::uint64_t candidate = 0;
  bool balanced_subset = false;
};

struct Ensemble {
  AdviceType type = AdviceType::topic_acquisition;
  AdviceClassCatalog classes;
  std::vector<EnsembleMember> members;
  VoteThresholds thresholds;
  double p_threshold = 0.0;
  std::size_t ensemble_size = 0;
  std::size_t attempts = 0;
  std::string schema_hash;
  std::string train_digest;
  LabeledDataset test_data;  // held-out gate data, archived for re-verification
  std::string test_digest;

  std::size_t input_dim() const;
  nlohmann::json to_json() const;
  static Ensemble from_json(const nlohmann::json& doc);
};

// Gated ensemble construction: alternate uniform and class-balanced subsets,
// draw a random architecture, train, keep iff top-1 held-out accuracy exceeds
// the gate. Candidate i is keyed on (seed, i), so results do not depend on
// evaluation order.
Ensemble train_ensemble(const LabeledDataset& data, const AdviceClassCatalog& classes,
                        const EnsembleConfig& config, std::uint64_t seed);

double majority_baseline(const LabeledDataset& train, const LabeledDataset& test,
                         std::size_t k = 1);

struct RecommendedOption {
  std::size_t class_index = 0;
  double rank = 0.0;  // vote share
  std::vector<std::string> item_ids;

  bool operator==(const RecommendedOption&) const = default;
};

struct Recommendation {
  std::vector<RecommendedOption> items;

  bool silent() const { return items.empty(); }
  nlohmann::json to_json() const;
  static Recommendation from_json(const nlohmann::json& doc);

  bool operator==(const Recommendation&) const = default;
};

// The two most voted classes (ties to the lower index) enter when their vote
// share exceeds the first/secondary threshold; class 0 (∅) never becomes an
// item. `classes` fills item ids when given.
Recommendation vote_ballots(std::span<const std::size_t> ballots, std::size_t num_classes,
                            const VoteThresholds& thresholds,
                            const AdviceClassCatalog* classes = nullptr);
std::vector<std::size_t> member_ballots(const Ensemble& ensemble, std::span<const double> x);
Recommendation vote(const Ensemble& ensemble, std::span<const double> x);

// Rows ordered by vote count, then mean member probability, then class index.
double evaluate_top_k(const Ensemble& ensemble, const LabeledDataset& test, std::size_t k = 2);
// Top-k accuracy of the strongest single member on `test`.
double best_member_top_k(const Ensemble& ensemble, const LabeledDataset& test, std::size_t k = 2);

struct AdvisorBundle {
  TagSchema schema;
  AdviceCatalog catalog;
  std::map<AdviceType, Ensemble> ensembles;

  nlohmann::json to_json() const;
  static AdvisorBundle from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static AdvisorBundle load(const std::filesystem::path& path);
};

using AdviceMap = std::map<AdviceType, Recommendation>;

// Encodes x once and votes per type. Topic items asking about labels already
// present in x are dropped; types without an ensemble stay silent.
AdviceMap advise(const InformationVector& x, const AdvisorBundle& bundle);

nlohmann::json advice_map_to_json(const AdviceMap& advice);
AdviceMap advice_map_from_json(const nlohmann::json& doc);

}  // namespace chatassist
