#pragma once

// Two-stage message tagger: a per-label detector decides which categories a
// message carries, then a per-category value classifier picks the value (a
// known word or "unknown"). Text goes through a TextEncoder; the shipped one
// hashes lowercase tokens into a fixed-width sparse vector.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "chatassist/vectorcore.hpp"

namespace chatassist {

struct SparseFeatures {
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by index, unique
};

// Lowercase, punctuation stripped (apostrophes dropped inside words), split on
// whitespace.
std::vector<std::string> tokenize(std::string_view text);

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual SparseFeatures encode(std::string_view text) const = 0;
  virtual nlohmann::json config() const = 0;
};

// Token counts hashed into `dim` buckets, scaled by 1/sqrt(token count).
class HashedBagEncoder final : public TextEncoder {
 public:
  explicit HashedBagEncoder(std::size_t dim = 2048);
  std::size_t dim() const override { return dim_; }
  SparseFeatures encode(std::string_view text) const override;
  nlohmann::json config() const override;

 private:
  std::size_t dim_;
};

std::shared_ptr<const TextEncoder> make_encoder(const nlohmann::json& config);

struct TaggerHyper {
  std::size_t dim = 2048;
  std::size_t epochs = 20;
  double learning_rate = 0.5;
  double category_threshold = 0.5;
  // Train stage 2 on copies with the value tokens removed, labelled "unknown".
  bool mask_augment = true;
  std::uint64_t seed = 0;
};

struct TaggedMessage {
  std::string text;
  std::vector<TagEvent> gold;
};

struct TagContext {
  std::string session_id;
  std::size_t message_index = 0;
  std::int64_t timestamp = 0;
  std::string schema_hash;  // checked against the tagger when non-empty
};

class Tagger {
 public:
  const TagSchema& schema() const { return schema_; }
  const TextEncoder& encoder() const { return *encoder_; }
  const std::vector<double>& thresholds() const { return thresholds_; }
  void set_threshold(std::size_t label, double threshold) { thresholds_.at(label) = threshold; }

  // Stage 1: independent presence probability per schema label.
  std::vector<double> category_probabilities(std::string_view text) const;
  // Stage 2 for one label: the argmax value, "unknown" included.
  std::string classify_value(std::size_t label, std::string_view text) const;

  std::vector<TagEvent> auto_tag(std::string_view message, const TagContext& context) const;

  nlohmann::json to_json() const;
  static Tagger from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static Tagger load(const std::filesystem::path& path);

 private:
  friend Tagger train_tagger(std::span<const TaggedMessage>, const TagSchema&, const TaggerHyper&);

  struct BinaryModel {
    std::vector<double> weights;
    double bias = 0.0;
  };
  struct ValueModel {
    std::vector<std::string> classes;  // "unknown" first, then vocab order
    std::vector<std::vector<double>> weights;
    std::vector<double> bias;
  };

  std::vector<double> value_scores(const ValueModel& model, const SparseFeatures& x) const;

  TagSchema schema_;
  std::shared_ptr<const TextEncoder> encoder_;
  std::vector<double> thresholds_;
  std::vector<BinaryModel> detectors_;
  std::vector<ValueModel> values_;
};

Tagger train_tagger(std::span<const TaggedMessage> corpus, const TagSchema& schema,
                    const TaggerHyper& hyper = {});

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

using TagPair = std::pair<std::string, std::string>;  // (category, value)

// Micro-averaged over (category, value) pairs per message. Empty prediction
// sets give precision 0 by convention.
F1Score micro_f1(std::span<const std::vector<TagPair>> predicted,
                 std::span<const std::vector<TagPair>> gold);

// Gold values outside the schema vocabulary count as "unknown"; gold
// categories outside the schema are ignored.
F1Score f1_eval(const Tagger& tagger, std::span<const TaggedMessage> corpus);

nlohmann::json tagged_message_to_json(const TaggedMessage& message);
TaggedMessage tagged_message_from_json(const nlohmann::json& doc);

}  // namespace chatassist
