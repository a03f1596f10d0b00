#pragma once

// Tag schema and the per-client information vector.
//
// The vector over n schema labels is X = concat(V, W): V holds one symbol per
// label (a known value, "unknown", or "-" for nothing tagged yet) and W holds
// one presence bit per label. Labels are the n most frequent tag categories,
// sorted alphabetically, and fix the layout of every vector and encoding.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace chatassist {

inline constexpr std::string_view kNoValue = "-";
inline constexpr std::string_view kUnknownValue = "unknown";

enum class TagSource { manual, automatic };

std::string_view to_string(TagSource source);
TagSource tag_source_from_string(std::string_view text);

struct TagEvent {
  std::string session_id;
  std::string category;
  std::string value;
  std::size_t message_index = 0;
  std::int64_t timestamp = 0;  // ms since session start
  TagSource source = TagSource::manual;
};

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);

// Case-insensitive ordering; byte order breaks ties so distinct casings of
// the same word still order deterministically ("Income" < "income").
bool collate_less(std::string_view a, std::string_view b);

class LabelList {
 public:
  LabelList() = default;
  // Throws kBadConfig unless labels are non-empty, unique and collated.
  explicit LabelList(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& operator[](std::size_t i) const { return labels_[i]; }
  std::optional<std::size_t> index_of(std::string_view category) const;

  bool operator==(const LabelList&) const = default;

 private:
  std::vector<std::string> labels_;
};

// The n most frequent categories (ties by collation), returned in collation order.
LabelList build_label_list(std::span<const TagEvent> events, std::size_t n);

class KnownWordTable {
 public:
  // Sentinels and repeated values are ignored; vocabularies only grow.
  void add(std::string_view label, std::string_view value);
  bool contains(std::string_view label, std::string_view value) const;
  std::optional<std::size_t> index_of(std::string_view label, std::string_view value) const;
  const std::vector<std::string>& vocabulary(std::string_view label) const;
  const std::map<std::string, std::vector<std::string>, std::less<>>& entries() const {
    return vocab_;
  }

  static KnownWordTable from_events(std::span<const TagEvent> events, const LabelList& labels);

  bool operator==(const KnownWordTable&) const = default;

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> vocab_;
};

// Versioned tag schema: {version, n, labels[], vocab{label:[values]}}.
struct TagSchema {
  int version = 1;
  LabelList labels;
  KnownWordTable vocab;

  std::size_t size() const { return labels.size(); }
  nlohmann::json to_json() const;
  static TagSchema from_json(const nlohmann::json& doc);
  std::string hash() const;

  bool operator==(const TagSchema&) const = default;
};

TagSchema build_schema(std::span<const TagEvent> events, std::size_t n);

struct InformationVector {
  std::vector<std::string> values;    // V
  std::vector<std::uint8_t> present;  // W
  std::size_t tag_count = 0;          // t

  static InformationVector empty(std::size_t n);

  std::size_t size() const { return values.size(); }
  // |V| == |W| and W[i] == 1 exactly when V[i] != "-".
  bool consistent() const;
  // consistent() plus every V[i] drawn from {"-", "unknown"} ∪ vocab(label i).
  bool well_formed(const TagSchema& schema) const;
  // X as 2n symbols: V followed by "0"/"1" for W.
  std::vector<std::string> concat() const;
  bool same_symbols(const InformationVector& other) const {
    return values == other.values && present == other.present;
  }

  bool operator==(const InformationVector&) const = default;
};

InformationVector apply_tag(const InformationVector& x, const TagEvent& event,
                            const TagSchema& schema);

// Element 0 is the empty vector; one more element per in-schema tag.
std::vector<InformationVector> snapshot_stream(std::span<const TagEvent> tags,
                                               const TagSchema& schema);

using EncodedVector = std::vector<double>;

// n + Σ(2 + |vocab(i)|).
std::size_t encoded_dim(const TagSchema& schema);
// Per label a one-hot block over ["-", "unknown", vocab...], then the n W bits.
EncodedVector encode(const InformationVector& x, const TagSchema& schema);
// Inverse of encode for V and W; tag_count is not encoded and comes back as 0.
InformationVector decode(std::span<const double> encoded, const TagSchema& schema);

// One snapshot export record: {t, V[], W[]}.
nlohmann::json snapshot_record(const InformationVector& x);

}  // namespace chatassist
