#include "chatassist/vectorcore.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using nlohmann::json;

std::string_view to_string(TagSource source) {
  return source == TagSource::manual ? "manual" : "auto";
}

TagSource tag_source_from_string(std::string_view text) {
  if (text == "manual") return TagSource::manual;
  if (text == "auto") return TagSource::automatic;
  throw Error(ErrorCode::kParseError, "unknown tag source '" + std::string(text) + "'");
}

std::string trim(std::string_view text) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool collate_less(std::string_view a, std::string_view b) {
  const std::string la = to_lower(a);
  const std::string lb = to_lower(b);
  if (la != lb) return la < lb;
  return a < b;
}

LabelList::LabelList(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw Error(ErrorCode::kBadConfig, "label list must not be empty");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (trim(labels_[i]).empty() || trim(labels_[i]) != labels_[i]) {
      throw Error(ErrorCode::kBadConfig, "label '" + labels_[i] + "' is blank or untrimmed");
    }
    if (i > 0 && !collate_less(labels_[i - 1], labels_[i])) {
      throw Error(ErrorCode::kBadConfig,
                  "labels not unique and sorted at '" + labels_[i] + "'");
    }
  }
}

std::optional<std::size_t> LabelList::index_of(std::string_view category) const {
  const std::string key = trim(category);
  auto it = std::lower_bound(labels_.begin(), labels_.end(), key,
                             [](const std::string& a, const std::string& b) {
                               return collate_less(a, b);
                             });
  if (it != labels_.end() && *it == key) return static_cast<std::size_t>(it - labels_.begin());
  return std::nullopt;
}

LabelList build_label_list(std::span<const TagEvent> events, std::size_t n) {
  if (events.empty()) throw Error(ErrorCode::kEmptyCorpus, "no tag events");
  if (n == 0) throw Error(ErrorCode::kBadConfig, "n must be positive");

  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& e : events) {
    std::string category = trim(e.category);
    if (category.empty()) continue;
    ++counts[category];
  }
  if (counts.size() < n) {
    throw Error(ErrorCode::kNotEnoughCategories,
                std::to_string(counts.size()) + " distinct categories, n=" + std::to_string(n));
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return collate_less(a.first, b.first);
  });
  ranked.resize(n);

  std::vector<std::string> labels;
  labels.reserve(n);
  for (auto& [category, count] : ranked) labels.push_back(std::move(category));
  std::sort(labels.begin(), labels.end(), collate_less);
  return LabelList(std::move(labels));
}

void KnownWordTable::add(std::string_view label, std::string_view value) {
  std::string v = trim(value);
  if (v.empty() || v == kNoValue || v == kUnknownValue) return;
  auto& words = vocab_[trim(label)];
  if (std::find(words.begin(), words.end(), v) == words.end()) words.push_back(std::move(v));
}

bool KnownWordTable::contains(std::string_view label, std::string_view value) const {
  return index_of(label, value).has_value();
}

std::optional<std::size_t> KnownWordTable::index_of(std::string_view label,
                                                    std::string_view value) const {
  auto it = vocab_.find(label);
  if (it == vocab_.end()) return std::nullopt;
  const auto& words = it->second;
  auto pos = std::find(words.begin(), words.end(), value);
  if (pos == words.end()) return std::nullopt;
  return static_cast<std::size_t>(pos - words.begin());
}

const std::vector<std::string>& KnownWordTable::vocabulary(std::string_view label) const {
  static const std::vector<std::string> kEmpty;
  auto it = vocab_.find(label);
  return it == vocab_.end() ? kEmpty : it->second;
}

KnownWordTable KnownWordTable::from_events(std::span<const TagEvent> events,
                                           const LabelList& labels) {
  KnownWordTable table;
  for (const auto& e : events) {
    if (auto i = labels.index_of(e.category)) table.add(labels[*i], e.value);
  }
  return table;
}

json TagSchema::to_json() const {
  json vocab_doc = json::object();
  for (const auto& label : labels.labels()) vocab_doc[label] = vocab.vocabulary(label);
  return json{{"version", version},
              {"n", labels.size()},
              {"labels", labels.labels()},
              {"vocab", vocab_doc}};
}

TagSchema TagSchema::from_json(const json& doc) {
  try {
    TagSchema schema;
    schema.version = doc.at("version").get<int>();
    if (schema.version != 1) {
      throw Error(ErrorCode::kParseError,
                  "unsupported schema version " + std::to_string(schema.version));
    }
    schema.labels = LabelList(doc.at("labels").get<std::vector<std::string>>());
    if (doc.at("n").get<std::size_t>() != schema.labels.size()) {
      throw Error(ErrorCode::kParseError, "schema n does not match label count");
    }
    for (const auto& [label, values] : doc.at("vocab").items()) {
      if (!schema.labels.index_of(label)) {
        throw Error(ErrorCode::kParseError, "vocab for unknown label '" + label + "'");
      }
      for (const auto& v : values) {
        const auto value = v.get<std::string>();
        if (value == kNoValue || value == kUnknownValue) {
          throw Error(ErrorCode::kParseError, "vocab holds reserved sentinel");
        }
        schema.vocab.add(label, value);
      }
    }
    return schema;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("tag schema: ") + e.what());
  }
}

std::string TagSchema::hash() const { return digest(to_json().dump()); }

TagSchema build_schema(std::span<const TagEvent> events, std::size_t n) {
  TagSchema schema;
  schema.labels = build_label_list(events, n);
  schema.vocab = KnownWordTable::from_events(events, schema.labels);
  return schema;
}

InformationVector InformationVector::empty(std::size_t n) {
  InformationVector x;
  x.values.assign(n, std::string(kNoValue));
  x.present.assign(n, 0);
  return x;
}

bool InformationVector::consistent() const {
  if (values.size() != present.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (present[i] > 1) return false;
    if ((present[i] == 1) != (values[i] != kNoValue)) return false;
  }
  return true;
}

bool InformationVector::well_formed(const TagSchema& schema) const {
  if (size() != schema.size() || !consistent()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& v = values[i];
    if (v != kNoValue && v != kUnknownValue && !schema.vocab.contains(schema.labels[i], v)) {
      return false;
    }
  }
  return true;
}

std::vector<std::string> InformationVector::concat() const {
  std::vector<std::string> x(values);
  for (auto bit : present) x.push_back(bit ? "1" : "0");
  return x;
}

InformationVector apply_tag(const InformationVector& x, const TagEvent& event,
                            const TagSchema& schema) {
  if (x.size() != schema.size() || !x.consistent()) {
    throw Error(ErrorCode::kMalformedVector, "vector does not match schema of size " +
                                                 std::to_string(schema.size()));
  }
  auto index = schema.labels.index_of(event.category);
  if (!index) return x;

  InformationVector out = x;
  const std::string value = trim(event.value);
  const std::string& label = schema.labels[*index];
  out.values[*index] =
      schema.vocab.contains(label, value) ? value : std::string(kUnknownValue);
  out.present[*index] = 1;
  ++out.tag_count;
  return out;
}

std::vector<InformationVector> snapshot_stream(std::span<const TagEvent> tags,
                                               const TagSchema& schema) {
  std::vector<InformationVector> snapshots;
  snapshots.push_back(InformationVector::empty(schema.size()));
  for (const auto& tag : tags) {
    if (!schema.labels.index_of(tag.category)) continue;
    snapshots.push_back(apply_tag(snapshots.back(), tag, schema));
  }
  return snapshots;
}

std::size_t encoded_dim(const TagSchema& schema) {
  std::size_t dim = schema.size();
  for (const auto& label : schema.labels.labels()) dim += 2 + schema.vocab.vocabulary(label).size();
  return dim;
}

EncodedVector encode(const InformationVector& x, const TagSchema& schema) {
  if (!x.well_formed(schema)) {
    throw Error(ErrorCode::kMalformedVector, "cannot encode a vector outside the schema");
  }
  EncodedVector out(encoded_dim(schema), 0.0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& label = schema.labels[i];
    const auto& v = x.values[i];
    std::size_t slot = 0;
    if (v == kUnknownValue) {
      slot = 1;
    } else if (v != kNoValue) {
      slot = 2 + *schema.vocab.index_of(label, v);
    }
    out[offset + slot] = 1.0;
    offset += 2 + schema.vocab.vocabulary(label).size();
  }
  for (std::size_t i = 0; i < schema.size(); ++i) out[offset + i] = x.present[i];
  return out;
}

InformationVector decode(std::span<const double> encoded, const TagSchema& schema) {
  if (encoded.size() != encoded_dim(schema)) {
    throw Error(ErrorCode::kMalformedVector, "encoded length does not match schema");
  }
  InformationVector x = InformationVector::empty(schema.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& words = schema.vocab.vocabulary(schema.labels[i]);
    const std::size_t width = 2 + words.size();
    std::optional<std::size_t> hot;
    for (std::size_t k = 0; k < width; ++k) {
      const double cell = encoded[offset + k];
      if (cell == 1.0) {
        if (hot) throw Error(ErrorCode::kMalformedVector, "block has more than one hot cell");
        hot = k;
      } else if (cell != 0.0) {
        throw Error(ErrorCode::kMalformedVector, "block is not one-hot");
      }
    }
    if (!hot) throw Error(ErrorCode::kMalformedVector, "block has no hot cell");
    if (*hot == 1) x.values[i] = std::string(kUnknownValue);
    if (*hot >= 2) x.values[i] = words[*hot - 2];
    offset += width;
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const double bit = encoded[offset + i];
    if (bit != 0.0 && bit != 1.0) throw Error(ErrorCode::kMalformedVector, "W bit not binary");
    x.present[i] = bit == 1.0 ? 1 : 0;
  }
  if (!x.consistent()) throw Error(ErrorCode::kMalformedVector, "W bits disagree with V");
  return x;
}

json snapshot_record(const InformationVector& x) {
  std::vector<int> w(x.present.begin(), x.present.end());
  return json{{"t", x.tag_count}, {"V", x.values}, {"W", w}};
}

}  // namespace chatassist
