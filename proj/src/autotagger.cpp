#include "chatassist/autotagger.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '\'') {
      continue;
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

HashedBagEncoder::HashedBagEncoder(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw Error(ErrorCode::kInvalidDims, "encoder dimension must be positive");
}

SparseFeatures HashedBagEncoder::encode(std::string_view text) const {
  const auto tokens = tokenize(text);
  std::map<std::uint32_t, double> buckets;
  for (const auto& token : tokens) {
    ++buckets[static_cast<std::uint32_t>(fnv1a64(token) % dim_)];
  }
  SparseFeatures out;
  if (tokens.empty()) return out;
  const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.size()));
  for (const auto& [index, count] : buckets) out.entries.emplace_back(index, count * scale);
  return out;
}

json HashedBagEncoder::config() const { return json{{"kind", "hashed_bag"}, {"dim", dim_}}; }

std::shared_ptr<const TextEncoder> make_encoder(const json& config) {
  const auto kind = config.at("kind").get<std::string>();
  if (kind == "hashed_bag") return std::make_shared<HashedBagEncoder>(config.at("dim").get<std::size_t>());
  throw Error(ErrorCode::kParseError, "unknown encoder kind '" + kind + "'");
}

namespace {

double dot(const std::vector<double>& w, const SparseFeatures& x) {
  double s = 0.0;
  for (const auto& [i, v] : x.entries) s += w[i] * v;
  return s;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::vector<double> scores) {
  const double peak = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& s : scores) total += (s = std::exp(s - peak));
  for (double& s : scores) s /= total;
  return scores;
}

std::string remove_value_tokens(std::string_view text, std::string_view value) {
  const auto value_tokens = tokenize(value);
  auto tokens = tokenize(text);
  if (value_tokens.empty() || tokens.size() < value_tokens.size()) return {};
  bool removed = false;
  for (std::size_t i = 0; i + value_tokens.size() <= tokens.size();) {
    if (std::equal(value_tokens.begin(), value_tokens.end(),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
      tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + value_tokens.size()));
      removed = true;
    } else {
      ++i;
    }
  }
  if (!removed) return {};
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out.empty() ? std::string(" ") : out;
}

json sparse_weights(const std::vector<double>& w) {
  std::vector<std::size_t> idx;
  std::vector<double> val;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] != 0.0) {
      idx.push_back(i);
      val.push_back(w[i]);
    }
  }
  return json{{"idx", idx}, {"val", val}};
}

std::vector<double> dense_weights(const json& doc, std::size_t dim) {
  std::vector<double> w(dim, 0.0);
  const auto idx = doc.at("idx").get<std::vector<std::size_t>>();
  const auto val = doc.at("val").get<std::vector<double>>();
  if (idx.size() != val.size()) throw Error(ErrorCode::kParseError, "sparse weight arrays differ");
  for (std::size_t k = 0; k < idx.size(); ++k) w.at(idx[k]) = val[k];
  return w;
}

}  // namespace

std::vector<double> Tagger::category_probabilities(std::string_view text) const {
  const SparseFeatures x = encoder_->encode(text);
  std::vector<double> probs;
  probs.reserve(detectors_.size());
  for (const auto& d : detectors_) probs.push_back(sigmoid(dot(d.weights, x) + d.bias));
  return probs;
}

std::vector<double> Tagger::value_scores(const ValueModel& model, const SparseFeatures& x) const {
  std::vector<double> scores(model.classes.size());
  for (std::size_t c = 0; c < scores.size(); ++c) scores[c] = dot(model.weights[c], x) + model.bias[c];
  return scores;
}

std::string Tagger::classify_value(std::size_t label, std::string_view text) const {
  const auto& model = values_.at(label);
  const auto scores = value_scores(model, encoder_->encode(text));
  const auto best = static_cast<std::size_t>(
      std::max_element(scores.begin(), scores.end()) - scores.begin());
  return model.classes[best];
}

std::vector<TagEvent> Tagger::auto_tag(std::string_view message, const TagContext& context) const {
  if (!context.schema_hash.empty() && context.schema_hash != schema_.hash()) {
    throw Error(ErrorCode::kSchemaMismatch, "tagger trained for schema " + schema_.hash());
  }
  const SparseFeatures x = encoder_->encode(message);
  std::vector<TagEvent> tags;
  for (std::size_t i = 0; i < detectors_.size(); ++i) {
    const double p = sigmoid(dot(detectors_[i].weights, x) + detectors_[i].bias);
    if (!(p > thresholds_[i])) continue;
    const auto scores = value_scores(values_[i], x);
    const auto best = static_cast<std::size_t>(
        std::max_element(scores.begin(), scores.end()) - scores.begin());
    TagEvent tag;
    tag.session_id = context.session_id;
    tag.category = schema_.labels[i];
    tag.value = values_[i].classes[best];
    tag.message_index = context.message_index;
    tag.timestamp = context.timestamp;
    tag.source = TagSource::automatic;
    tags.push_back(std::move(tag));
  }
  return tags;
}

Tagger train_tagger(std::span<const TaggedMessage> corpus, const TagSchema& schema,
                    const TaggerHyper& hyper) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "tagger corpus is empty");
  const std::size_t n = schema.size();
  if (n == 0) throw Error(ErrorCode::kBadConfig, "schema has no labels");

  Tagger tagger;
  tagger.schema_ = schema;
  tagger.encoder_ = std::make_shared<HashedBagEncoder>(hyper.dim);
  tagger.thresholds_.assign(n, hyper.category_threshold);
  const std::size_t dim = tagger.encoder_->dim();

  std::vector<SparseFeatures> features;
  std::vector<std::vector<std::uint8_t>> presence(corpus.size(), std::vector<std::uint8_t>(n, 0));
  // Stage-2 examples per label: (features, class index).
  std::vector<std::vector<std::pair<SparseFeatures, std::size_t>>> value_rows(n);

  for (std::size_t i = 0; i < n; ++i) {
    Tagger::ValueModel model;
    model.classes.push_back(std::string(kUnknownValue));
    for (const auto& v : schema.vocab.vocabulary(schema.labels[i])) model.classes.push_back(v);
    model.weights.assign(model.classes.size(), std::vector<double>(dim, 0.0));
    model.bias.assign(model.classes.size(), 0.0);
    tagger.values_.push_back(std::move(model));
  }

  for (std::size_t m = 0; m < corpus.size(); ++m) {
    const auto& message = corpus[m];
    features.push_back(tagger.encoder_->encode(message.text));
    for (const auto& tag : message.gold) {
      auto label = schema.labels.index_of(tag.category);
      if (!label) {
        throw Error(ErrorCode::kCategoryOutsideSchema, "category '" + tag.category + "'");
      }
      presence[m][*label] = 1;
      const auto& classes = tagger.values_[*label].classes;
      const std::string value = trim(tag.value);
      auto pos = std::find(classes.begin() + 1, classes.end(), value);
      const std::size_t cls = pos == classes.end() ? 0 : static_cast<std::size_t>(pos - classes.begin());
      value_rows[*label].emplace_back(features.back(), cls);
      if (hyper.mask_augment && cls != 0) {
        const std::string masked = remove_value_tokens(message.text, value);
        if (!masked.empty()) value_rows[*label].emplace_back(tagger.encoder_->encode(masked), 0);
      }
    }
  }

  std::mt19937_64 rng(mix_seed(hyper.seed, 0x7a9));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  tagger.detectors_.assign(n, Tagger::BinaryModel{std::vector<double>(dim, 0.0), 0.0});
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto m : order) {
      const auto& x = features[m];
      for (std::size_t i = 0; i < n; ++i) {
        auto& d = tagger.detectors_[i];
        const double g = sigmoid(dot(d.weights, x) + d.bias) - presence[m][i];
        for (const auto& [j, v] : x.entries) d.weights[j] -= hyper.learning_rate * g * v;
        d.bias -= hyper.learning_rate * g;
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto& model = tagger.values_[i];
    auto& rows = value_rows[i];
    if (rows.empty() || model.classes.size() < 2) continue;
    std::vector<std::size_t> row_order(rows.size());
    std::iota(row_order.begin(), row_order.end(), 0);
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
      std::shuffle(row_order.begin(), row_order.end(), rng);
      for (auto r : row_order) {
        const auto& [x, cls] = rows[r];
        const auto probs = softmax(tagger.value_scores(model, x));
        for (std::size_t c = 0; c < probs.size(); ++c) {
          const double g = probs[c] - (c == cls ? 1.0 : 0.0);
          for (const auto& [j, v] : x.entries) model.weights[c][j] -= hyper.learning_rate * g * v;
          model.bias[c] -= hyper.learning_rate * g;
        }
      }
    }
  }
  return tagger;
}

json Tagger::to_json() const {
  json detectors = json::array();
  for (std::size_t i = 0; i < detectors_.size(); ++i) {
    detectors.push_back({{"label", schema_.labels[i]},
                         {"threshold", thresholds_[i]},
                         {"bias", detectors_[i].bias},
                         {"weights", sparse_weights(detectors_[i].weights)}});
  }
  json values = json::array();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    json weights = json::array();
    for (const auto& w : values_[i].weights) weights.push_back(sparse_weights(w));
    values.push_back({{"label", schema_.labels[i]},
                      {"classes", values_[i].classes},
                      {"bias", values_[i].bias},
                      {"weights", weights}});
  }
  return json{{"version", 1},
              {"encoder", encoder_->config()},
              {"schema_hash", schema_.hash()},
              {"schema", schema_.to_json()},
              {"detectors", detectors},
              {"values", values}};
}

Tagger Tagger::from_json(const json& doc) {
  try {
    if (doc.at("version").get<int>() != 1) throw Error(ErrorCode::kParseError, "tagger version");
    Tagger t;
    t.schema_ = TagSchema::from_json(doc.at("schema"));
    if (doc.at("schema_hash").get<std::string>() != t.schema_.hash()) {
      throw Error(ErrorCode::kSchemaMismatch, "tagger schema hash mismatch");
    }
    t.encoder_ = make_encoder(doc.at("encoder"));
    const std::size_t dim = t.encoder_->dim();
    const auto& detectors = doc.at("detectors");
    const auto& values = doc.at("values");
    if (detectors.size() != t.schema_.size() || values.size() != t.schema_.size()) {
      throw Error(ErrorCode::kSchemaMismatch, "tagger label count differs from schema");
    }
    for (std::size_t i = 0; i < t.schema_.size(); ++i) {
      const auto& d = detectors[i];
      if (d.at("label").get<std::string>() != t.schema_.labels[i]) {
        throw Error(ErrorCode::kSchemaMismatch, "detector label order differs from schema");
      }
      t.thresholds_.push_back(d.at("threshold").get<double>());
      t.detectors_.push_back({dense_weights(d.at("weights"), dim), d.at("bias").get<double>()});
      const auto& v = values[i];
      ValueModel model;
      model.classes = v.at("classes").get<std::vector<std::string>>();
      model.bias = v.at("bias").get<std::vector<double>>();
      for (const auto& w : v.at("weights")) model.weights.push_back(dense_weights(w, dim));
      if (model.classes.size() != model.bias.size() || model.classes.size() != model.weights.size()) {
        throw Error(ErrorCode::kParseError, "value classifier arrays differ in length");
      }
      t.values_.push_back(std::move(model));
    }
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("tagger bundle: ") + e.what());
  }
}

void Tagger::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  out << to_json().dump() << '\n';
}

Tagger Tagger::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingModelBundle, "cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kParseError, path.string() + " is not JSON");
  return from_json(doc);
}

F1Score micro_f1(std::span<const std::vector<TagPair>> predicted,
                 std::span<const std::vector<TagPair>> gold) {
  if (predicted.size() != gold.size()) {
    throw Error(ErrorCode::kBadConfig, "prediction and gold lists differ in length");
  }
  F1Score score;
  for (std::size_t m = 0; m < gold.size(); ++m) {
    const std::set<TagPair> p(predicted[m].begin(), predicted[m].end());
    const std::set<TagPair> g(gold[m].begin(), gold[m].end());
    score.predicted += p.size();
    score.gold += g.size();
    for (const auto& pair : p) score.true_positives += g.count(pair);
  }
  const double tp = static_cast<double>(score.true_positives);
  score.precision = score.predicted ? tp / static_cast<double>(score.predicted) : 0.0;
  score.recall = score.gold ? tp / static_cast<double>(score.gold) : 0.0;
  const double denom = score.precision + score.recall;
  score.f1 = denom > 0.0 ? 2.0 * score.precision * score.recall / denom : 0.0;
  return score;
}

F1Score f1_eval(const Tagger& tagger, std::span<const TaggedMessage> corpus) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "evaluation corpus is empty");
  const auto& schema = tagger.schema();
  std::vector<std::vector<TagPair>> predicted;
  std::vector<std::vector<TagPair>> gold;
  for (const auto& message : corpus) {
    std::vector<TagPair> p;
    for (const auto& tag : tagger.auto_tag(message.text, {})) p.emplace_back(tag.category, tag.value);
    std::vector<TagPair> g;
    for (const auto& tag : message.gold) {
      auto label = schema.labels.index_of(tag.category);
      if (!label) continue;
      const std::string value = trim(tag.value);
      g.emplace_back(schema.labels[*label], schema.vocab.contains(schema.labels[*label], value)
                                                ? value
                                                : std::string(kUnknownValue));
    }
    predicted.push_back(std::move(p));
    gold.push_back(std::move(g));
  }
  return micro_f1(predicted, gold);
}

json tagged_message_to_json(const TaggedMessage& message) {
  json tags = json::array();
  for (const auto& t : message.gold) tags.push_back({{"category", t.category}, {"value", t.value}});
  return json{{"text", message.text}, {"tags", tags}};
}

TaggedMessage tagged_message_from_json(const json& doc) {
  try {
    TaggedMessage m;
    m.text = doc.at("text").get<std::string>();
    for (const auto& t : doc.at("tags")) {
      TagEvent tag;
      tag.category = t.at("category").get<std::string>();
      tag.value = t.at("value").get<std::string>();
      m.gold.push_back(std::move(tag));
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("tagged message: ") + e.what());
  }
}

}  // namespace chatassist
