#include "chatassist/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "chatassist/digest.hpp"
#include "chatassist/error.hpp"

namespace chatassist {

using nlohmann::json;

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(r).array() - peak).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

// Mean cross-entropy from logits via log-sum-exp.
double cross_entropy(const Eigen::MatrixXd& logits, std::span<const std::size_t> labels) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    const double lse = peak + std::log((logits.row(r).array() - peak).exp().sum());
    total += lse - logits(r, static_cast<Eigen::Index>(labels[r]));
  }
  return total / static_cast<double>(logits.rows());
}

struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = input
  std::vector<Eigen::MatrixXd> pre;          // pre-activation per layer
};

ForwardTrace trace_forward(const Network& net, const Eigen::MatrixXd& inputs) {
  ForwardTrace trace;
  trace.activations.push_back(inputs);
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = trace.activations.back() * layers[l].weights.transpose();
    z.rowwise() += layers[l].bias.transpose();
    trace.pre.push_back(z);
    if (l + 1 < layers.size()) trace.activations.push_back(z.cwiseMax(0.0));
  }
  return trace;
}

Eigen::MatrixXd gather_rows(const LabeledDataset& data, std::span<const std::size_t> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(data.input_dim()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& src = data.rows[rows[r]];
    m.row(static_cast<Eigen::Index>(r)) =
        Eigen::Map<const Eigen::RowVectorXd>(src.data(), static_cast<Eigen::Index>(src.size()));
  }
  return m;
}

LossGradient gradient_on(const Network& net, const Eigen::MatrixXd& inputs,
                         std::span<const std::size_t> labels) {
  const auto& layers = net.layers();
  ForwardTrace trace = trace_forward(net, inputs);
  const auto batch = static_cast<double>(inputs.rows());

  LossGradient out;
  out.loss = cross_entropy(trace.pre.back(), labels);
  out.gradients.resize(layers.size());

  Eigen::MatrixXd delta = softmax_rows(trace.pre.back());
  for (Eigen::Index r = 0; r < delta.rows(); ++r) {
    delta(r, static_cast<Eigen::Index>(labels[r])) -= 1.0;
  }
  delta /= batch;

  for (std::size_t l = layers.size(); l-- > 0;) {
    out.gradients[l].weights = delta.transpose() * trace.activations[l];
    out.gradients[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * layers[l].weights;
      delta = back.cwiseProduct((trace.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

void check_compatible(const Network& net, const LabeledDataset& data) {
  data.validate();
  if (data.input_dim() != net.spec().input_dim) {
    throw Error(ErrorCode::kDimMismatch, "dataset width " + std::to_string(data.input_dim()) +
                                             " != network input " +
                                             std::to_string(net.spec().input_dim));
  }
  if (data.num_classes != net.spec().output_dim) {
    throw Error(ErrorCode::kDimMismatch, "dataset classes != network outputs");
  }
}

}  // namespace

Network::Network(NetworkSpec spec, std::vector<DenseLayer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)) {
  if (spec_.input_dim == 0 || spec_.output_dim == 0) {
    throw Error(ErrorCode::kInvalidDims, "network dims must be positive");
  }
  if (layers_.size() != spec_.hidden_layers.size() + 1) {
    throw Error(ErrorCode::kInvalidDims, "layer count does not match spec");
  }
  std::size_t in = spec_.input_dim;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t out =
        l < spec_.hidden_layers.size() ? spec_.hidden_layers[l] : spec_.output_dim;
    const auto& layer = layers_[l];
    if (static_cast<std::size_t>(layer.weights.rows()) != out ||
        static_cast<std::size_t>(layer.weights.cols()) != in ||
        static_cast<std::size_t>(layer.bias.size()) != out) {
      throw Error(ErrorCode::kInvalidDims, "layer " + std::to_string(l) + " has wrong shape");
    }
    in = out;
  }
}

std::size_t Network::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) {
    count += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  }
  return count;
}

bool Network::parameters_finite() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& layer) {
    return layer.weights.allFinite() && layer.bias.allFinite();
  });
}

Eigen::MatrixXd Network::forward(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.cols()) != spec_.input_dim) {
    throw Error(ErrorCode::kDimMismatch, "input width " + std::to_string(inputs.cols()) +
                                             " != " + std::to_string(spec_.input_dim));
  }
  return softmax_rows(trace_forward(*this, inputs).pre.back());
}

bool Network::operator==(const Network& other) const {
  if (!(spec_ == other.spec_) || layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weights != other.layers_[l].weights) return false;
    if (layers_[l].bias != other.layers_[l].bias) return false;
  }
  return true;
}

Network make_network(const NetworkSpec& spec) {
  if (spec.input_dim == 0 || spec.output_dim == 0) {
    throw Error(ErrorCode::kInvalidDims, "network dims must be positive");
  }
  std::mt19937_64 rng(mix_seed(spec.seed, 0x1417));
  std::vector<DenseLayer> layers;
  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l <= spec.hidden_layers.size(); ++l) {
    const std::size_t out = l < spec.hidden_layers.size() ? spec.hidden_layers[l] : spec.output_dim;
    if (out == 0) throw Error(ErrorCode::kInvalidDims, "zero-width layer");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer;
    layer.weights.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = dist(rng);
    }
    layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
    layers.push_back(std::move(layer));
    in = out;
  }
  return Network(spec, std::move(layers));
}

Network generate_random_network(std::uint64_t seed, std::size_t input_dim,
                                std::size_t output_dim, const ArchConfig& arch) {
  if (input_dim == 0 || output_dim == 0) {
    throw Error(ErrorCode::kInvalidDims, "network dims must be positive");
  }
  if (arch.max_depth == 0 || arch.min_width == 0 || arch.min_width > arch.max_width) {
    throw Error(ErrorCode::kInvalidDims, "invalid architecture bounds");
  }
  std::mt19937_64 rng(mix_seed(seed, 0xa5c4));
  std::uniform_int_distribution<std::size_t> depth_dist(1, arch.max_depth);
  std::uniform_int_distribution<std::size_t> width_dist(arch.min_width, arch.max_width);

  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.seed = seed;
  const std::size_t depth = depth_dist(rng);
  for (std::size_t l = 0; l < depth; ++l) spec.hidden_layers.push_back(width_dist(rng));
  return make_network(spec);
}

void LabeledDataset::validate(bool require_rows) const {
  if (require_rows && rows.empty()) throw Error(ErrorCode::kEmptyDataset, "dataset has no rows");
  if (rows.size() != labels.size()) {
    throw Error(ErrorCode::kBadConfig, "rows and labels differ in length");
  }
  if (num_classes == 0) throw Error(ErrorCode::kBadConfig, "dataset has no classes");
  const std::size_t dim = input_dim();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw Error(ErrorCode::kDimMismatch, "ragged dataset rows");
    if (labels[i] >= num_classes) {
      throw Error(ErrorCode::kBadConfig, "label " + std::to_string(labels[i]) + " out of range");
    }
  }
}

void LabeledDataset::add(std::vector<double> row, std::size_t label) {
  rows.push_back(std::move(row));
  labels.push_back(label);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.rows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) out.add(rows.at(i), labels.at(i));
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto label : labels) ++counts.at(label);
  return counts;
}

Eigen::MatrixXd LabeledDataset::feature_matrix() const {
  std::vector<std::size_t> all(rows.size());
  std::iota(all.begin(), all.end(), 0);
  return gather_rows(*this, all);
}

std::string LabeledDataset::digest() const {
  std::uint64_t state = fnv1a64("labeled-dataset");
  auto feed = [&state](const void* p, std::size_t n) {
    state = fnv1a64(std::string_view(static_cast<const char*>(p), n), state);
  };
  const std::uint64_t header[2] = {num_classes, rows.size()};
  feed(header, sizeof(header));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint64_t label = labels[i];
    feed(&label, sizeof(label));
    feed(rows[i].data(), rows[i].size() * sizeof(double));
  }
  return hex64(state);
}

json LabeledDataset::to_json() const {
  return json{{"num_classes", num_classes}, {"labels", labels}, {"rows", rows}};
}

LabeledDataset LabeledDataset::from_json(const json& doc) {
  try {
    LabeledDataset data;
    data.num_classes = doc.at("num_classes").get<std::size_t>();
    data.labels = doc.at("labels").get<std::vector<std::size_t>>();
    data.rows = doc.at("rows").get<std::vector<std::vector<double>>>();
    data.validate(false);
    return data;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("dataset: ") + e.what());
  }
}

LossGradient loss_and_gradient(const Network& net, const LabeledDataset& data,
                               std::span<const std::size_t> rows) {
  check_compatible(net, data);
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(data.size());
    std::iota(all.begin(), all.end(), 0);
    rows = all;
  }
  std::vector<std::size_t> labels;
  labels.reserve(rows.size());
  for (auto r : rows) labels.push_back(data.labels.at(r));
  return gradient_on(net, gather_rows(data, rows), labels);
}

double mean_loss(const Network& net, const LabeledDataset& data) {
  check_compatible(net, data);
  return cross_entropy(trace_forward(net, data.feature_matrix()).pre.back(), data.labels);
}

TrainingResult train_with_history(Network net, const LabeledDataset& data,
                                  const TrainingHyper& hyper) {
  check_compatible(net, data);
  if (!(hyper.learning_rate > 0.0) || hyper.batch_size == 0) {
    throw Error(ErrorCode::kBadConfig, "learning rate and batch size must be positive");
  }
  const Eigen::MatrixXd features = data.feature_matrix();
  auto full_loss = [&](const Network& n) {
    const double loss = cross_entropy(trace_forward(n, features).pre.back(), data.labels);
    if (!std::isfinite(loss)) throw Error(ErrorCode::kDivergenceDetected, "non-finite loss");
    return loss;
  };

  TrainingResult result{net, {}, full_loss(net), 0.0};
  result.final_loss = result.initial_loss;
  if (hyper.epochs == 0) return result;

  std::mt19937_64 rng(mix_seed(net.spec().seed, 0x5eed));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> batch_labels;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
      std::span<const std::size_t> batch(order.data() + start, stop - start);
      batch_labels.clear();
      for (auto r : batch) batch_labels.push_back(data.labels[r]);
      LossGradient g = gradient_on(net, gather_rows(data, batch), batch_labels);
      if (!std::isfinite(g.loss)) throw Error(ErrorCode::kDivergenceDetected, "non-finite loss");
      auto& layers = net.layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weights -= hyper.learning_rate * g.gradients[l].weights;
        layers[l].bias -= hyper.learning_rate * g.gradients[l].bias;
      }
    }
    const double loss = full_loss(net);
    result.epoch_losses.push_back(loss);
    if (loss <= result.final_loss) {
      result.final_loss = loss;
      result.network = net;
    }
  }
  return result;
}

Network train(Network net, const LabeledDataset& data, const TrainingHyper& hyper) {
  return train_with_history(std::move(net), data, hyper).network;
}

std::vector<double> predict(const Network& net, std::span<const double> x) {
  if (x.size() != net.spec().input_dim) {
    throw Error(ErrorCode::kDimMismatch, "input length " + std::to_string(x.size()) +
                                             " != " + std::to_string(net.spec().input_dim));
  }
  Eigen::MatrixXd input =
      Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::MatrixXd probs = net.forward(input);
  return std::vector<double>(probs.data(), probs.data() + probs.size());
}

std::size_t argmax(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

double accuracy(const Network& net, const LabeledDataset& data, std::size_t k) {
  check_compatible(net, data);
  if (k == 0) throw Error(ErrorCode::kBadConfig, "k must be positive");
  const Eigen::MatrixXd probs = net.forward(data.feature_matrix());
  std::size_t hits = 0;
  std::vector<double> row(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) row[static_cast<std::size_t>(c)] = probs(r, c);
    const auto best = top_k(row, k);
    if (std::find(best.begin(), best.end(), data.labels[static_cast<std::size_t>(r)]) !=
        best.end()) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

json network_to_json(const Network& net, const std::string& catalog_hash) {
  const auto& spec = net.spec();
  json layers = json::array();
  for (const auto& layer : net.layers()) {
    std::vector<double> weights;
    weights.reserve(static_cast<std::size_t>(layer.weights.size()));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) weights.push_back(layer.weights(r, c));
    }
    std::vector<double> bias(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"rows", layer.weights.rows()},
                      {"cols", layer.weights.cols()},
                      {"weights", weights},
                      {"bias", bias}});
  }
  return json{{"version", 1},
              {"spec",
               {{"input_dim", spec.input_dim},
                {"output_dim", spec.output_dim},
                {"hidden_layers", spec.hidden_layers},
                {"activation", "relu"},
                {"seed", spec.seed}}},
              {"layers", layers},
              {"catalog_hash", catalog_hash}};
}

Network network_from_json(const json& doc, std::string* catalog_hash) {
  try {
    if (doc.at("version").get<int>() != 1) {
      throw Error(ErrorCode::kParseError, "unsupported network version");
    }
    const auto& s = doc.at("spec");
    if (s.at("activation").get<std::string>() != "relu") {
      throw Error(ErrorCode::kParseError, "unsupported activation");
    }
    NetworkSpec spec;
    spec.input_dim = s.at("input_dim").get<std::size_t>();
    spec.output_dim = s.at("output_dim").get<std::size_t>();
    spec.hidden_layers = s.at("hidden_layers").get<std::vector<std::size_t>>();
    spec.seed = s.at("seed").get<std::uint64_t>();

    std::vector<DenseLayer> layers;
    for (const auto& l : doc.at("layers")) {
      const auto rows = l.at("rows").get<Eigen::Index>();
      const auto cols = l.at("cols").get<Eigen::Index>();
      const auto weights = l.at("weights").get<std::vector<double>>();
      const auto bias = l.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(weights.size()) != rows * cols ||
          static_cast<Eigen::Index>(bias.size()) != rows) {
        throw Error(ErrorCode::kParseError, "layer array sizes disagree with shape");
      }
      DenseLayer layer;
      layer.weights.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
          layer.weights(r, c) = weights[static_cast<std::size_t>(r * cols + c)];
        }
      }
      layer.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), rows);
      layers.push_back(std::move(layer));
    }
    if (catalog_hash) *catalog_hash = doc.at("catalog_hash").get<std::string>();
    Network net(spec, std::move(layers));
    if (!net.parameters_finite()) throw Error(ErrorCode::kParseError, "non-finite parameters");
    return net;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("network: ") + e.what());
  }
}

}  // namespace chatassist
