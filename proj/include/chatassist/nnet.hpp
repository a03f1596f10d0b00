#pragma once

// Small dense feed-forward classifiers: ReLU hidden layers, softmax output,
// cross-entropy loss, mini-batch gradient descent. Ensemble members are drawn
// with random depth and widths.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace chatassist {

enum class Activation { relu };

struct ArchConfig {
  std::size_t max_depth = 4;
  std::size_t min_width = 16;
  std::size_t max_width = 128;
};

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<std::size_t> hidden_layers;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  bool operator==(const NetworkSpec&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

class Network {
 public:
  Network(NetworkSpec spec, std::vector<DenseLayer> layers);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t parameter_count() const;
  bool parameters_finite() const;

  // Rows of `inputs` are samples; returns row-wise class probabilities.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;

  bool operator==(const Network& other) const;

 private:
  NetworkSpec spec_;
  std::vector<DenseLayer> layers_;
};

// Glorot-uniform weights and zero biases, keyed on spec.seed. hidden_layers may
// be empty (plain softmax regression).
Network make_network(const NetworkSpec& spec);

// Depth uniform in [1, max_depth], widths uniform in [min_width, max_width].
Network generate_random_network(std::uint64_t seed, std::size_t input_dim,
                                std::size_t output_dim, const ArchConfig& arch = {});

struct LabeledDataset {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  std::size_t input_dim() const { return rows.empty() ? 0 : rows.front().size(); }
  // Throws kEmptyDataset / kDimMismatch / kBadConfig on violations.
  void validate(bool require_rows = true) const;
  void add(std::vector<double> row, std::size_t label);
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
  Eigen::MatrixXd feature_matrix() const;
  std::string digest() const;

  nlohmann::json to_json() const;
  static LabeledDataset from_json(const nlohmann::json& doc);
};

struct TrainingHyper {
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
};

struct LossGradient {
  double loss = 0.0;  // mean cross-entropy over the rows
  std::vector<DenseLayer> gradients;
};

// Analytic mean cross-entropy gradient over the given rows (all rows if empty).
LossGradient loss_and_gradient(const Network& net, const LabeledDataset& data,
                               std::span<const std::size_t> rows = {});
double mean_loss(const Network& net, const LabeledDataset& data);

struct TrainingResult {
  Network network;
  std::vector<double> epoch_losses;  // full-data loss of the iterate after each epoch
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Shuffled mini-batch gradient descent, shuffles keyed on spec().seed.
// Returns the lowest-loss iterate seen (initial parameters included), so the
// returned loss never exceeds the initial one.
TrainingResult train_with_history(Network net, const LabeledDataset& data,
                                  const TrainingHyper& hyper = {});
Network train(Network net, const LabeledDataset& data, const TrainingHyper& hyper = {});

std::vector<double> predict(const Network& net, std::span<const double> x);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> scores);
// Classes ordered by descending score, ties by lower index; first k returned.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

// Fraction of rows whose label is in the top-k predicted classes.
double accuracy(const Network& net, const LabeledDataset& data, std::size_t k = 1);

// {version, spec, layers[{rows, cols, weights (row-major), bias}], catalog_hash}.
nlohmann::json network_to_json(const Network& net, const std::string& catalog_hash);
Network network_from_json(const nlohmann::json& doc, std::string* catalog_hash = nullptr);

}  // namespace chatassist
