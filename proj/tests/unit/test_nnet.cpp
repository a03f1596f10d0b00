#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "chatassist/nnet.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace chatassist;

namespace {

LabeledDataset random_dataset(std::mt19937_64& rng, std::size_t rows, std::size_t dim, std::size_t classes) {
  LabeledDataset d;
  d.num_classes = classes;
  std::normal_distribution<double> g(0, 1);
  std::uniform_int_distribution<std::size_t> c(0, classes - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> x(dim);
    for (auto& v : x) v = g(rng);
    d.add(x, c(rng));
  }
  return d;
}

// Two features, label = [x0 + x1 > 0], points kept at least 0.3 from the line.
LabeledDataset separable(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  LabeledDataset d;
  d.num_classes = 2;
  while (d.size() < 100) {
    double a = u(rng), b = u(rng);
    if (std::abs(a + b) / std::sqrt(2.0) < 0.3) continue;
    d.add({a, b}, a + b > 0 ? 1 : 0);
  }
  return d;
}

}  // namespace

TEST_CASE("same seed gives byte-identical networks") {
  auto a = generate_random_network(42, 10, 4);
  auto b = generate_random_network(42, 10, 4);
  CHECK(network_to_json(a, "h").dump() == network_to_json(b, "h").dump());
  auto c = generate_random_network(43, 10, 4);
  CHECK(network_to_json(a, "h").dump() != network_to_json(c, "h").dump());
}

TEST_CASE("max_depth 1 always gives one hidden layer, widths within bounds") {
  ArchConfig arch{1, 16, 128};
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto net = generate_random_network(s, 5, 3, arch);
    REQUIRE(net.spec().hidden_layers.size() == 1);
    CHECK(net.spec().hidden_layers[0] >= 16);
    CHECK(net.spec().hidden_layers[0] <= 128);
  }
}

TEST_CASE("depth distribution over 10000 draws is uniform") {
  ArchConfig arch{4, 16, 128};
  std::array<int, 4> counts{};
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    auto net = generate_random_network(static_cast<std::uint64_t>(s), 1, 2, arch);
    const auto depth = net.spec().hidden_layers.size();
    REQUIRE(depth >= 1);
    REQUIRE(depth <= 4);
    ++counts[depth - 1];
    for (auto w : net.spec().hidden_layers) {
      CHECK(w >= 16);
      CHECK(w <= 128);
    }
  }
  const double expected = draws / 4.0;
  const double sigma = std::sqrt(draws * 0.25 * 0.75);
  double chi2 = 0;
  for (int c : counts) {
    CHECK(std::abs(c - expected) <= 3 * sigma);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  CHECK(chi2 < 16.27);  // df 3, p = 0.001
}

TEST_CASE("invalid dims") {
  CHECK_ERROR_CODE(generate_random_network(1, 0, 2), ErrorCode::kInvalidDims);
  CHECK_ERROR_CODE(generate_random_network(1, 2, 0), ErrorCode::kInvalidDims);
  CHECK_ERROR_CODE(generate_random_network(1, 2, 2, ArchConfig{0, 16, 128}), ErrorCode::kInvalidDims);
  CHECK_ERROR_CODE(generate_random_network(1, 2, 2, ArchConfig{2, 64, 16}), ErrorCode::kInvalidDims);
}

TEST_CASE("predict gives a probability simplex and is pure") {
  std::mt19937_64 rng(3);
  auto net = generate_random_network(9, 7, 5);
  std::normal_distribution<double> g(0, 3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(7);
    for (auto& v : x) v = g(rng);
    auto p = predict(net, x);
    REQUIRE(p.size() == 5);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    for (double v : p) CHECK(std::isfinite(v));
    CHECK(predict(net, x) == p);
  }
  CHECK_ERROR_CODE(predict(net, std::vector<double>(6, 0.0)), ErrorCode::kDimMismatch);
}

TEST_CASE("forward pass stays finite on large inputs") {
  auto net = generate_random_network(5, 3, 4);
  auto p = predict(net, std::vector<double>{1e6, -1e6, 1e5});
  for (double v : p) CHECK(std::isfinite(v));
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("argmax and top_k break ties toward the lower index") {
  std::vector<double> s{0.2, 0.4, 0.4, 0.0};
  CHECK(argmax(s) == 1);
  CHECK(top_k(s, 3) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("training on a single-class dataset") {
  LabeledDataset d;
  d.num_classes = 1;
  for (int i = 0; i < 20; ++i) d.add({double(i), 1.0}, 0);
  auto net = train(generate_random_network(1, 2, 1), d);
  for (const auto& r : d.rows) CHECK(predict(net, r)[0] >= 0.99);

  // Two output classes, only one of them present.
  LabeledDataset two;
  two.num_classes = 2;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < 64; ++i) two.add({g(rng), g(rng)}, 1);
  auto net2 = train(generate_random_network(2, 2, 2), two, TrainingHyper{200, 0.05, 32});
  for (const auto& r : two.rows) CHECK(predict(net2, r)[1] >= 0.99);
}

TEST_CASE("linearly separable toy set reaches 0.95 train accuracy with defaults") {
  auto d = separable(11);
  // Separability oracle: the generating line classifies every row.
  for (std::size_t i = 0; i < d.size(); ++i) REQUIRE((d.rows[i][0] + d.rows[i][1] > 0) == (d.labels[i] == 1));
  int passed = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto net = train(generate_random_network(s, 2, 2), d);
    if (accuracy(net, d) >= 0.95) ++passed;
  }
  CHECK(passed == 5);
}

TEST_CASE("zero epochs leaves parameters unchanged") {
  std::mt19937_64 rng(5);
  auto d = random_dataset(rng, 30, 4, 3);
  auto net = generate_random_network(3, 4, 3);
  auto trained = train(net, d, TrainingHyper{0, 0.05, 32});
  CHECK(trained == net);
}

TEST_CASE("training never returns a loss above the initial one and is deterministic") {
  std::mt19937_64 rng(6);
  auto d = random_dataset(rng, 80, 5, 4);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto net = generate_random_network(s, 5, 4);
    auto r = train_with_history(net, d);
    CHECK(r.final_loss <= r.initial_loss);
    CHECK(mean_loss(r.network, d) == doctest::Approx(r.final_loss));
    auto again = train_with_history(net, d);
    CHECK(again.network == r.network);
  }
}

TEST_CASE("full-batch softmax regression loss decreases monotonically at small learning rate") {
  std::mt19937_64 rng(7);
  auto d = random_dataset(rng, 60, 4, 3);
  NetworkSpec spec{4, 3, {}, Activation::relu, 1};
  auto r = train_with_history(make_network(spec), d, TrainingHyper{50, 0.01, 60});
  REQUIRE(r.epoch_losses.size() == 50);
  double prev = r.initial_loss;
  for (double l : r.epoch_losses) {
    CHECK(l <= prev + 1e-12);
    prev = l;
  }
}

TEST_CASE("training errors") {
  LabeledDataset empty;
  empty.num_classes = 2;
  CHECK_ERROR_CODE(train(generate_random_network(1, 2, 2), empty), ErrorCode::kEmptyDataset);
  std::mt19937_64 rng(8);
  auto d = random_dataset(rng, 20, 3, 2);
  for (auto& row : d.rows)
    for (auto& v : row) v *= 1e150;
  CHECK_ERROR_CODE(train(generate_random_network(1, 3, 2), d, TrainingHyper{5, 1e6, 4}),
                   ErrorCode::kDivergenceDetected);
  CHECK_ERROR_CODE(train(generate_random_network(1, 4, 2), d), ErrorCode::kDimMismatch);
}

TEST_CASE("analytic gradient matches central differences on a 3-layer toy net") {
  std::mt19937_64 rng(9);
  auto d = random_dataset(rng, 8, 5, 3);
  NetworkSpec spec{5, 3, {6, 4}, Activation::relu, 77};
  auto net = make_network(spec);
  // Non-zero biases so the check covers them too.
  for (auto& layer : net.layers()) layer.bias.setConstant(0.05);
  CHECK(oracle::max_gradient_error(net, d) < 1e-4);
}

TEST_CASE("accuracy: perfect predictor, exhaustive k and a chance-level predictor") {
  // Perfect: one-hot inputs through an identity softmax layer scaled up.
  NetworkSpec spec{3, 3, {}, Activation::relu, 0};
  DenseLayer layer{Eigen::MatrixXd::Identity(3, 3) * 20.0, Eigen::VectorXd::Zero(3)};
  Network perfect(spec, {layer});
  LabeledDataset d;
  d.num_classes = 3;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> x(3, 0.0);
    x[c] = 1.0;
    d.add(x, c);
  }
  CHECK(accuracy(perfect, d, 1) == 1.0);
  CHECK(accuracy(generate_random_network(3, 3, 3), d, 3) == 1.0);

  // Labels drawn independently of the inputs: top-2 of 4 hits half the time.
  std::mt19937_64 rng(10);
  auto chance = random_dataset(rng, 10000, 4, 4);
  const double acc = accuracy(generate_random_network(12, 4, 4), chance, 2);
  CHECK(acc == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +- 0.02

  LabeledDataset empty;
  empty.num_classes = 3;
  CHECK_ERROR_CODE(accuracy(perfect, empty), ErrorCode::kEmptyDataset);
}

TEST_CASE("network JSON reload is bit-exact") {
  auto net = generate_random_network(21, 6, 4);
  std::string hash;
  auto back = network_from_json(nlohmann::json::parse(network_to_json(net, "cat").dump()), &hash);
  CHECK(back == net);
  CHECK(hash == "cat");
  CHECK(back.spec() == net.spec());
}

TEST_CASE("dataset validation") {
  LabeledDataset d;
  d.num_classes = 2;
  d.rows = {{1.0, 2.0}, {1.0}};
  d.labels = {0, 1};
  CHECK_ERROR_CODE(d.validate(), ErrorCode::kDimMismatch);
  d.rows = {{1.0}, {2.0}};
  d.labels = {0, 2};
  CHECK_ERROR_CODE(d.validate(), ErrorCode::kBadConfig);
  d.labels = {0, 1};
  auto back = LabeledDataset::from_json(d.to_json());
  CHECK(back.digest() == d.digest());
}
