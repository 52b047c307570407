#pragma once

// One-hidden-layer perceptron: tanh hidden units, softmax output, trained on
// mean cross-entropy. Small by construction (inputs < 10 per loop).

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace ccic::detector {

struct Mlp {
  int n_in = 0;
  int n_hidden = 0;
  int n_out = 0;
  std::vector<double> w1;  // n_hidden x n_in, row-major
  std::vector<double> b1;  // n_hidden
  std::vector<double> w2;  // n_out x n_hidden, row-major
  std::vector<double> b2;  // n_out

  static Mlp zeros(int n_in, int n_hidden, int n_out);
  /// Glorot-uniform weights, zero biases.
  static Mlp random(int n_in, int n_hidden, int n_out, std::uint64_t seed);

  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  /// Flat view order: w1, b1, w2, b2.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  bool operator==(const Mlp&) const = default;
};

struct Sample {
  std::vector<double> x;
  int label = 0;
};

/// Softmax class probabilities. Throws PreconditionError on size mismatch or
/// non-finite input.
std::vector<double> forward(const Mlp& mlp, std::span<const double> x);

/// Same shapes as Mlp; gradient of the mean cross-entropy over the batch.
struct Gradients {
  std::vector<double> w1, b1, w2, b2;
  std::vector<double> flatten() const;
};

Gradients gradients(const Mlp& mlp, std::span<const Sample> batch);
double mean_cross_entropy(const Mlp& mlp, std::span<const Sample> batch);

nlohmann::json to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace ccic::detector
