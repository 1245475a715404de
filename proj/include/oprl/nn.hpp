#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "oprl/rng.hpp"

// Dense feedforward networks with exact reverse-mode gradients, dropout and
// an Adam optimizer. Batches are stored column-major: one sample per column.
namespace oprl::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu };

enum class Mode {
  train,       // dropout active, independent mask per sample
  eval,        // deterministic, dropout disabled
  mc_dropout,  // dropout active, one mask per call shared across the batch
};

struct NetworkSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_sizes{64, 64};
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;
  std::optional<std::size_t> dropout_layer;  // index into hidden_sizes
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;

  /// Throws InvalidSpec when dimensions or dropout settings are inconsistent.
  void validate() const;
  std::size_t num_layers() const { return hidden_sizes.size() + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;
  std::size_t param_count() const;

  bool operator==(const NetworkSpec&) const = default;
};

/// Parameters are one flat vector. For each layer l in order: the weight
/// matrix W_l (fan_out x fan_in, column-major) followed by the bias b_l.
class Network {
 public:
  Network() = default;
  explicit Network(NetworkSpec spec);  // zero parameters

  const NetworkSpec& spec() const { return spec_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }
  std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::Map<const Matrix> weights(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Matrix> weights(std::size_t layer);
  Eigen::Map<Vector> bias(std::size_t layer);

 private:
  std::size_t offset(std::size_t layer) const { return offsets_[layer]; }

  NetworkSpec spec_;
  Vector params_;
  std::vector<std::size_t> offsets_;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero;
/// a pure function of the spec (including its seed).
Network init_network(const NetworkSpec& spec);

Vector forward(const Network& net, const Vector& x, Mode mode, Rng& rng);
Matrix forward_batch(const Network& net, const Matrix& x, Mode mode, Rng& rng);
Matrix forward_eval(const Network& net, const Matrix& x);

/// Scaled Bernoulli mask (entries 0 or 1/(1-rate)) for the dropout layer.
Vector sample_dropout_mask(const NetworkSpec& spec, Rng& rng);

/// Forward pass with an explicit dropout mask shared by every column. This
/// is one posterior sample of a dropout network.
Matrix forward_with_mask(const Network& net, const Matrix& x, const Vector& mask);

struct LossEval {
  double value = 0.0;
  Matrix d_output;  // dLoss/dOutputs, same shape as the outputs
};
using LossFn = std::function<LossEval(const Matrix& outputs)>;

struct GradientResult {
  double loss = 0.0;
  Vector grad;
};

/// Exact gradient of loss(forward(x)) with respect to the flat parameters.
/// In train mode the per-sample dropout masks are drawn from `rng`.
GradientResult gradient(const Network& net, const Matrix& x, const LossFn& loss,
                        Mode mode, Rng& rng);
GradientResult gradient(const Network& net, const Matrix& x, const LossFn& loss);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Vector first_moment;
  Vector second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_network(const Network& net, AdamConfig config = {});
};

void optimizer_step(Network& net, OptimizerState& state, const Vector& grad);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);
nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace oprl::nn
