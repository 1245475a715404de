#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oprl/dataset.hpp"
#include "oprl/nn.hpp"

// Advantage-Weighted Regression on a fixed dataset: Monte-Carlo returns,
// value regression, then exponentiated-advantage weighted likelihood
// maximization of the dataset actions.
namespace oprl::rl {

enum class PolicyKind { gaussian, categorical };

struct AwrConfig {
  double gamma = 0.99;
  double beta = 1.0;         // advantage temperature
  double weight_cap = 20.0;  // w_max
  std::size_t value_iters = 2000;
  std::size_t policy_iters = 4000;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_sizes{64, 64};
  double value_lr = 1e-3;
  double policy_lr = 1e-3;
  double sigma = 0.2;  // fixed Gaussian exploration noise (maze)
  /// Rescale a non-constant reward channel to zero mean, unit variance
  /// before computing returns, so beta means the same for every channel.
  bool standardize_rewards = true;

  void validate() const;
};

/// Action likelihood model on top of the policy network outputs. Gaussian:
/// outputs are the mean, fixed diagonal sigma. Categorical: outputs are
/// logits over a fixed list of discrete forces.
struct PolicyHead {
  PolicyKind kind = PolicyKind::gaussian;
  double sigma = 0.2;
  std::vector<double> choices;  // categorical forces

  static PolicyHead for_env(EnvId env, double sigma);
  std::size_t output_dim(std::size_t action_dim) const;
  std::size_t choice_index(double action) const;
  double log_prob(const nn::Vector& output, const nn::Vector& action) const;
  /// Mean of the action distribution (no exploration noise).
  nn::Vector mean_action(const nn::Vector& output) const;
};

struct AwrBatch {
  nn::Matrix features;  // obs_dim x B
  nn::Matrix actions;   // action_dim x B
  std::vector<double> returns;
  std::vector<double> values;
};

/// min(exp(advantage / beta), cap).
double awr_weight(double advantage, double beta, double cap);

/// Mean over the batch of -log pi(a|s) * min(exp((R - V(s)) / beta), cap),
/// as a loss on the policy outputs.
nn::LossFn awr_policy_loss(const AwrBatch& batch, const PolicyHead& head, double beta, double cap);
/// Behavioral cloning: mean -log pi(a|s).
nn::LossFn bc_loss(const AwrBatch& batch, const PolicyHead& head);

/// In-place standardization over all transitions; a constant channel is left
/// unchanged. Returns false in that case.
bool standardize_channel(std::vector<std::vector<double>>& rewards);

/// R_t = r_t + gamma * R_{t+1}, R_T = r_T; nothing is bootstrapped past the end.
std::vector<double> mc_returns(std::span<const double> rewards, double gamma);

/// V(s) = offset + scale * net(s); the network regresses standardized returns.
struct ValueFunction {
  nn::Network net;
  double offset = 0.0;
  double scale = 1.0;
  std::vector<double> loss_curve;  // minibatch MSE per iteration (standardized units)

  Eigen::RowVectorXd predict(const nn::Matrix& features) const;
};

/// Mean squared error of a single-output network against `targets`.
nn::LossFn value_regression_loss(const nn::Vector& targets);

/// Minibatch MSE regression. Identical targets have the exact optimum
/// V = constant, returned without iterating.
ValueFunction fit_value(const nn::Matrix& features, const std::vector<double>& returns,
                        const AwrConfig& cfg);

enum class SelectorKind { gt, predicted, zero, constant, random };

struct RewardSelector {
  SelectorKind kind = SelectorKind::gt;
  std::string task;     // gt
  double constant = 0;  // constant

  static RewardSelector gt(std::string task) { return {SelectorKind::gt, std::move(task), 0.0}; }
  static RewardSelector predicted() { return {SelectorKind::predicted, {}, 0.0}; }
  static RewardSelector zero() { return {SelectorKind::zero, {}, 0.0}; }
  static RewardSelector constant_value(double c) { return {SelectorKind::constant, {}, c}; }
  static RewardSelector random() { return {SelectorKind::random, {}, 0.0}; }
  std::string describe() const;
};

/// Mean ground-truth reward per transition (the Avg masking constant).
double dataset_mean_reward(const OfflineDataset& ds, const std::string& task);

struct TrainingLog {
  std::vector<double> value_loss;
  std::vector<double> policy_loss;
};

struct PolicyArtifact {
  EnvId env = EnvId::open_maze;
  PolicyHead head;
  ValueFunction value;
  nn::Network policy;
  AwrConfig config;
  std::string selector;
  TrainingLog log;

  nn::Vector act(const Eigen::VectorXd& state) const;
};

/// Per-transition reward channel for each trajectory.
std::vector<std::vector<double>> reward_channel(const OfflineDataset& ds, const RewardSelector& sel);

PolicyArtifact run_awr(const OfflineDataset& ds, const RewardSelector& selector, const AwrConfig& cfg);
/// Plain behavioral cloning with the same initialization and batch stream
/// as run_awr's policy phase.
PolicyArtifact run_bc(const OfflineDataset& ds, const AwrConfig& cfg);

void save_policy(const PolicyArtifact& art, const std::filesystem::path& dir);
PolicyArtifact load_policy(const std::filesystem::path& dir);

nlohmann::json awr_config_to_json(const AwrConfig& cfg);
AwrConfig awr_config_from_json(const nlohmann::json& j);

}  // namespace oprl::rl
