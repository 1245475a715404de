#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oprl/dataset.hpp"
#include "oprl/nn.hpp"

// Bradley-Terry reward learning over snippet returns. A posterior is either an
// ensemble of independently seeded networks or one network with dropout on
// its last hidden layer sampled by Monte-Carlo passes.
namespace oprl::reward {

enum class PosteriorKind { ensemble, dropout };

std::string posterior_kind_name(PosteriorKind k);
PosteriorKind parse_posterior_kind(const std::string& name);

struct RewardConfig {
  std::size_t epochs_initial = 5;
  std::size_t epochs_per_round = 1;
  std::size_t batch_size = 1;  // 0 means one full batch per epoch
  double bt_beta = 1.0;
  double learning_rate = 3e-3;

  void validate() const;
};

/// Per-network training state that persists across rounds.
struct MemberState {
  nn::OptimizerState optimizer;
  Rng rng;
};

class RewardPosterior {
 public:
  /// `samples` is the ensemble size M or the number of dropout passes.
  /// For dropout posteriors the spec must designate a dropout layer.
  static RewardPosterior create(PosteriorKind kind, std::size_t samples, nn::NetworkSpec spec,
                                std::uint64_t seed, EnvId env);

  PosteriorKind kind() const { return kind_; }
  std::size_t sample_count() const { return samples_; }
  EnvId env() const { return env_; }
  std::uint64_t seed() const { return seed_; }
  const nn::NetworkSpec& spec() const { return spec_; }
  const std::vector<nn::Network>& members() const { return members_; }
  std::vector<nn::Network>& members() { return members_; }
  std::vector<std::uint64_t> member_seeds() const;
  /// Number of completed training calls; advances the dropout mask stream.
  std::uint64_t version() const { return version_; }

  /// Masks used for the M dropout passes of the current version.
  std::vector<nn::Vector> pass_masks() const;

  friend std::vector<double> train_posterior(RewardPosterior&, const std::vector<LabeledQuery>&,
                                             const OfflineDataset&, const RewardConfig&,
                                             std::size_t);
  friend void save_posterior(const RewardPosterior&, const std::filesystem::path&);
  friend RewardPosterior load_posterior(const std::filesystem::path&);

 private:
  PosteriorKind kind_ = PosteriorKind::ensemble;
  std::size_t samples_ = 0;
  EnvId env_ = EnvId::open_maze;
  std::uint64_t seed_ = 0;
  nn::NetworkSpec spec_;
  std::vector<nn::Network> members_;
  std::vector<MemberState> state_;
  std::uint64_t version_ = 0;
};

/// Network features for every state of the snippet.
nn::Matrix snippet_features(const OfflineDataset& ds, const SnippetRef& snip);

/// Sum of per-state predicted rewards over the snippet.
double snippet_return(const nn::Network& net, const SnippetRef& snip, const OfflineDataset& ds,
                      nn::Mode mode, Rng& rng);
double snippet_return(const nn::Network& net, const SnippetRef& snip, const OfflineDataset& ds);

/// P(second preferred) = exp(beta*rb) / (exp(beta*ra) + exp(beta*rb)).
double bt_prob(double return_a, double return_b, double beta);

/// Mean negative log-likelihood of the labels given snippet returns, with
/// derivatives with respect to each return.
struct BtLoss {
  double value = 0.0;
  std::vector<double> d_return_a;
  std::vector<double> d_return_b;
};
BtLoss bt_loss(const std::vector<double>& returns_a, const std::vector<double>& returns_b,
               const std::vector<int>& labels, double beta);

/// Trains every member for `epochs` passes over the labels; returns the
/// full-label loss after each epoch (mean over members, eval mode).
std::vector<double> train_posterior(RewardPosterior& post, const std::vector<LabeledQuery>& labels,
                                    const OfflineDataset& ds, const RewardConfig& cfg,
                                    std::size_t epochs);

/// Mean BT negative log-likelihood of `labels` under one network.
double label_loss(const nn::Network& net, const std::vector<LabeledQuery>& labels,
                  const OfflineDataset& ds, double beta);

/// M return samples for a snippet: one per ensemble member (eval mode) or
/// one per dropout pass.
std::vector<double> return_samples(const RewardPosterior& post, const SnippetRef& snip,
                                   const OfflineDataset& ds);
/// M x n matrix of samples for many snippets (same passes for every snippet).
Eigen::MatrixXd return_samples(const RewardPosterior& post, const std::vector<SnippetRef>& snips,
                               const OfflineDataset& ds);

/// Posterior-mean per-state reward for a batch of feature columns. Dropout
/// sits on the last hidden layer, so the eval-mode output is the exact mean
/// over masks.
Eigen::RowVectorXd mean_reward(const RewardPosterior& post, const nn::Matrix& features);
/// Posterior-mean snippet return.
double mean_return(const RewardPosterior& post, const SnippetRef& snip, const OfflineDataset& ds);

struct RelabelStats {
  double raw_mean = 0.0;
  double raw_std = 0.0;
  bool standardized = false;
};

/// Writes the standardized posterior-mean reward into every trajectory's
/// predicted channel. Zero variance falls back to mean-centering only.
RelabelStats relabel_dataset(const RewardPosterior& post, OfflineDataset& ds);

void save_posterior(const RewardPosterior& post, const std::filesystem::path& dir);
RewardPosterior load_posterior(const std::filesystem::path& dir);

}  // namespace oprl::reward
