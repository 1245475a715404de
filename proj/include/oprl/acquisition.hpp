#pragma once

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oprl/dataset.hpp"
#include "oprl/labeler.hpp"
#include "oprl/metrics.hpp"
#include "oprl/reward_model.hpp"

namespace oprl::acquisition {

enum class Method {
  random,
  ensemble_disagreement,
  ensemble_infogain,
  dropout_disagreement,
  dropout_infogain,
};

/// random, ensemdis, enseminfo, dropdis, dropinfo
std::string method_name(Method m);
Method parse_method(const std::string& name);
/// Posterior representation a method scores with (random accepts either).
std::optional<reward::PosteriorKind> required_kind(Method m);

struct QuerySchedule {
  std::size_t initial_queries = 5;
  std::size_t queries_per_round = 1;
  std::size_t rounds = 10;

  std::size_t total() const { return initial_queries + queries_per_round * rounds; }
  void validate() const;
};

/// p(1 - p), p = fraction of samples with b's return above a's (ties 1/2).
double disagreement_score(std::span<const double> samples_a, std::span<const double> samples_b);

/// Binary entropy in nats with 0 log 0 = 0.
double binary_entropy(double p);

/// H(mean_m p_m) - mean_m H(p_m), p_m the Bradley-Terry probability under
/// sample m; clamped at 0.
double infogain_score(std::span<const double> samples_a, std::span<const double> samples_b,
                      double beta);

double score_pair(Method m, std::span<const double> samples_a, std::span<const double> samples_b,
                  double beta);

/// Scores of the listed pairs; pure with respect to the pool and posterior.
std::vector<double> score_pairs(const PairPool& pool, const std::vector<std::size_t>& ids,
                                const reward::RewardPosterior& post, Method method,
                                const OfflineDataset& ds, double beta);

struct Selection {
  std::size_t pair_id = 0;
  double score = 0.0;
};

/// random: uniform over unlabeled pairs. Otherwise the highest scoring
/// unlabeled pair, lowest id on ties. scan_budget > 0 scores a random subset
/// of that size.
Selection select_query(const PairPool& pool, const reward::RewardPosterior& post, Method method,
                       const OfflineDataset& ds, Rng& rng, double beta,
                       std::size_t scan_budget = 0);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> pair_ids;
  std::vector<double> scores;
  std::optional<double> heldout_accuracy;
  std::size_t labels_total = 0;
  double wall_time_s = 0.0;
};

nlohmann::json round_to_json(const RoundRecord& r);

struct ActiveLoopConfig {
  Method method = Method::ensemble_disagreement;
  QuerySchedule schedule;
  reward::RewardConfig reward;
  std::size_t scan_budget = 0;
  std::uint64_t seed = 0;
  /// Held-out pairs with their oracle labels; accuracy is skipped when empty.
  metrics::HeldOutSet heldout;
  /// Append-only label file and per-round log; empty paths disable writing.
  std::filesystem::path label_file;
  std::filesystem::path run_log;
  /// Labels from an earlier, interrupted run; reused instead of re-asking.
  std::vector<LabeledQuery> resume;
  /// Called after every training step (round 0 is the initial training).
  std::function<void(const RoundRecord&, const reward::RewardPosterior&)> on_round;
  /// Serializes posterior access with concurrent readers (e.g. the service).
  std::mutex* posterior_mutex = nullptr;
};

struct ActiveLoopResult {
  std::vector<LabeledQuery> labels;
  std::vector<double> accuracy;  // per round, starting with round 0
  std::vector<RoundRecord> rounds;
};

/// Label initial random pairs, train, then per round select by the method,
/// label, and train again; held-out accuracy is recorded after every
/// training step. Labels are persisted as soon as they are obtained.
ActiveLoopResult run_active_loop(const OfflineDataset& ds, PairPool& pool,
                                 reward::RewardPosterior& post, labeling::Labeler& labeler,
                                 const ActiveLoopConfig& cfg);

}  // namespace oprl::acquisition
