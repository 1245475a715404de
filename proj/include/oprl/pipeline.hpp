#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "oprl/acquisition.hpp"
#include "oprl/config.hpp"
#include "oprl/dataset.hpp"
#include "oprl/envs.hpp"
#include "oprl/labeler.hpp"
#include "oprl/metrics.hpp"
#include "oprl/offline_rl.hpp"
#include "oprl/reward_model.hpp"

// Stages wired from a resolved RunConfig. Shared by the CLI, the labeling
// service and the acceptance suite.
namespace oprl::pipeline {

/// seed, seed + 1, ... (`seeds` of them).
std::vector<std::uint64_t> run_seeds(const config::RunConfig& cfg);
/// Evaluation rollouts use one stream for every condition and training seed.
std::uint64_t eval_seed(const config::RunConfig& cfg);

/// Loads `data` when set, otherwise generates with `seed`.
OfflineDataset acquire_dataset(const config::RunConfig& cfg);
OfflineDataset generate_dataset(const config::RunConfig& cfg);

envs::TaskSpec task_spec(const config::RunConfig& cfg);
rl::AwrConfig awr_config(const config::RunConfig& cfg, std::uint64_t seed);
reward::RewardConfig reward_config(const config::RunConfig& cfg);
acquisition::QuerySchedule schedule(const config::RunConfig& cfg);
nn::NetworkSpec reward_network_spec(const config::RunConfig& cfg);
reward::RewardPosterior make_posterior(const config::RunConfig& cfg, std::uint64_t seed);

/// Candidate pool, held-out oracle labels and a fresh posterior for one run.
struct QuerySetup {
  std::vector<SnippetRef> snippets;
  PairPool pool;
  metrics::HeldOutSet heldout;
  reward::RewardPosterior posterior;
};
QuerySetup prepare_queries(const OfflineDataset& ds, const config::RunConfig& cfg,
                           std::uint64_t seed);

std::unique_ptr<labeling::OracleLabeler> make_oracle(const OfflineDataset& ds,
                                                     const config::RunConfig& cfg,
                                                     std::uint64_t seed);

struct LoopOptions {
  /// labels.jsonl, rounds.jsonl and reward/ are written here when set.
  std::filesystem::path out;
  std::function<void(const acquisition::RoundRecord&, const reward::RewardPosterior&)> on_round;
  std::mutex* posterior_mutex = nullptr;
};

acquisition::ActiveLoopResult learn_reward(const OfflineDataset& ds, const config::RunConfig& cfg,
                                           std::uint64_t seed, QuerySetup& setup,
                                           labeling::Labeler& labeler,
                                           const LoopOptions& opts = {});

/// Selector named by the `selector` key; `avg` uses the dataset mean reward.
rl::RewardSelector selector_from(const std::string& name, const OfflineDataset& ds,
                                 const std::string& task);

/// AWR with the configured selector; `predicted` relabels a copy of the
/// dataset with `posterior` first.
rl::PolicyArtifact train_policy(const OfflineDataset& ds, const config::RunConfig& cfg,
                                std::uint64_t seed, const std::string& selector,
                                const reward::RewardPosterior* posterior = nullptr);

metrics::EvalSummary evaluate(const config::RunConfig& cfg, const rl::PolicyArtifact& art);

/// Cartpole behavior counts per episode for every behavior.
struct BehaviorCounts {
  std::string behavior;
  std::vector<double> per_episode;
  double mean = 0.0;
};
std::vector<BehaviorCounts> cartpole_behaviors(const std::vector<Trajectory>& trajs);
/// Mean counts over the dataset's full-length episodes.
std::vector<BehaviorCounts> dataset_behaviors(const OfflineDataset& ds);

struct ConditionScores {
  std::string name;
  std::vector<double> per_seed;  // mean episode return per training seed
  double iqm = 0.0;
};

struct AuditReport {
  metrics::AuditRow row;
  std::vector<ConditionScores> conditions;  // gt, avg, zero, random
};
/// GT / AVG / ZERO / RANDOM conditions over the configured seeds.
AuditReport audit(const OfflineDataset& ds, const config::RunConfig& cfg);
nlohmann::json audit_to_json(const AuditReport& r);

struct OprlRun {
  std::uint64_t seed = 0;
  acquisition::ActiveLoopResult loop;
  rl::PolicyArtifact policy;
  metrics::EvalSummary eval;
};
/// Oracle-labeled active reward learning, relabel, AWR, evaluation.
OprlRun run_oprl(const OfflineDataset& ds, const config::RunConfig& cfg, std::uint64_t seed);

struct Anchors {
  double gt = 0.0;
  double random = 0.0;
};
/// Mean evaluation return of GT-reward and random policies over the seeds.
Anchors score_anchors(const OfflineDataset& ds, const config::RunConfig& cfg);

struct SweepRow {
  std::string value;
  std::vector<double> final_accuracy;
  std::vector<double> normalized;
  double mean_accuracy = 0.0;
  double iqm_normalized = 0.0;
};
struct SweepReport {
  std::string param;
  Anchors anchors;
  std::vector<SweepRow> rows;
};
SweepReport sweep(const OfflineDataset& ds, const config::RunConfig& cfg);
nlohmann::json sweep_to_json(const SweepReport& r);
std::string format_sweep_table(const SweepReport& r);

}  // namespace oprl::pipeline
