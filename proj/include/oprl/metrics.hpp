#pragma once

#include <string>
#include <vector>

#include "oprl/dataset.hpp"
#include "oprl/envs.hpp"
#include "oprl/offline_rl.hpp"
#include "oprl/reward_model.hpp"

namespace oprl::metrics {

enum class DegradationVariant { relative, abs_gt };

std::string variant_name(DegradationVariant v);

/// relative: max(GT - max(B), 0) / (GT - min(B)) * 100
/// abs_gt:   max(GT - max(B), 0) / |GT| * 100
/// where B = {avg, zero, random}. A clamped numerator returns 0 directly.
double degradation_pct(double gt, double avg, double zero, double random,
                       DegradationVariant variant);

/// 100 * (raw - random_score) / (gt_score - random_score).
double normalized_score(double raw, double gt_score, double random_score);

/// Interquartile mean with fractional tail weights: each sorted value owns
/// 1/n of the mass and only the mass inside [0.25, 0.75] counts. For three
/// values this is (0.25 R1 + R2 + 0.25 R3) / 1.5.
double iqm(std::vector<double> values);

double mean(const std::vector<double>& values);

struct HeldOutSet {
  std::vector<std::size_t> pair_ids;
  std::vector<SnippetPair> pairs;
  std::vector<int> labels;  // oracle labels, 1 = second preferred
};

/// Fraction of pairs whose posterior-mean return order matches the label;
/// ties count one half.
double preference_accuracy(const reward::RewardPosterior& post, const HeldOutSet& heldout,
                           const OfflineDataset& ds);

enum class BehaviorSpec { balance, windmill_cw, windmill_ccw };
BehaviorSpec parse_behavior_spec(const std::string& name);

constexpr std::size_t kBehaviorEpisodeLen = 200;

/// Number of the trajectory's 200 transition states exhibiting the behavior.
std::size_t behavior_steps(const Trajectory& traj, BehaviorSpec spec);

/// Deterministic rollouts using the policy mean action.
std::vector<Trajectory> rollout_policy(EnvId env, const rl::PolicyArtifact& art,
                                       std::size_t episodes, std::size_t episode_len,
                                       std::uint64_t seed);

struct EvalSummary {
  std::vector<double> returns;  // per-episode summed gt task reward
  double mean = 0.0;
  double iqm = 0.0;
};

EvalSummary evaluate_policy(EnvId env, const envs::TaskSpec& task, const rl::PolicyArtifact& art,
                            std::size_t episodes, std::uint64_t seed,
                            std::size_t episode_len = 0);

/// Returns of arbitrary trajectories under a task (e.g. the dataset's own).
double trajectory_return(const Trajectory& traj, const envs::TaskSpec& task);

struct AuditRow {
  std::string task;
  double gt = 0.0;
  double avg = 0.0;
  double zero = 0.0;
  double random = 0.0;
  std::vector<std::uint64_t> seeds;
  double degradation_relative = 0.0;
  double degradation_abs_gt = 0.0;
};

/// Plain-text table with the GT / AVG / ZERO / RANDOM / DEGRADATION columns.
std::string format_audit_table(const std::vector<AuditRow>& rows);

}  // namespace oprl::metrics
