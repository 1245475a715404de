#include "oprl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "oprl/errors.hpp"

namespace oprl::metrics {

std::string variant_name(DegradationVariant v) {
  return v == DegradationVariant::relative ? "relative" : "abs_gt";
}

double degradation_pct(double gt, double avg, double zero, double random,
                       DegradationVariant variant) {
  const double best = std::max({avg, zero, random});
  const double numerator = std::max(gt - best, 0.0);
  if (numerator == 0.0) return 0.0;
  if (variant == DegradationVariant::relative) {
    return numerator / (gt - std::min({avg, zero, random})) * 100.0;
  }
  if (gt == 0.0) throw UndefinedMetric("abs_gt degradation is undefined for GT = 0");
  return numerator / std::abs(gt) * 100.0;
}

double normalized_score(double raw, double gt_score, double random_score) {
  if (gt_score == random_score) throw UndefinedMetric("normalization anchors coincide");
  return 100.0 * (raw - random_score) / (gt_score - random_score);
}

double iqm(std::vector<double> values) {
  if (values.empty()) throw InvalidInput("iqm of an empty list");
  std::sort(values.begin(), values.end());
  // Masses in units of 1/(4n): value i spans [4i, 4i + 4], the middle half
  // spans [n, 3n]. Integer weights keep small cases exact.
  const long n = static_cast<long>(values.size());
  double acc = 0.0;
  long mass = 0;
  for (long i = 0; i < n; ++i) {
    const long w = std::min(4 * i + 4, 3 * n) - std::max(4 * i, n);
    if (w > 0) {
      acc += static_cast<double>(w) * values[static_cast<std::size_t>(i)];
      mass += w;
    }
  }
  return acc / static_cast<double>(mass);
}

double mean(const std::vector<double>& values) {
  if (values.empty()) throw InvalidInput("mean of an empty list");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double preference_accuracy(const reward::RewardPosterior& post, const HeldOutSet& heldout,
                           const OfflineDataset& ds) {
  if (heldout.pairs.empty()) throw InvalidConfig("held-out set is empty");
  if (heldout.labels.size() != heldout.pairs.size()) throw ShapeError("one label per held-out pair");
  std::vector<SnippetRef> snips;
  for (const auto& p : heldout.pairs) {
    snips.push_back(p.a);
    snips.push_back(p.b);
  }
  // Posterior-mean return of each snippet: mean over the M samples.
  const Eigen::RowVectorXd means = reward::return_samples(post, snips, ds).colwise().mean();
  double correct = 0.0;
  for (std::size_t i = 0; i < heldout.pairs.size(); ++i) {
    const double ra = means[static_cast<Eigen::Index>(2 * i)];
    const double rb = means[static_cast<Eigen::Index>(2 * i + 1)];
    if (ra == rb) {
      correct += 0.5;
    } else if ((rb > ra) == (heldout.labels[i] == 1)) {
      correct += 1.0;
    }
  }
  return correct / static_cast<double>(heldout.pairs.size());
}

BehaviorSpec parse_behavior_spec(const std::string& name) {
  if (name == "balance") return BehaviorSpec::balance;
  if (name == "windmill-cw") return BehaviorSpec::windmill_cw;
  if (name == "windmill-ccw") return BehaviorSpec::windmill_ccw;
  throw InvalidConfig("unknown behavior '" + name + "'");
}

std::size_t behavior_steps(const Trajectory& traj, BehaviorSpec spec) {
  if (traj.length() != kBehaviorEpisodeLen) {
    throw InvalidInput("behavior counts need a " + std::to_string(kBehaviorEpisodeLen) +
                       "-step trajectory");
  }
  std::size_t n = 0;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    const auto s = envs::to_cartpole(traj.state(t));
    switch (spec) {
      case BehaviorSpec::balance: n += envs::is_balanced(s); break;
      case BehaviorSpec::windmill_cw: n += envs::is_windmilling(s, false); break;
      case BehaviorSpec::windmill_ccw: n += envs::is_windmilling(s, true); break;
    }
  }
  return n;
}

std::vector<Trajectory> rollout_policy(EnvId env, const rl::PolicyArtifact& art,
                                       std::size_t episodes, std::size_t episode_len,
                                       std::uint64_t seed) {
  if (art.env != env) throw InvalidConfig("policy was trained on " + env_name(art.env));
  if (episode_len == 0) throw InvalidConfig("episode length must be positive");
  std::vector<Trajectory> out;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, e));
    Trajectory t;
    t.states.resize(static_cast<Eigen::Index>(state_dim(env)), static_cast<Eigen::Index>(episode_len + 1));
    t.actions.resize(static_cast<Eigen::Index>(action_dim(env)), static_cast<Eigen::Index>(episode_len));
    Eigen::VectorXd s = envs::reset_state(env, rng);
    t.states.col(0) = s;
    for (std::size_t k = 0; k < episode_len; ++k) {
      const Eigen::VectorXd a = art.act(s);
      s = envs::env_step(env, s, a);
      t.actions.col(static_cast<Eigen::Index>(k)) = a;
      t.states.col(static_cast<Eigen::Index>(k + 1)) = s;
    }
    out.push_back(std::move(t));
  }
  return out;
}

double trajectory_return(const Trajectory& traj, const envs::TaskSpec& task) {
  double sum = 0.0;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    sum += envs::gt_reward(task, traj.state(t), traj.actions.col(static_cast<Eigen::Index>(t)));
  }
  return sum;
}

EvalSummary evaluate_policy(EnvId env, const envs::TaskSpec& task, const rl::PolicyArtifact& art,
                            std::size_t episodes, std::uint64_t seed, std::size_t episode_len) {
  if (episodes == 0) throw InvalidInput("evaluation needs at least one episode");
  if (task.env != env) throw InvalidConfig("task belongs to " + env_name(task.env));
  if (episode_len == 0) episode_len = is_maze(env) ? envs::kMazeEpisodeLen : envs::kCartpoleEpisodeLen;
  EvalSummary s;
  for (const auto& t : rollout_policy(env, art, episodes, episode_len, seed)) {
    s.returns.push_back(trajectory_return(t, task));
  }
  s.mean = mean(s.returns);
  s.iqm = iqm(s.returns);
  return s;
}

std::string format_audit_table(const std::vector<AuditRow>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %10s %10s %10s %10s %14s %14s\n", "TASK", "GT", "AVG",
                "ZERO", "RANDOM", "DEGRADATION %", "DEG. |GT| %");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %10.1f %10.1f %10.1f %10.1f %14.1f %14.1f\n",
                  r.task.c_str(), r.gt, r.avg, r.zero, r.random, r.degradation_relative,
                  r.degradation_abs_gt);
    out << buf;
  }
  return out.str();
}

}  // namespace oprl::metrics
