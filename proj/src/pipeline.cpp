#include "oprl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "oprl/errors.hpp"

namespace oprl::pipeline {

namespace {

constexpr std::uint64_t kSnippetStream = 0x736e6970ULL;
constexpr std::uint64_t kPoolStream = 0x706f6f6cULL;
constexpr std::uint64_t kHeldOutStream = 0x686f6c64ULL;
constexpr std::uint64_t kPosteriorStream = 0x706f7374ULL;
constexpr std::uint64_t kOracleStream = 0x6f726163ULL;
constexpr std::uint64_t kLoopStream = 0x6c6f6f70ULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;

const char* kBehaviorNames[] = {"balance", "windmill-cw", "windmill-ccw"};

}  // namespace

std::vector<std::uint64_t> run_seeds(const config::RunConfig& cfg) {
  const std::uint64_t base = cfg.u64("seed");
  const std::size_t n = cfg.count("seeds");
  if (n == 0) throw InvalidConfig("seeds must be positive");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(base + i);
  return out;
}

std::uint64_t eval_seed(const config::RunConfig& cfg) {
  return derive_seed(cfg.u64("seed"), kEvalStream);
}

OfflineDataset generate_dataset(const config::RunConfig& cfg) {
  return envs::generate_offline_dataset(cfg.env(), envs::parse_behavior(cfg.get("behavior")),
                                        cfg.count("steps"), cfg.count("episode-len"),
                                        cfg.u64("seed"));
}

OfflineDataset acquire_dataset(const config::RunConfig& cfg) {
  if (cfg.is_empty("data")) return generate_dataset(cfg);
  OfflineDataset ds = load_dataset(cfg.get("data"));
  if (ds.env != cfg.env()) {
    throw InvalidConfig("dataset is for " + env_name(ds.env) + ", config says " +
                        cfg.get("env"));
  }
  return ds;
}

envs::TaskSpec task_spec(const config::RunConfig& cfg) {
  return envs::make_task(cfg.env(), cfg.get("task"));
}

rl::AwrConfig awr_config(const config::RunConfig& cfg, std::uint64_t seed) {
  rl::AwrConfig c;
  c.gamma = cfg.real("gamma");
  c.beta = cfg.real("awr-beta");
  c.weight_cap = cfg.real("weight-cap");
  c.value_iters = cfg.count("value-iters");
  c.policy_iters = cfg.count("policy-iters");
  c.batch_size = cfg.count("awr-batch");
  c.hidden_sizes = cfg.counts("policy-hidden");
  c.sigma = cfg.real("sigma");
  c.seed = seed;
  c.validate();
  return c;
}

reward::RewardConfig reward_config(const config::RunConfig& cfg) {
  reward::RewardConfig c;
  c.epochs_initial = cfg.count("epochs-initial");
  c.epochs_per_round = cfg.count("epochs-per-round");
  c.batch_size = cfg.count("reward-batch");
  c.learning_rate = cfg.real("reward-lr");
  c.bt_beta = cfg.real("bt-beta");
  c.validate();
  return c;
}

acquisition::QuerySchedule schedule(const config::RunConfig& cfg) {
  acquisition::QuerySchedule s;
  s.initial_queries = cfg.count("initial");
  s.queries_per_round = cfg.count("per-round");
  s.rounds = cfg.count("rounds");
  if (const std::size_t pre = cfg.count("precollect"); pre > 0) s.initial_queries = pre;
  s.validate();
  return s;
}

nn::NetworkSpec reward_network_spec(const config::RunConfig& cfg) {
  nn::NetworkSpec spec;
  spec.input_dim = obs_dim(cfg.env());
  spec.hidden_sizes = cfg.counts("reward-hidden");
  spec.output_dim = 1;
  if (reward::parse_posterior_kind(cfg.get("posterior")) == reward::PosteriorKind::dropout) {
    if (spec.hidden_sizes.empty()) throw InvalidConfig("dropout posterior needs a hidden layer");
    spec.dropout_layer = spec.hidden_sizes.size() - 1;
    spec.dropout_rate = cfg.real("dropout-rate");
  }
  spec.validate();
  return spec;
}

reward::RewardPosterior make_posterior(const config::RunConfig& cfg, std::uint64_t seed) {
  const auto kind = reward::parse_posterior_kind(cfg.get("posterior"));
  const std::size_t samples = kind == reward::PosteriorKind::ensemble
                                  ? cfg.count("ensemble-size")
                                  : cfg.count("dropout-passes");
  return reward::RewardPosterior::create(kind, samples, reward_network_spec(cfg),
                                         derive_seed(seed, kPosteriorStream), cfg.env());
}

QuerySetup prepare_queries(const OfflineDataset& ds, const config::RunConfig& cfg,
                           std::uint64_t seed) {
  QuerySetup s{.snippets = extract_snippets(ds, cfg.count("snippet-len"), cfg.count("snippets"),
                                            derive_seed(seed, kSnippetStream)),
               .pool = {},
               .heldout = {},
               .posterior = make_posterior(cfg, seed)};
  s.pool = build_pair_pool(s.snippets, cfg.count("pool-pairs"), cfg.real("heldout-fraction"),
                           derive_seed(seed, kPoolStream));
  const std::string task = cfg.get("label-task");
  if (ds.has_gt(task)) {
    Rng rng(derive_seed(seed, kHeldOutStream));
    for (std::size_t id : s.pool.ids_with(PairStatus::held_out)) {
      s.heldout.pair_ids.push_back(id);
      s.heldout.pairs.push_back(s.pool[id]);
      s.heldout.labels.push_back(labeling::oracle_label(s.pool[id], ds, task, rng));
    }
  }
  return s;
}

std::unique_ptr<labeling::OracleLabeler> make_oracle(const OfflineDataset& ds,
                                                     const config::RunConfig& cfg,
                                                     std::uint64_t seed) {
  return std::make_unique<labeling::OracleLabeler>(ds, cfg.get("label-task"),
                                                   derive_seed(seed, kOracleStream),
                                                   cfg.optional_real("oracle-noise-beta"));
}

acquisition::ActiveLoopResult learn_reward(const OfflineDataset& ds, const config::RunConfig& cfg,
                                           std::uint64_t seed, QuerySetup& setup,
                                           labeling::Labeler& labeler, const LoopOptions& opts) {
  acquisition::ActiveLoopConfig ac;
  ac.method = acquisition::parse_method(cfg.get("method"));
  ac.schedule = schedule(cfg);
  ac.reward = reward_config(cfg);
  ac.scan_budget = cfg.count("scan-budget");
  ac.seed = derive_seed(seed, kLoopStream);
  ac.heldout = setup.heldout;
  ac.on_round = opts.on_round;
  ac.posterior_mutex = opts.posterior_mutex;
  if (!cfg.is_empty("labels")) ac.resume = load_labels(cfg.get("labels"));
  if (!opts.out.empty()) {
    std::filesystem::create_directories(opts.out);
    ac.label_file = opts.out / "labels.jsonl";
    ac.run_log = opts.out / "rounds.jsonl";
    std::filesystem::remove(ac.label_file);
  }
  auto result = acquisition::run_active_loop(ds, setup.pool, setup.posterior, labeler, ac);
  if (!opts.out.empty()) {
    std::unique_lock<std::mutex> lock;
    if (opts.posterior_mutex) lock = std::unique_lock(*opts.posterior_mutex);
    reward::save_posterior(setup.posterior, opts.out / "reward");
  }
  return result;
}

rl::RewardSelector selector_from(const std::string& name, const OfflineDataset& ds,
                                 const std::string& task) {
  if (name == "gt") return rl::RewardSelector::gt(task);
  if (name == "predicted") return rl::RewardSelector::predicted();
  if (name == "zero") return rl::RewardSelector::zero();
  if (name == "avg") return rl::RewardSelector::constant_value(rl::dataset_mean_reward(ds, task));
  if (name == "random") return rl::RewardSelector::random();
  throw InvalidConfig("unknown selector: " + name);
}

rl::PolicyArtifact train_policy(const OfflineDataset& ds, const config::RunConfig& cfg,
                                std::uint64_t seed, const std::string& selector,
                                const reward::RewardPosterior* posterior) {
  const rl::AwrConfig ac = awr_config(cfg, seed);
  const auto sel = selector_from(selector, ds, cfg.get("task"));
  if (sel.kind == rl::SelectorKind::predicted && posterior) {
    OfflineDataset relabeled = ds;
    reward::relabel_dataset(*posterior, relabeled);
    return rl::run_awr(relabeled, sel, ac);
  }
  return rl::run_awr(ds, sel, ac);
}

metrics::EvalSummary evaluate(const config::RunConfig& cfg, const rl::PolicyArtifact& art) {
  return metrics::evaluate_policy(cfg.env(), task_spec(cfg), art, cfg.count("eval-episodes"),
                                  eval_seed(cfg), cfg.count("eval-len"));
}

std::vector<BehaviorCounts> cartpole_behaviors(const std::vector<Trajectory>& trajs) {
  std::vector<BehaviorCounts> out;
  for (const char* name : kBehaviorNames) {
    BehaviorCounts c;
    c.behavior = name;
    const auto spec = metrics::parse_behavior_spec(name);
    for (const auto& t : trajs) {
      if (t.length() != metrics::kBehaviorEpisodeLen) continue;
      c.per_episode.push_back(static_cast<double>(metrics::behavior_steps(t, spec)));
    }
    if (c.per_episode.empty()) throw InvalidInput("no full-length episodes to count behaviors on");
    c.mean = metrics::mean(c.per_episode);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<BehaviorCounts> dataset_behaviors(const OfflineDataset& ds) {
  if (ds.env != EnvId::cartpole) throw InvalidConfig("behavior counts are defined for cartpole");
  return cartpole_behaviors(ds.trajectories);
}

AuditReport audit(const OfflineDataset& ds, const config::RunConfig& cfg) {
  const std::string task = cfg.get("task");
  AuditReport r;
  for (const char* name : {"gt", "avg", "zero", "random"}) {
    ConditionScores c;
    c.name = name;
    for (std::uint64_t seed : run_seeds(cfg)) {
      const auto art = train_policy(ds, cfg, seed, name);
      c.per_seed.push_back(evaluate(cfg, art).mean);
    }
    c.iqm = metrics::iqm(c.per_seed);
    r.conditions.push_back(std::move(c));
  }
  r.row.task = env_name(cfg.env()) + "/" + task;
  r.row.gt = r.conditions[0].iqm;
  r.row.avg = r.conditions[1].iqm;
  r.row.zero = r.conditions[2].iqm;
  r.row.random = r.conditions[3].iqm;
  r.row.seeds = run_seeds(cfg);
  r.row.degradation_relative = metrics::degradation_pct(
      r.row.gt, r.row.avg, r.row.zero, r.row.random, metrics::DegradationVariant::relative);
  try {
    r.row.degradation_abs_gt = metrics::degradation_pct(
        r.row.gt, r.row.avg, r.row.zero, r.row.random, metrics::DegradationVariant::abs_gt);
  } catch (const UndefinedMetric&) {
    r.row.degradation_abs_gt = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

nlohmann::json audit_to_json(const AuditReport& r) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : r.conditions) {
    conds.push_back({{"condition", c.name}, {"per_seed", c.per_seed}, {"iqm", c.iqm}});
  }
  nlohmann::json abs_gt = std::isnan(r.row.degradation_abs_gt)
                              ? nlohmann::json(nullptr)
                              : nlohmann::json(r.row.degradation_abs_gt);
  return {{"task", r.row.task},
          {"gt", r.row.gt},
          {"avg", r.row.avg},
          {"zero", r.row.zero},
          {"random", r.row.random},
          {"seeds", r.row.seeds},
          {"aggregate", "iqm"},
          {"degradation", {{"relative", r.row.degradation_relative}, {"abs_gt", abs_gt}}},
          {"conditions", conds}};
}

OprlRun run_oprl(const OfflineDataset& ds, const config::RunConfig& cfg, std::uint64_t seed) {
  OprlRun run;
  run.seed = seed;
  QuerySetup setup = prepare_queries(ds, cfg, seed);
  auto oracle = make_oracle(ds, cfg, seed);
  run.loop = learn_reward(ds, cfg, seed, setup, *oracle);
  run.policy = train_policy(ds, cfg, seed, "predicted", &setup.posterior);
  run.eval = evaluate(cfg, run.policy);
  return run;
}

Anchors score_anchors(const OfflineDataset& ds, const config::RunConfig& cfg) {
  std::vector<double> gt, rnd;
  for (std::uint64_t seed : run_seeds(cfg)) {
    gt.push_back(evaluate(cfg, train_policy(ds, cfg, seed, "gt")).mean);
    rnd.push_back(evaluate(cfg, train_policy(ds, cfg, seed, "random")).mean);
  }
  return {metrics::mean(gt), metrics::mean(rnd)};
}

SweepReport sweep(const OfflineDataset& ds, const config::RunConfig& cfg) {
  static const std::vector<std::string> params{"initial", "per-round", "ensemble-size",
                                               "dropout-passes"};
  SweepReport r;
  r.param = cfg.get("param");
  if (std::find(params.begin(), params.end(), r.param) == params.end()) {
    throw InvalidConfig("sweep param must be one of initial, per-round, ensemble-size, dropout-passes");
  }
  const auto values = cfg.list("values");
  if (values.empty()) throw InvalidConfig("sweep needs values");
  r.anchors = score_anchors(ds, cfg);
  for (const auto& v : values) {
    config::RunConfig c = cfg;
    c.set(r.param, v);
    SweepRow row;
    row.value = v;
    for (std::uint64_t seed : run_seeds(c)) {
      const OprlRun run = run_oprl(ds, c, seed);
      if (!run.loop.accuracy.empty()) row.final_accuracy.push_back(run.loop.accuracy.back());
      row.normalized.push_back(
          metrics::normalized_score(run.eval.mean, r.anchors.gt, r.anchors.random));
    }
    row.mean_accuracy = row.final_accuracy.empty() ? 0.0 : metrics::mean(row.final_accuracy);
    row.iqm_normalized = metrics::iqm(row.normalized);
    r.rows.push_back(std::move(row));
  }
  return r;
}

nlohmann::json sweep_to_json(const SweepReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"value", row.value},
                    {"final_accuracy", row.final_accuracy},
                    {"normalized", row.normalized},
                    {"mean_accuracy", row.mean_accuracy},
                    {"iqm_normalized", row.iqm_normalized}});
  }
  return {{"param", r.param},
          {"anchors", {{"gt", r.anchors.gt}, {"random", r.anchors.random}}},
          {"rows", rows}};
}

std::string format_sweep_table(const SweepReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %16s %18s\n", r.param.c_str(), "HELD-OUT ACC",
                "NORMALIZED (IQM)");
  out << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-16s %16.3f %18.1f\n", row.value.c_str(), row.mean_accuracy,
                  row.iqm_normalized);
    out << buf;
  }
  return out.str();
}

}  // namespace oprl::pipeline
