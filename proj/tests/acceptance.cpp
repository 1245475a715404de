// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 1 2 3`; `--report <file>`
// also writes the lines to a file.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "oprl/acquisition.hpp"
#include "oprl/config.hpp"
#include "oprl/metrics.hpp"
#include "oprl/offline_rl.hpp"
#include "oprl/pipeline.hpp"
#include "oprl/reward_model.hpp"
#include "oracles.hpp"

using namespace oprl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Small relu network with non-zero biases so no unit sits on its kink.
nn::Network small_net(std::size_t in, std::size_t out, std::vector<std::size_t> hidden,
                      std::uint64_t seed) {
  nn::NetworkSpec s;
  s.input_dim = in;
  s.hidden_sizes = std::move(hidden);
  s.output_dim = out;
  s.seed = seed;
  nn::Network net = nn::init_network(s);
  Rng rng(seed + 1000);
  for (std::size_t l = 0; l < s.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < net.bias(l).size(); ++i) net.bias(l)[i] = uniform(rng, -0.3, 0.3);
  }
  return net;
}

rl::AwrBatch random_batch(EnvId env, std::size_t n, Rng& rng, bool zero_reward) {
  rl::AwrBatch b;
  b.features.resize(static_cast<Eigen::Index>(obs_dim(env)), static_cast<Eigen::Index>(n));
  b.actions.resize(static_cast<Eigen::Index>(action_dim(env)), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = normal01(rng);
  for (Eigen::Index j = 0; j < b.actions.cols(); ++j) {
    if (is_maze(env)) {
      b.actions.col(j) << uniform(rng, -1, 1), uniform(rng, -1, 1);
    } else {
      b.actions(0, j) = coin(rng) ? 10.0 : -10.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    b.returns.push_back(zero_reward ? 0.0 : normal01(rng));
    b.values.push_back(zero_reward ? 0.0 : normal01(rng));
  }
  return b;
}

double fd_check(const nn::Network& net, const nn::Matrix& x, const nn::LossFn& loss) {
  const auto g = nn::gradient(net, x, loss);
  nn::Network probe = net;
  const auto f = [&](const Eigen::VectorXd& p) {
    probe.params() = p;
    return loss(nn::forward_eval(probe, x)).value;
  };
  return oracle::max_rel_error(g.grad, oracle::fd_gradient(f, net.params()));
}

// Criterion 1
Outcome formula_fidelity() {
  using metrics::DegradationVariant;
  const double umaze = metrics::degradation_pct(104.4, 56.5, 55.0, 49.5, DegradationVariant::relative);
  const double ring = metrics::degradation_pct(14.3, -41.8, -67.5, -166.2, DegradationVariant::abs_gt);
  const double q = metrics::iqm({10.0, 20.0, 90.0});
  return {std::abs(umaze - 87.3) <= 0.1 && std::abs(ring - 392.3) <= 0.1 && q == 30.0,
          fmt("degradation %.3f (87.3), |GT| variant %.3f (392.3), iqm(10,20,90) = %.17g", umaze,
              ring, q)};
}

// Criterion 2
Outcome bc_reduction() {
  Rng rng(20);
  double worst_loss = 0.0, worst_grad = 0.0;
  for (EnvId env : {EnvId::open_maze, EnvId::cartpole}) {
    const auto head = rl::PolicyHead::for_env(env, 0.2);
    const nn::Network pi = small_net(obs_dim(env), head.output_dim(action_dim(env)), {32, 32}, 7);
    for (int trial = 0; trial < 100; ++trial) {
      const auto b = random_batch(env, 64, rng, true);
      const auto awr = nn::gradient(pi, b.features, rl::awr_policy_loss(b, head, 1.0, 20.0));
      const auto bc = nn::gradient(pi, b.features, rl::bc_loss(b, head));
      worst_loss = std::max(worst_loss, std::abs(awr.loss - bc.loss));
      worst_grad = std::max(worst_grad, (awr.grad - bc.grad).cwiseAbs().maxCoeff());
    }
  }
  return {worst_loss <= 1e-8 && worst_grad <= 1e-8,
          fmt("100 batches per head: max |dloss| %.2e, max |dgrad| %.2e (<= 1e-8)", worst_loss,
              worst_grad)};
}

// Criterion 3
Outcome gradient_integrity() {
  Rng rng(30);
  // Bradley-Terry loss over snippet pairs.
  const auto ds = envs::generate_offline_dataset(EnvId::open_maze, envs::Behavior::random_waypoints,
                                                 3000, 300, 31);
  const auto snips = extract_snippets(ds, 5, 12, 32);
  std::vector<LabeledQuery> labels;
  for (std::size_t i = 0; i < 6; ++i) {
    LabeledQuery q;
    q.pair_id = i;
    q.a = snips[2 * i];
    q.b = snips[2 * i + 1];
    q.label = snippet_gt_return(ds, q.b, "goal-reach") > snippet_gt_return(ds, q.a, "goal-reach");
    labels.push_back(q);
  }
  const nn::Network rnet = small_net(4, 1, {12, 8}, 33);
  nn::Matrix feats(4, 60);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    feats.middleCols(static_cast<Eigen::Index>(10 * i), 5) = reward::snippet_features(ds, labels[i].a);
    feats.middleCols(static_cast<Eigen::Index>(10 * i + 5), 5) = reward::snippet_features(ds, labels[i].b);
  }
  const nn::LossFn bt = [&](const nn::Matrix& out) {
    std::vector<double> ra, rb;
    std::vector<int> y;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      ra.push_back(out.middleCols(static_cast<Eigen::Index>(10 * i), 5).sum());
      rb.push_back(out.middleCols(static_cast<Eigen::Index>(10 * i + 5), 5).sum());
      y.push_back(labels[i].label);
    }
    const auto b = reward::bt_loss(ra, rb, y, 1.0);
    nn::LossEval e{b.value, nn::Matrix(1, out.cols())};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      e.d_output.middleCols(static_cast<Eigen::Index>(10 * i), 5).setConstant(b.d_return_a[i]);
      e.d_output.middleCols(static_cast<Eigen::Index>(10 * i + 5), 5).setConstant(b.d_return_b[i]);
    }
    return e;
  };
  const double e_bt = fd_check(rnet, feats, bt);

  // Value regression.
  const nn::Network vnet = small_net(4, 1, {12, 8}, 34);
  nn::Matrix x(4, 20);
  nn::Vector y(20);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal01(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = normal01(rng);
  const double e_value = fd_check(vnet, x, rl::value_regression_loss(y));

  // AWR policy loss, both heads.
  double e_awr = 0.0;
  std::size_t max_params = std::max(rnet.param_count(), vnet.param_count());
  for (EnvId env : {EnvId::open_maze, EnvId::cartpole}) {
    const auto head = rl::PolicyHead::for_env(env, 0.2);
    const nn::Network pi = small_net(obs_dim(env), head.output_dim(action_dim(env)), {12, 8}, 35);
    max_params = std::max(max_params, pi.param_count());
    const auto b = random_batch(env, 16, rng, false);
    e_awr = std::max(e_awr, fd_check(pi, b.features, rl::awr_policy_loss(b, head, 0.8, 20.0)));
  }
  return {e_bt <= 1e-4 && e_value <= 1e-4 && e_awr <= 1e-4 && max_params <= 500,
          fmt("max rel. error: bradley-terry %.2e, value %.2e, awr %.2e (<= 1e-4); %zu params max",
              e_bt, e_value, e_awr, max_params)};
}

// Criterion 4
double votes_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double k = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) k += b[m] > a[m] ? 1.0 : (b[m] == a[m] ? 0.5 : 0.0);
  const double p = k / static_cast<double>(a.size());
  return p * (1.0 - p);
}

double ig_oracle(const std::vector<double>& a, const std::vector<double>& b, double beta) {
  double pbar = 0.0, ebar = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    const double p = oracle::bt(a[m], b[m], beta);
    pbar += p / static_cast<double>(a.size());
    ebar += oracle::entropy(p) / static_cast<double>(a.size());
  }
  return std::max(oracle::entropy(pbar) - ebar, 0.0);
}

Outcome acquisition_invariants() {
  using namespace acquisition;
  Rng rng(40);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(7), b(7);
    const double spread = uniform(rng, 0.0, 4.0);
    for (std::size_t m = 0; m < 7; ++m) {
      a[m] = spread * normal01(rng);
      b[m] = spread * normal01(rng);
    }
    if (trial % 10 == 0) {
      // Every member sees the same return gap: all probabilities coincide.
      const double gap = normal01(rng);
      for (std::size_t m = 0; m < 7; ++m) b[m] = a[m] + gap;
    }
    const double beta = uniform(rng, 0.2, 2.0);
    const double d = disagreement_score(a, b), ig = infogain_score(a, b, beta);
    double pbar = 0.0;
    for (std::size_t m = 0; m < 7; ++m) pbar += oracle::bt(a[m], b[m], beta) / 7.0;
    bool ok = d >= 0.0 && d <= 0.25 && ig >= 0.0 && ig <= oracle::entropy(pbar) + 1e-9;
    ok = ok && d == disagreement_score(b, a) && std::abs(ig - infogain_score(b, a, beta)) <= 1e-12;
    if (trial % 10 == 0) ok = ok && ig <= 1e-12;
    violations += !ok;
  }

  // select_query against an exhaustive scan over a 200-pair pool.
  const auto ds = envs::generate_offline_dataset(EnvId::open_maze, envs::Behavior::random_waypoints,
                                                 3000, 300, 41);
  std::size_t mismatches = 0;
  for (Method method : {Method::ensemble_disagreement, Method::ensemble_infogain,
                        Method::dropout_disagreement, Method::dropout_infogain}) {
    const bool dropout = method == Method::dropout_disagreement || method == Method::dropout_infogain;
    nn::NetworkSpec spec;
    spec.input_dim = 4;
    spec.hidden_sizes = {16, 16};
    spec.output_dim = 1;
    if (dropout) {
      spec.dropout_layer = 1;
      spec.dropout_rate = 0.5;
    }
    const auto post = reward::RewardPosterior::create(
        dropout ? reward::PosteriorKind::dropout : reward::PosteriorKind::ensemble, 7, spec, 42, ds.env);
    const PairPool pool = build_pair_pool(extract_snippets(ds, 15, 400, 43), 200, 0.0, 43);
    const auto masks = post.pass_masks();
    auto samples = [&](const SnippetRef& s) {
      std::vector<double> out;
      for (std::size_t m = 0; m < 7; ++m) {
        if (dropout) {
          out.push_back(nn::forward_with_mask(post.members()[0], reward::snippet_features(ds, s), masks[m]).sum());
          continue;
        }
        double r = 0.0;
        for (std::size_t t = s.start; t < s.start + s.length; ++t) {
          const Eigen::VectorXd f = envs::observe(ds.env, ds.trajectories[s.traj].state(t));
          r += oracle::mlp_by_hand(spec, post.members()[m].params(), {f.data(), f.data() + f.size()})[0];
        }
        out.push_back(r);
      }
      return out;
    };
    std::size_t best = SIZE_MAX;
    double best_score = -1.0;
    for (std::size_t id = 0; id < pool.size(); ++id) {
      const auto sa = samples(pool[id].a), sb = samples(pool[id].b);
      const bool dis = method == Method::ensemble_disagreement || method == Method::dropout_disagreement;
      const double sc = dis ? votes_oracle(sa, sb) : ig_oracle(sa, sb, 1.0);
      if (sc > best_score + 1e-12) {
        best_score = sc;
        best = id;
      }
    }
    Rng sel_rng(44);
    mismatches += select_query(pool, post, method, ds, sel_rng, 1.0).pair_id != best;
  }
  return {violations == 0 && mismatches == 0,
          fmt("%zu of 1000 sample pairs violate bounds/symmetry/zero-gain; %zu of 4 methods "
              "disagree with the exhaustive scan",
              violations, mismatches)};
}

// Criterion 5
Outcome masking_audit() {
  const auto cfg = config::merge({}, {{"env", "open-maze"}, {"task", "goal-reach"}});
  const auto ds = pipeline::acquire_dataset(cfg);
  const auto r = pipeline::audit(ds, cfg);
  return {r.row.degradation_relative >= 20.0,
          fmt("GT %.1f AVG %.1f ZERO %.1f RANDOM %.1f (IQM over %zu seeds): degradation %.1f%% "
              "(>= 20%%)",
              r.row.gt, r.row.avg, r.row.zero, r.row.random, r.row.seeds.size(),
              r.row.degradation_relative)};
}

// Criterion 6
Outcome maze_end_to_end() {
  const auto cfg = config::merge({}, {{"env", "open-maze"}, {"task", "goal-reach"}});
  const auto ds = pipeline::acquire_dataset(cfg);
  const auto anchors = pipeline::score_anchors(ds, cfg);
  std::map<std::string, std::vector<double>> norm, acc0, acc10;
  for (const std::string method : {"ensemdis", "random"}) {
    auto c = cfg;
    c.set("method", method);
    for (std::uint64_t seed : pipeline::run_seeds(c)) {
      const auto run = pipeline::run_oprl(ds, c, seed);
      norm[method].push_back(metrics::normalized_score(run.eval.mean, anchors.gt, anchors.random));
      acc0[method].push_back(run.loop.accuracy.front());
      acc10[method].push_back(run.loop.accuracy.back());
    }
  }
  const double score = metrics::iqm(norm["ensemdis"]);
  const double gain = metrics::mean(acc10["ensemdis"]) - metrics::mean(acc0["ensemdis"]);
  const double ens = metrics::mean(acc10["ensemdis"]), rnd = metrics::mean(acc10["random"]);
  return {score >= 70.0 && gain >= 0.05 && ens >= rnd - 0.02,
          fmt("normalized IQM %.1f (>= 70); accuracy %.3f -> %.3f (gain %.3f >= 0.05); "
              "ensemdis %.3f vs random %.3f (>= random - 0.02)",
              score, metrics::mean(acc0["ensemdis"]), ens, gain, ens, rnd)};
}

// Criterion 7
Outcome cartpole_behaviors() {
  std::string detail;
  bool pass = true;
  for (const std::string task : {"windmill-ccw", "balance"}) {
    const auto cfg = config::merge({}, {{"env", "cartpole"}, {"task", task}});
    const auto ds = pipeline::acquire_dataset(cfg);
    double baseline = 0.0;
    for (const auto& b : pipeline::dataset_behaviors(ds)) {
      if (b.behavior == task) baseline = b.mean;
    }
    std::vector<double> steps;
    for (std::uint64_t seed : pipeline::run_seeds(cfg)) {
      const auto run = pipeline::run_oprl(ds, cfg, seed);
      const auto trajs = metrics::rollout_policy(cfg.env(), run.policy, cfg.count("eval-episodes"),
                                                 metrics::kBehaviorEpisodeLen, pipeline::eval_seed(cfg));
      for (const auto& b : pipeline::cartpole_behaviors(trajs)) {
        if (b.behavior == task) steps.push_back(b.mean);
      }
    }
    const double policy = metrics::mean(steps);
    pass = pass && policy >= 2.0 * baseline;
    std::string per_seed;
    for (double s : steps) per_seed += fmt("%s%.1f", per_seed.empty() ? "" : ", ", s);
    detail += fmt("%s%s %.1f steps (seeds: %s) vs data %.1f = %.2fx", detail.empty() ? "" : "; ",
                  task.c_str(), policy, per_seed.c_str(), baseline, policy / baseline);
  }
  return {pass, detail + " (>= 2x)"};
}

// Criterion 8
Outcome orbit_repurposing() {
  const auto cfg = config::merge({}, {{"env", "open-maze"}, {"task", "ccw-orbit"}});
  const auto ds = pipeline::acquire_dataset(cfg);
  const auto task = pipeline::task_spec(cfg);
  std::vector<double> data_returns, policy_returns;
  for (const auto& t : ds.trajectories) data_returns.push_back(metrics::trajectory_return(t, task));
  for (std::uint64_t seed : pipeline::run_seeds(cfg)) {
    policy_returns.push_back(pipeline::run_oprl(ds, cfg, seed).eval.mean);
  }
  const double baseline = metrics::mean(data_returns), policy = metrics::mean(policy_returns);
  return {policy > 0.0 && policy >= 3.0 * baseline,
          fmt("angular progress per %s-step episode: policy %.3f rad vs data %.3f rad = %.2fx (>= 3x)",
              cfg.get("eval-len").c_str(), policy, baseline, policy / baseline)};
}

// Criterion 9
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Outcome reproducibility() {
  const fs::path work = fs::temp_directory_path() / "oprl_acceptance_repro";
  fs::remove_all(work);
  const std::string cli = OPRL_CLI_PATH;
  std::size_t compared = 0;
  std::vector<std::string> diffs;
  auto stage = [&](const std::string& name, const std::string& args) {
    const fs::path a = work / "first" / name, b = work / "second" / name;
    const std::string run1 = cli + " " + args + " --out " + a.string() + " > /dev/null";
    const std::string run2 = cli + " --config " + (a / "manifest.cfg").string() + " " +
                             args.substr(0, args.find(' ')) + " --out " + b.string() + " > /dev/null";
    if (std::system(run1.c_str()) != 0 || std::system(run2.c_str()) != 0) {
      diffs.push_back(name + " (command failed)");
      return;
    }
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), a);
      const std::string fname = rel.filename().string();
      if (!rel.has_parent_path() && fname.rfind("manifest.", 0) == 0) continue;
      if (fname == "rounds.jsonl") continue;
      ++compared;
      if (slurp(e.path()) != slurp(b / rel)) diffs.push_back(name + "/" + rel.string());
    }
  };
  const std::string data = (work / "first" / "data" / "dataset.jsonl").string();
  const std::string reward_opts =
      " --initial 3 --per-round 2 --rounds 3 --ensemble-size 3 --reward-hidden 16,16"
      " --snippet-len 10 --snippets 300 --pool-pairs 400";
  const std::string awr_opts = " --value-iters 100 --policy-iters 100 --awr-batch 64 --policy-hidden 16,16";
  stage("data", "gen-data --env open-maze --steps 6000 --seed 3");
  stage("reward", "learn-reward --env open-maze --data " + data + reward_opts);
  stage("policy", "train-policy --env open-maze --data " + data + " --reward " +
                      (work / "first" / "reward" / "reward").string() + awr_opts);
  stage("eval", "evaluate --env open-maze --eval-episodes 4 --policy " +
                    (work / "first" / "policy" / "policy").string());
  std::string list;
  for (const auto& d : diffs) list += " " + d;
  if (diffs.empty()) fs::remove_all(work);
  return {diffs.empty() && compared > 0,
          fmt("%zu artifacts (labels, reward checkpoints, policy, reports) compared after manifest "
              "reruns; differing:%s",
              compared, diffs.empty() ? " none" : list.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"formula fidelity", formula_fidelity},
      {"BC reduction", bc_reduction},
      {"gradient integrity", gradient_integrity},
      {"acquisition invariants", acquisition_invariants},
      {"masking audit", masking_audit},
      {"maze end-to-end", maze_end_to_end},
      {"cartpole behaviors", cartpole_behaviors},
      {"orbit repurposing", orbit_repurposing},
      {"reproducibility", reproducibility}};
  std::set<std::size_t> selected;
  std::ofstream report;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--report" && i + 1 < argc) {
      report.open(argv[++i]);
      continue;
    }
    selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));
  }

  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " criterion " +
                             std::to_string(i + 1) + " (" + criteria[i].first + "): " + o.detail +
                             fmt(" [%.1fs]", secs);
    std::cout << line << std::endl;
    if (report.is_open()) report << line << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
