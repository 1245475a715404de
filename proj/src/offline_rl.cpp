#include "oprl/offline_rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "oprl/envs.hpp"
#include "oprl/errors.hpp"

namespace oprl::rl {

void AwrConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidConfig("gamma must lie in (0, 1)");
  if (!(beta > 0.0)) throw InvalidConfig("awr beta must be positive");
  if (!(weight_cap > 0.0)) throw InvalidConfig("weight cap must be positive");
  if (batch_size == 0) throw InvalidConfig("batch size must be positive");
  if (!(sigma > 0.0)) throw InvalidConfig("policy sigma must be positive");
  if (!(value_lr > 0.0 && policy_lr > 0.0)) throw InvalidConfig("learning rates must be positive");
}

PolicyHead PolicyHead::for_env(EnvId env, double sigma) {
  PolicyHead h;
  if (is_maze(env)) {
    h.kind = PolicyKind::gaussian;
    h.sigma = sigma;
  } else {
    h.kind = PolicyKind::categorical;
    h.choices = envs::cartpole_forces();
  }
  return h;
}

std::size_t PolicyHead::output_dim(std::size_t action_dim) const {
  return kind == PolicyKind::gaussian ? action_dim : choices.size();
}

std::size_t PolicyHead::choice_index(double action) const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < choices.size(); ++k) {
    if (std::abs(choices[k] - action) < std::abs(choices[best] - action)) best = k;
  }
  return best;
}

namespace {

// log-softmax of a logit column.
nn::Vector log_softmax(const nn::Vector& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

}  // namespace

double PolicyHead::log_prob(const nn::Vector& output, const nn::Vector& action) const {
  if (kind == PolicyKind::gaussian) {
    const double d = static_cast<double>(output.size());
    return -(action - output).squaredNorm() / (2.0 * sigma * sigma) - d * std::log(sigma) -
           0.5 * d * std::log(2.0 * std::numbers::pi);
  }
  return log_softmax(output)[static_cast<Eigen::Index>(choice_index(action[0]))];
}

nn::Vector PolicyHead::mean_action(const nn::Vector& output) const {
  if (kind == PolicyKind::gaussian) return output;
  const nn::Vector p = log_softmax(output).array().exp();
  nn::Vector a(1);
  a[0] = 0.0;
  for (std::size_t k = 0; k < choices.size(); ++k) a[0] += p[static_cast<Eigen::Index>(k)] * choices[k];
  return a;
}

double awr_weight(double advantage, double beta, double cap) {
  return std::min(std::exp(advantage / beta), cap);
}

namespace {

// Weighted negative log-likelihood and its derivative with respect to the
// policy outputs.
nn::LossEval weighted_nll(const nn::Matrix& out, const AwrBatch& batch, const PolicyHead& head,
                          const std::vector<double>& weights) {
  const Eigen::Index n = out.cols();
  if (batch.actions.cols() != n || static_cast<Eigen::Index>(weights.size()) != n) {
    throw ShapeError("policy batch size mismatch");
  }
  nn::LossEval le;
  le.d_output = nn::Matrix::Zero(out.rows(), n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double w = weights[static_cast<std::size_t>(j)];
    const nn::Vector o = out.col(j);
    const nn::Vector a = batch.actions.col(j);
    le.value -= w * head.log_prob(o, a) * inv_n;
    if (head.kind == PolicyKind::gaussian) {
      // d(-log pi)/d mu = -(a - mu) / sigma^2
      le.d_output.col(j) = -w * inv_n * (a - o) / (head.sigma * head.sigma);
    } else {
      nn::Vector g = log_softmax(o).array().exp();
      g[static_cast<Eigen::Index>(head.choice_index(a[0]))] -= 1.0;
      le.d_output.col(j) = w * inv_n * g;
    }
  }
  return le;
}

}  // namespace

nn::LossFn awr_policy_loss(const AwrBatch& batch, const PolicyHead& head, double beta, double cap) {
  return [&batch, &head, beta, cap](const nn::Matrix& out) {
    std::vector<double> w(batch.returns.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = awr_weight(batch.returns[i] - batch.values[i], beta, cap);
    }
    return weighted_nll(out, batch, head, w);
  };
}

nn::LossFn bc_loss(const AwrBatch& batch, const PolicyHead& head) {
  return [&batch, &head](const nn::Matrix& out) {
    return weighted_nll(out, batch, head, std::vector<double>(static_cast<std::size_t>(out.cols()), 1.0));
  };
}

std::vector<double> mc_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double next = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    out[t] = t + 1 == rewards.size() ? rewards[t] : rewards[t] + gamma * next;
    next = out[t];
  }
  return out;
}

Eigen::RowVectorXd ValueFunction::predict(const nn::Matrix& features) const {
  return (nn::forward_eval(net, features).row(0).array() * scale + offset).matrix();
}

nn::LossFn value_regression_loss(const nn::Vector& targets) {
  return [&targets](const nn::Matrix& out) {
    if (out.rows() != 1 || out.cols() != targets.size()) throw ShapeError("value batch size mismatch");
    nn::LossEval le;
    const Eigen::RowVectorXd diff = out.row(0) - targets.transpose();
    le.value = diff.squaredNorm() / static_cast<double>(diff.size());
    le.d_output = 2.0 * diff / static_cast<double>(diff.size());
    return le;
  };
}

ValueFunction fit_value(const nn::Matrix& features, const std::vector<double>& returns,
                        const AwrConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(features.cols());
  if (returns.size() != n) throw ShapeError("one return per feature column required");
  if (n == 0) throw InvalidInput("value fit needs data");

  nn::NetworkSpec spec;
  spec.input_dim = static_cast<std::size_t>(features.rows());
  spec.hidden_sizes = cfg.hidden_sizes;
  spec.output_dim = 1;
  spec.seed = derive_seed(cfg.seed, 0x76616c75ULL);

  ValueFunction vf;
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  vf.offset = mean;

  const bool constant = std::all_of(returns.begin(), returns.end(),
                                    [&](double r) { return r == returns.front(); });
  if (constant) {
    vf.net = nn::Network(spec);  // all-zero parameters: V(s) = offset exactly
    vf.offset = returns.front();
    return vf;
  }
  vf.scale = std::sqrt(var);
  vf.net = nn::init_network(spec);

  auto opt = nn::OptimizerState::for_network(vf.net, {cfg.value_lr});
  Rng rng(derive_seed(cfg.seed, 0x76626174ULL));
  const std::size_t b = std::min(cfg.batch_size, n);
  nn::Matrix x(features.rows(), static_cast<Eigen::Index>(b));
  nn::Vector y(static_cast<Eigen::Index>(b));
  for (std::size_t it = 0; it < cfg.value_iters; ++it) {
    for (std::size_t k = 0; k < b; ++k) {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, n));
      x.col(static_cast<Eigen::Index>(k)) = features.col(i);
      y[static_cast<Eigen::Index>(k)] = (returns[static_cast<std::size_t>(i)] - vf.offset) / vf.scale;
    }
    const auto g = nn::gradient(vf.net, x, value_regression_loss(y));
    vf.loss_curve.push_back(g.loss);
    nn::optimizer_step(vf.net, opt, g.grad);
  }
  return vf;
}

std::string RewardSelector::describe() const {
  switch (kind) {
    case SelectorKind::gt: return "gt:" + task;
    case SelectorKind::predicted: return "predicted";
    case SelectorKind::zero: return "zero";
    case SelectorKind::constant: return "constant";
    case SelectorKind::random: return "random";
  }
  return "?";
}

double dataset_mean_reward(const OfflineDataset& ds, const std::string& task) {
  if (!ds.has_gt(task)) throw InvalidConfig("dataset has no gt channel for " + task);
  double sum = 0.0;
  for (const auto& t : ds.trajectories) {
    for (double r : t.gt_rewards.at(task)) sum += r;
  }
  return sum / static_cast<double>(ds.transition_count());
}

std::vector<std::vector<double>> reward_channel(const OfflineDataset& ds, const RewardSelector& sel) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ds.trajectories) {
    switch (sel.kind) {
      case SelectorKind::gt: {
        const auto it = t.gt_rewards.find(sel.task);
        if (it == t.gt_rewards.end()) throw InvalidConfig("dataset has no gt channel for " + sel.task);
        out.push_back(it->second);
        break;
      }
      case SelectorKind::predicted:
        if (!t.predicted_rewards) throw InvalidConfig("dataset has no predicted reward channel");
        out.push_back(*t.predicted_rewards);
        break;
      case SelectorKind::zero:
      case SelectorKind::random:
        out.emplace_back(t.length(), 0.0);
        break;
      case SelectorKind::constant:
        out.emplace_back(t.length(), sel.constant);
        break;
    }
  }
  return out;
}

bool standardize_channel(std::vector<std::vector<double>>& rewards) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rewards) {
    for (double x : r) sum += x;
    n += r.size();
  }
  if (n == 0) return false;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& r : rewards) {
    for (double x : r) ss += (x - mean) * (x - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return false;
  for (auto& r : rewards) {
    for (double& x : r) x = (x - mean) / sd;
  }
  return true;
}

nn::Vector PolicyArtifact::act(const Eigen::VectorXd& state) const {
  return head.mean_action(nn::forward_eval(policy, envs::observe(env, state)).col(0));
}

namespace {

struct FlatData {
  nn::Matrix features;
  nn::Matrix actions;
  std::vector<double> returns;
};

FlatData flatten(const OfflineDataset& ds, const std::vector<std::vector<double>>& rewards, double gamma) {
  FlatData f;
  const auto n = static_cast<Eigen::Index>(ds.transition_count());
  f.features.resize(static_cast<Eigen::Index>(obs_dim(ds.env)), n);
  f.actions.resize(static_cast<Eigen::Index>(action_dim(ds.env)), n);
  f.returns.reserve(static_cast<std::size_t>(n));
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& t = ds.trajectories[i];
    const auto len = static_cast<Eigen::Index>(t.length());
    f.features.middleCols(at, len) = envs::observe_batch(ds.env, t.states.leftCols(len));
    f.actions.middleCols(at, len) = t.actions;
    if (rewards[i].size() != t.length()) throw ShapeError("reward channel length mismatch");
    const auto r = mc_returns(rewards[i], gamma);
    f.returns.insert(f.returns.end(), r.begin(), r.end());
    at += len;
  }
  return f;
}

nn::NetworkSpec policy_spec(const OfflineDataset& ds, const PolicyHead& head, const AwrConfig& cfg) {
  nn::NetworkSpec spec;
  spec.input_dim = obs_dim(ds.env);
  spec.hidden_sizes = cfg.hidden_sizes;
  spec.output_dim = head.output_dim(action_dim(ds.env));
  spec.seed = derive_seed(cfg.seed, 0x706f6c69ULL);
  return spec;
}

// Shared policy phase. `values` empty means behavioral cloning.
nn::Network train_policy(const FlatData& data, const std::vector<double>& values,
                         const PolicyHead& head, const nn::NetworkSpec& spec, const AwrConfig& cfg,
                         std::vector<double>& curve) {
  nn::Network pi = nn::init_network(spec);
  auto opt = nn::OptimizerState::for_network(pi, {cfg.policy_lr});
  Rng rng(derive_seed(cfg.seed, 0x70626174ULL));
  const auto n = static_cast<std::size_t>(data.features.cols());
  const std::size_t b = std::min(cfg.batch_size, n);
  AwrBatch batch;
  batch.features.resize(data.features.rows(), static_cast<Eigen::Index>(b));
  batch.actions.resize(data.actions.rows(), static_cast<Eigen::Index>(b));
  batch.returns.resize(b);
  batch.values.resize(b);
  const bool bc = values.empty();
  for (std::size_t it = 0; it < cfg.policy_iters; ++it) {
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t i = uniform_index(rng, n);
      batch.features.col(static_cast<Eigen::Index>(k)) = data.features.col(static_cast<Eigen::Index>(i));
      batch.actions.col(static_cast<Eigen::Index>(k)) = data.actions.col(static_cast<Eigen::Index>(i));
      batch.returns[k] = data.returns[i];
      batch.values[k] = bc ? 0.0 : values[i];
    }
    const auto loss = bc ? bc_loss(batch, head) : awr_policy_loss(batch, head, cfg.beta, cfg.weight_cap);
    const auto g = nn::gradient(pi, batch.features, loss);
    curve.push_back(g.loss);
    nn::optimizer_step(pi, opt, g.grad);
  }
  return pi;
}

}  // namespace

PolicyArtifact run_awr(const OfflineDataset& ds, const RewardSelector& selector, const AwrConfig& cfg) {
  cfg.validate();
  ds.validate();
  PolicyArtifact art;
  art.env = ds.env;
  art.head = PolicyHead::for_env(ds.env, cfg.sigma);
  art.config = cfg;
  art.selector = selector.describe();
  const nn::NetworkSpec pspec = policy_spec(ds, art.head, cfg);

  auto rewards = reward_channel(ds, selector);
  if (cfg.standardize_rewards) standardize_channel(rewards);
  const FlatData data = flatten(ds, rewards, cfg.gamma);
  if (selector.kind == SelectorKind::random) {
    art.policy = nn::init_network(pspec);
    nn::NetworkSpec vspec = pspec;
    vspec.output_dim = 1;
    art.value.net = nn::Network(vspec);
    return art;
  }
  art.value = fit_value(data.features, data.returns, cfg);
  art.log.value_loss = art.value.loss_curve;
  const Eigen::RowVectorXd v = art.value.predict(data.features);
  const std::vector<double> values(v.data(), v.data() + v.size());
  art.policy = train_policy(data, values, art.head, pspec, cfg, art.log.policy_loss);
  return art;
}

PolicyArtifact run_bc(const OfflineDataset& ds, const AwrConfig& cfg) {
  cfg.validate();
  ds.validate();
  PolicyArtifact art;
  art.env = ds.env;
  art.head = PolicyHead::for_env(ds.env, cfg.sigma);
  art.config = cfg;
  art.selector = "bc";
  const nn::NetworkSpec pspec = policy_spec(ds, art.head, cfg);
  const FlatData data = flatten(ds, reward_channel(ds, RewardSelector::zero()), cfg.gamma);
  nn::NetworkSpec vspec = pspec;
  vspec.output_dim = 1;
  art.value.net = nn::Network(vspec);
  art.policy = train_policy(data, {}, art.head, pspec, cfg, art.log.policy_loss);
  return art;
}

nlohmann::json awr_config_to_json(const AwrConfig& c) {
  return {{"gamma", c.gamma},           {"beta", c.beta},
          {"weight_cap", c.weight_cap}, {"value_iters", c.value_iters},
          {"policy_iters", c.policy_iters}, {"batch_size", c.batch_size},
          {"seed", c.seed},             {"hidden_sizes", c.hidden_sizes},
          {"value_lr", c.value_lr},     {"policy_lr", c.policy_lr},
          {"sigma", c.sigma},           {"standardize_rewards", c.standardize_rewards}};
}

AwrConfig awr_config_from_json(const nlohmann::json& j) {
  AwrConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.beta = j.at("beta").get<double>();
  c.weight_cap = j.at("weight_cap").get<double>();
  c.value_iters = j.at("value_iters").get<std::size_t>();
  c.policy_iters = j.at("policy_iters").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
  c.value_lr = j.at("value_lr").get<double>();
  c.policy_lr = j.at("policy_lr").get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.standardize_rewards = j.value("standardize_rewards", true);
  return c;
}

void save_policy(const PolicyArtifact& art, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_network(art.value.net, dir / "value.json");
  nn::save_network(art.policy, dir / "policy.json");
  nlohmann::json cfg{{"format", "oprl-policy"},
                     {"env", env_name(art.env)},
                     {"selector", art.selector},
                     {"value_offset", art.value.offset},
                     {"value_scale", art.value.scale},
                     {"awr", awr_config_to_json(art.config)}};
  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << cfg.dump(2) << '\n';
  std::ofstream log(dir / "train_log.csv");
  log << "phase,iteration,loss\n";
  log.precision(17);
  for (std::size_t i = 0; i < art.log.value_loss.size(); ++i) log << "value," << i << ',' << art.log.value_loss[i] << '\n';
  for (std::size_t i = 0; i < art.log.policy_loss.size(); ++i) log << "policy," << i << ',' << art.log.policy_loss[i] << '\n';
}

PolicyArtifact load_policy(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw IoError("cannot read " + (dir / "config.json").string());
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed policy config: ") + e.what(), 1);
  }
  if (cfg.value("format", "") != "oprl-policy") throw InvalidInput("not a policy artifact");
  PolicyArtifact art;
  art.env = parse_env(cfg.at("env").get<std::string>());
  art.config = awr_config_from_json(cfg.at("awr"));
  art.head = PolicyHead::for_env(art.env, art.config.sigma);
  art.selector = cfg.at("selector").get<std::string>();
  art.value.net = nn::load_network(dir / "value.json");
  art.value.offset = cfg.at("value_offset").get<double>();
  art.value.scale = cfg.at("value_scale").get<double>();
  art.policy = nn::load_network(dir / "policy.json");
  return art;
}

}  // namespace oprl::rl
