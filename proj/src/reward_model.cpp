#include "oprl/reward_model.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "oprl/envs.hpp"
#include "oprl/errors.hpp"

namespace oprl::reward {

std::string posterior_kind_name(PosteriorKind k) {
  return k == PosteriorKind::ensemble ? "ensemble" : "dropout";
}

PosteriorKind parse_posterior_kind(const std::string& name) {
  if (name == "ensemble") return PosteriorKind::ensemble;
  if (name == "dropout") return PosteriorKind::dropout;
  throw InvalidConfig("unknown posterior kind '" + name + "'");
}

void RewardConfig::validate() const {
  if (epochs_initial == 0 || epochs_per_round == 0) {
    throw InvalidConfig("reward epoch counts must be positive");
  }
  if (!(bt_beta > 0.0)) throw InvalidConfig("bt_beta must be positive");
  if (!(learning_rate > 0.0)) throw InvalidConfig("reward learning rate must be positive");
}

RewardPosterior RewardPosterior::create(PosteriorKind kind, std::size_t samples,
                                        nn::NetworkSpec spec, std::uint64_t seed, EnvId env) {
  if (samples < 2) throw InvalidConfig("a posterior needs at least 2 samples");
  if (spec.input_dim != obs_dim(env)) throw ShapeError("reward network input must match env features");
  if (spec.output_dim != 1) throw ShapeError("reward network must have one output");
  if (kind == PosteriorKind::dropout && !spec.dropout_layer) {
    throw InvalidConfig("dropout posterior needs a dropout layer");
  }
  RewardPosterior p;
  p.kind_ = kind;
  p.samples_ = samples;
  p.env_ = env;
  p.seed_ = seed;
  p.spec_ = spec;
  const std::size_t nets = kind == PosteriorKind::ensemble ? samples : 1;
  for (std::size_t m = 0; m < nets; ++m) {
    nn::NetworkSpec s = spec;
    s.seed = derive_seed(seed, m);
    p.members_.push_back(nn::init_network(s));
    p.state_.push_back({nn::OptimizerState::for_network(p.members_.back()),
                        Rng(derive_seed(s.seed, 0x7261696eULL))});
  }
  return p;
}

std::vector<std::uint64_t> RewardPosterior::member_seeds() const {
  std::vector<std::uint64_t> seeds;
  for (const auto& m : members_) seeds.push_back(m.spec().seed);
  return seeds;
}

std::vector<nn::Vector> RewardPosterior::pass_masks() const {
  std::vector<nn::Vector> masks;
  const std::uint64_t stream = derive_seed(derive_seed(seed_, 0x6d61736bULL), version_);
  for (std::size_t m = 0; m < samples_; ++m) {
    Rng rng(derive_seed(stream, m));
    masks.push_back(nn::sample_dropout_mask(spec_, rng));
  }
  return masks;
}

nn::Matrix snippet_features(const OfflineDataset& ds, const SnippetRef& snip) {
  return envs::observe_batch(ds.env, snippet_states(ds, snip));
}

double snippet_return(const nn::Network& net, const SnippetRef& snip, const OfflineDataset& ds,
                      nn::Mode mode, Rng& rng) {
  return nn::forward_batch(net, snippet_features(ds, snip), mode, rng).sum();
}

double snippet_return(const nn::Network& net, const SnippetRef& snip, const OfflineDataset& ds) {
  return nn::forward_eval(net, snippet_features(ds, snip)).sum();
}

double bt_prob(double return_a, double return_b, double beta) {
  const double za = beta * return_a;
  const double zb = beta * return_b;
  const double m = std::max(za, zb);
  const double ea = std::exp(za - m);
  const double eb = std::exp(zb - m);
  return eb / (ea + eb);
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Features of both snippets of each label, stacked column-wise: for label i
// columns [offsets[i], offsets[i] + a_len) then b's columns.
struct LabelBatch {
  nn::Matrix features;
  std::vector<Eigen::Index> a_off, a_len, b_off, b_len;
  std::vector<int> labels;
};

LabelBatch gather(const std::vector<const LabeledQuery*>& qs, const OfflineDataset& ds) {
  LabelBatch b;
  Eigen::Index cols = 0;
  for (const auto* q : qs) cols += static_cast<Eigen::Index>(q->a.length + q->b.length);
  b.features.resize(static_cast<Eigen::Index>(obs_dim(ds.env)), cols);
  Eigen::Index at = 0;
  for (const auto* q : qs) {
    const auto fa = snippet_features(ds, q->a);
    const auto fb = snippet_features(ds, q->b);
    b.a_off.push_back(at);
    b.a_len.push_back(fa.cols());
    b.features.middleCols(at, fa.cols()) = fa;
    at += fa.cols();
    b.b_off.push_back(at);
    b.b_len.push_back(fb.cols());
    b.features.middleCols(at, fb.cols()) = fb;
    at += fb.cols();
    b.labels.push_back(q->label);
  }
  return b;
}

nn::LossFn batch_loss(const LabelBatch& b, double beta) {
  return [&b, beta](const nn::Matrix& out) {
    const std::size_t n = b.labels.size();
    std::vector<double> ra(n), rb(n);
    for (std::size_t i = 0; i < n; ++i) {
      ra[i] = out.middleCols(b.a_off[i], b.a_len[i]).sum();
      rb[i] = out.middleCols(b.b_off[i], b.b_len[i]).sum();
    }
    const BtLoss l = bt_loss(ra, rb, b.labels, beta);
    nn::LossEval le;
    le.value = l.value;
    le.d_output = nn::Matrix::Zero(out.rows(), out.cols());
    for (std::size_t i = 0; i < n; ++i) {
      le.d_output.middleCols(b.a_off[i], b.a_len[i]).setConstant(l.d_return_a[i]);
      le.d_output.middleCols(b.b_off[i], b.b_len[i]).setConstant(l.d_return_b[i]);
    }
    return le;
  };
}

double eval_batch_loss(const nn::Network& net, const LabelBatch& b, double beta) {
  return batch_loss(b, beta)(nn::forward_eval(net, b.features)).value;
}

}  // namespace

BtLoss bt_loss(const std::vector<double>& returns_a, const std::vector<double>& returns_b,
               const std::vector<int>& labels, double beta) {
  const std::size_t n = labels.size();
  if (returns_a.size() != n || returns_b.size() != n) throw ShapeError("bt_loss size mismatch");
  if (n == 0) throw InvalidInput("bt_loss needs at least one label");
  BtLoss l;
  l.d_return_a.resize(n);
  l.d_return_b.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = beta * (returns_b[i] - returns_a[i]);
    // -log P(y): y = 1 -> softplus(-z), y = 0 -> softplus(z).
    l.value += (labels[i] == 1 ? softplus(-z) : softplus(z)) * inv_n;
    const double d_z = (sigmoid(z) - static_cast<double>(labels[i])) * inv_n;
    l.d_return_b[i] = beta * d_z;
    l.d_return_a[i] = -beta * d_z;
  }
  return l;
}

std::vector<double> train_posterior(RewardPosterior& post, const std::vector<LabeledQuery>& labels,
                                    const OfflineDataset& ds, const RewardConfig& cfg,
                                    std::size_t epochs) {
  cfg.validate();
  if (labels.empty()) throw InvalidConfig("reward training needs at least one label");
  if (ds.env != post.env()) throw InvalidConfig("posterior and dataset envs differ");

  std::vector<const LabeledQuery*> all;
  for (const auto& q : labels) all.push_back(&q);
  const LabelBatch full = gather(all, ds);
  const std::size_t batch = cfg.batch_size == 0 ? labels.size() : std::min(cfg.batch_size, labels.size());

  std::vector<double> curve(epochs, 0.0);
  for (std::size_t m = 0; m < post.members_.size(); ++m) {
    nn::Network& net = post.members_[m];
    MemberState& st = post.state_[m];
    st.optimizer.config.learning_rate = cfg.learning_rate;
    std::vector<std::size_t> order(labels.size());
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle(order, st.rng);
      for (std::size_t start = 0; start < order.size(); start += batch) {
        std::vector<const LabeledQuery*> qs;
        for (std::size_t k = start; k < std::min(start + batch, order.size()); ++k) {
          qs.push_back(&labels[order[k]]);
        }
        const LabelBatch b = gather(qs, ds);
        const auto g = nn::gradient(net, b.features, batch_loss(b, cfg.bt_beta), nn::Mode::train, st.rng);
        nn::optimizer_step(net, st.optimizer, g.grad);
      }
      curve[e] += eval_batch_loss(net, full, cfg.bt_beta) / static_cast<double>(post.members_.size());
    }
  }
  ++post.version_;
  return curve;
}

double label_loss(const nn::Network& net, const std::vector<LabeledQuery>& labels,
                  const OfflineDataset& ds, double beta) {
  std::vector<const LabeledQuery*> all;
  for (const auto& q : labels) all.push_back(&q);
  return eval_batch_loss(net, gather(all, ds), beta);
}

std::vector<double> return_samples(const RewardPosterior& post, const SnippetRef& snip,
                                   const OfflineDataset& ds) {
  const Eigen::MatrixXd s = return_samples(post, std::vector<SnippetRef>{snip}, ds);
  return {s.data(), s.data() + s.size()};
}

Eigen::MatrixXd return_samples(const RewardPosterior& post, const std::vector<SnippetRef>& snips,
                               const OfflineDataset& ds) {
  if (ds.env != post.env()) throw InvalidConfig("posterior and dataset envs differ");
  Eigen::Index cols = 0;
  for (const auto& s : snips) {
    check_snippet(ds, s);
    cols += static_cast<Eigen::Index>(s.length);
  }
  nn::Matrix features(static_cast<Eigen::Index>(obs_dim(ds.env)), cols);
  Eigen::Index at = 0;
  for (const auto& s : snips) {
    features.middleCols(at, static_cast<Eigen::Index>(s.length)) = snippet_features(ds, s);
    at += static_cast<Eigen::Index>(s.length);
  }

  const auto M = static_cast<Eigen::Index>(post.sample_count());
  Eigen::MatrixXd out(M, static_cast<Eigen::Index>(snips.size()));
  auto fill_row = [&](Eigen::Index m, const nn::Matrix& per_state) {
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < snips.size(); ++k) {
      const auto len = static_cast<Eigen::Index>(snips[k].length);
      out(m, static_cast<Eigen::Index>(k)) = per_state.middleCols(pos, len).sum();
      pos += len;
    }
  };
  if (post.kind() == PosteriorKind::ensemble) {
    for (Eigen::Index m = 0; m < M; ++m) {
      fill_row(m, nn::forward_eval(post.members()[static_cast<std::size_t>(m)], features));
    }
  } else {
    const auto masks = post.pass_masks();
    for (Eigen::Index m = 0; m < M; ++m) {
      fill_row(m, nn::forward_with_mask(post.members().front(), features,
                                        masks[static_cast<std::size_t>(m)]));
    }
  }
  return out;
}

Eigen::RowVectorXd mean_reward(const RewardPosterior& post, const nn::Matrix& features) {
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(features.cols());
  for (const auto& net : post.members()) sum += nn::forward_eval(net, features).row(0);
  return sum / static_cast<double>(post.members().size());
}

double mean_return(const RewardPosterior& post, const SnippetRef& snip, const OfflineDataset& ds) {
  return mean_reward(post, snippet_features(ds, snip)).sum();
}

RelabelStats relabel_dataset(const RewardPosterior& post, OfflineDataset& ds) {
  if (ds.env != post.env()) throw InvalidConfig("posterior and dataset envs differ");
  const std::size_t n = ds.transition_count();
  if (n == 0) throw InvalidInput("cannot relabel an empty dataset");
  double sum = 0.0;
  for (auto& t : ds.trajectories) {
    const auto feats = envs::observe_batch(ds.env, t.states.leftCols(static_cast<Eigen::Index>(t.length())));
    const Eigen::RowVectorXd r = mean_reward(post, feats);
    t.predicted_rewards = std::vector<double>(r.data(), r.data() + r.size());
    sum += r.sum();
  }
  RelabelStats stats;
  stats.raw_mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& t : ds.trajectories) {
    for (double r : *t.predicted_rewards) sq += (r - stats.raw_mean) * (r - stats.raw_mean);
  }
  stats.raw_std = std::sqrt(sq / static_cast<double>(n));
  stats.standardized = stats.raw_std > 1e-12;
  if (!stats.standardized) {
    std::cerr << "warning: predicted rewards have zero variance; only mean-centering applied\n";
  }
  for (auto& t : ds.trajectories) {
    for (double& r : *t.predicted_rewards) {
      r -= stats.raw_mean;
      if (stats.standardized) r /= stats.raw_std;
    }
  }
  return stats;
}

void save_posterior(const RewardPosterior& post, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"format", "oprl-posterior"},
                          {"kind", posterior_kind_name(post.kind_)},
                          {"samples", post.samples_},
                          {"env", env_name(post.env_)},
                          {"seed", post.seed_},
                          {"version", post.version_},
                          {"spec", nn::spec_to_json(post.spec_)},
                          {"member_seeds", post.member_seeds()}};
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t m = 0; m < post.members_.size(); ++m) {
    const std::string name = "member_" + std::to_string(m) + ".json";
    nn::save_network(post.members_[m], dir / name);
    files.push_back(name);
  }
  manifest["members"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write posterior manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

RewardPosterior load_posterior(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed posterior manifest: ") + e.what(), 1);
  }
  RewardPosterior p = RewardPosterior::create(
      parse_posterior_kind(j.at("kind").get<std::string>()), j.at("samples").get<std::size_t>(),
      nn::spec_from_json(j.at("spec")), j.at("seed").get<std::uint64_t>(),
      parse_env(j.at("env").get<std::string>()));
  const auto files = j.at("members").get<std::vector<std::string>>();
  if (files.size() != p.members_.size()) throw InvalidInput("posterior member count mismatch");
  for (std::size_t m = 0; m < files.size(); ++m) p.members_[m] = nn::load_network(dir / files[m]);
  p.version_ = j.at("version").get<std::uint64_t>();
  return p;
}

}  // namespace oprl::reward
