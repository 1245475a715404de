#include "oprl/acquisition.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "oprl/errors.hpp"

namespace oprl::acquisition {

std::string method_name(Method m) {
  switch (m) {
    case Method::random: return "random";
    case Method::ensemble_disagreement: return "ensemdis";
    case Method::ensemble_infogain: return "enseminfo";
    case Method::dropout_disagreement: return "dropdis";
    case Method::dropout_infogain: return "dropinfo";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::random, Method::ensemble_disagreement, Method::ensemble_infogain,
                   Method::dropout_disagreement, Method::dropout_infogain}) {
    if (method_name(m) == name) return m;
  }
  throw InvalidConfig("unknown acquisition method '" + name + "'");
}

std::optional<reward::PosteriorKind> required_kind(Method m) {
  switch (m) {
    case Method::random: return std::nullopt;
    case Method::ensemble_disagreement:
    case Method::ensemble_infogain: return reward::PosteriorKind::ensemble;
    case Method::dropout_disagreement:
    case Method::dropout_infogain: return reward::PosteriorKind::dropout;
  }
  return std::nullopt;
}

void QuerySchedule::validate() const {
  if (initial_queries == 0) throw InvalidConfig("initial query count must be positive");
  if (rounds > 0 && queries_per_round == 0) throw InvalidConfig("queries per round must be positive");
}

namespace {

void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("sample vectors differ in length");
  if (a.size() < 2) throw ShapeError("at least 2 posterior samples required");
}

}  // namespace

double disagreement_score(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  double votes = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    if (b[m] > a[m]) {
      votes += 1.0;
    } else if (b[m] == a[m]) {
      votes += 0.5;
    }
  }
  // votes * (n - votes) is exact in half-units, so swapping a and b is exact.
  const double n = static_cast<double>(a.size());
  return votes * (n - votes) / (n * n);
}

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

double infogain_score(std::span<const double> a, std::span<const double> b, double beta) {
  check_samples(a, b);
  double p_bar = 0.0;
  double e_bar = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    const double p = reward::bt_prob(a[m], b[m], beta);
    p_bar += p;
    e_bar += binary_entropy(p);
  }
  const double n = static_cast<double>(a.size());
  return std::max(binary_entropy(p_bar / n) - e_bar / n, 0.0);
}

double score_pair(Method m, std::span<const double> a, std::span<const double> b, double beta) {
  switch (m) {
    case Method::random: return 0.0;
    case Method::ensemble_disagreement:
    case Method::dropout_disagreement: return disagreement_score(a, b);
    case Method::ensemble_infogain:
    case Method::dropout_infogain: return infogain_score(a, b, beta);
  }
  return 0.0;
}

std::vector<double> score_pairs(const PairPool& pool, const std::vector<std::size_t>& ids,
                                const reward::RewardPosterior& post, Method method,
                                const OfflineDataset& ds, double beta) {
  if (auto kind = required_kind(method); kind && *kind != post.kind()) {
    throw InvalidConfig(method_name(method) + " needs a " + reward::posterior_kind_name(*kind) +
                        " posterior");
  }
  // Evaluate each distinct snippet once.
  std::map<SnippetRef, Eigen::Index> index;
  std::vector<SnippetRef> snips;
  for (std::size_t id : ids) {
    for (const SnippetRef& s : {pool[id].a, pool[id].b}) {
      if (index.emplace(s, static_cast<Eigen::Index>(snips.size())).second) snips.push_back(s);
    }
  }
  const Eigen::MatrixXd samples = reward::return_samples(post, snips, ds);
  std::vector<double> scores;
  scores.reserve(ids.size());
  std::vector<double> sa(static_cast<std::size_t>(samples.rows()));
  std::vector<double> sb(sa.size());
  for (std::size_t id : ids) {
    const Eigen::Index ia = index.at(pool[id].a);
    const Eigen::Index ib = index.at(pool[id].b);
    for (Eigen::Index m = 0; m < samples.rows(); ++m) {
      sa[static_cast<std::size_t>(m)] = samples(m, ia);
      sb[static_cast<std::size_t>(m)] = samples(m, ib);
    }
    scores.push_back(score_pair(method, sa, sb, beta));
  }
  return scores;
}

Selection select_query(const PairPool& pool, const reward::RewardPosterior& post, Method method,
                       const OfflineDataset& ds, Rng& rng, double beta, std::size_t scan_budget) {
  std::vector<std::size_t> ids = pool.ids_with(PairStatus::unlabeled);
  if (ids.empty()) throw PoolExhausted("no unlabeled pairs left in the pool");
  if (method == Method::random) return {ids[uniform_index(rng, ids.size())], 0.0};
  if (scan_budget > 0 && scan_budget < ids.size()) {
    shuffle(ids, rng);
    ids.resize(scan_budget);
    std::sort(ids.begin(), ids.end());
  }
  const auto scores = score_pairs(pool, ids, post, method, ds, beta);
  std::size_t best = 0;
  for (std::size_t k = 1; k < ids.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return {ids[best], scores[best]};
}

nlohmann::json round_to_json(const RoundRecord& r) {
  return {{"round", r.round},
          {"pair_ids", r.pair_ids},
          {"scores", r.scores},
          {"heldout_accuracy", r.heldout_accuracy ? nlohmann::json(*r.heldout_accuracy) : nlohmann::json()},
          {"labels_total", r.labels_total},
          {"wall_time_s", r.wall_time_s}};
}

ActiveLoopResult run_active_loop(const OfflineDataset& ds, PairPool& pool,
                                 reward::RewardPosterior& post, labeling::Labeler& labeler,
                                 const ActiveLoopConfig& cfg) {
  cfg.schedule.validate();
  cfg.reward.validate();
  if (auto kind = required_kind(cfg.method); kind && *kind != post.kind()) {
    throw InvalidConfig(method_name(cfg.method) + " needs a " +
                        reward::posterior_kind_name(*kind) + " posterior");
  }
  if (pool.count(PairStatus::unlabeled) < cfg.schedule.total()) {
    throw InvalidConfig("pair pool has fewer unlabeled pairs than the schedule consumes");
  }

  std::map<std::size_t, const LabeledQuery*> resumed;
  for (const auto& q : cfg.resume) resumed[q.pair_id] = &q;

  Rng rng(derive_seed(cfg.seed, 0x61637175ULL));
  ActiveLoopResult result;
  std::ofstream run_log;
  if (!cfg.run_log.empty()) {
    run_log.open(cfg.run_log, std::ios::binary | std::ios::trunc);
    if (!run_log) throw IoError("cannot write " + cfg.run_log.string());
  }

  // Returns false when the labeler skipped the pair.
  auto obtain = [&](std::size_t id) {
    const SnippetPair& pair = pool[id];
    LabeledQuery q;
    if (auto it = resumed.find(id); it != resumed.end()) {
      q = *it->second;
    } else {
      const std::optional<int> y = labeler.label(id, pair);
      if (!y) {
        pool.mark_skipped(id);
        return false;
      }
      q.pair_id = id;
      q.a = pair.a;
      q.b = pair.b;
      q.label = *y;
      q.source = labeler.source();
      q.provenance = labeler.provenance();
      q.timestamp = labeler.timestamp();
      if (!cfg.label_file.empty()) append_label(cfg.label_file, q);
    }
    pool.mark_labeled(id);
    result.labels.push_back(std::move(q));
    return true;
  };

  auto finish_round = [&](RoundRecord rec, std::size_t epochs,
                          std::chrono::steady_clock::time_point started) {
    {
      std::unique_lock<std::mutex> lock;
      if (cfg.posterior_mutex) lock = std::unique_lock(*cfg.posterior_mutex);
      reward::train_posterior(post, result.labels, ds, cfg.reward, epochs);
      if (!cfg.heldout.pairs.empty()) {
        rec.heldout_accuracy = metrics::preference_accuracy(post, cfg.heldout, ds);
        result.accuracy.push_back(*rec.heldout_accuracy);
      }
    }
    rec.labels_total = result.labels.size();
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (run_log.is_open()) run_log << round_to_json(rec).dump() << '\n' << std::flush;
    if (cfg.on_round) cfg.on_round(rec, post);
    result.rounds.push_back(std::move(rec));
  };

  auto started = std::chrono::steady_clock::now();
  RoundRecord initial;
  initial.round = 0;
  while (initial.pair_ids.size() < cfg.schedule.initial_queries) {
    const auto ids = pool.ids_with(PairStatus::unlabeled);
    if (ids.empty()) throw PoolExhausted("pool exhausted during initial queries");
    const std::size_t id = ids[uniform_index(rng, ids.size())];
    if (obtain(id)) {
      initial.pair_ids.push_back(id);
      initial.scores.push_back(0.0);
    }
  }
  finish_round(std::move(initial), cfg.reward.epochs_initial, started);

  for (std::size_t r = 1; r <= cfg.schedule.rounds; ++r) {
    started = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = r;
    while (rec.pair_ids.size() < cfg.schedule.queries_per_round) {
      Selection sel;
      {
        std::unique_lock<std::mutex> lock;
        if (cfg.posterior_mutex) lock = std::unique_lock(*cfg.posterior_mutex);
        sel = select_query(pool, post, cfg.method, ds, rng, cfg.reward.bt_beta, cfg.scan_budget);
      }
      if (obtain(sel.pair_id)) {
        rec.pair_ids.push_back(sel.pair_id);
        rec.scores.push_back(sel.score);
      }
    }
    finish_round(std::move(rec), cfg.reward.epochs_per_round, started);
  }
  return result;
}

}  // namespace oprl::acquisition
