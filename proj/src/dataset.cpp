#include "oprl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "oprl/errors.hpp"

namespace oprl {

using nlohmann::json;

bool Trajectory::operator==(const Trajectory& o) const {
  return states.rows() == o.states.rows() && states.cols() == o.states.cols() &&
         actions.rows() == o.actions.rows() && actions.cols() == o.actions.cols() &&
         states == o.states && actions == o.actions && gt_rewards == o.gt_rewards &&
         predicted_rewards == o.predicted_rewards;
}

std::size_t OfflineDataset::transition_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.length();
  return n;
}

bool OfflineDataset::has_predicted() const {
  return !trajectories.empty() &&
         std::all_of(trajectories.begin(), trajectories.end(),
                     [](const Trajectory& t) { return t.predicted_rewards.has_value(); });
}

bool OfflineDataset::has_gt(const std::string& task) const {
  return !trajectories.empty() &&
         std::all_of(trajectories.begin(), trajectories.end(),
                     [&](const Trajectory& t) { return t.gt_rewards.count(task) > 0; });
}

void OfflineDataset::validate() const {
  if (trajectories.empty()) throw InvalidInput("dataset has no trajectories");
  const auto sdim = static_cast<Eigen::Index>(state_dim(env));
  const auto adim = static_cast<Eigen::Index>(action_dim(env));
  const bool any_pred = std::any_of(trajectories.begin(), trajectories.end(),
                                    [](const Trajectory& t) { return t.predicted_rewards.has_value(); });
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    const std::string where = "trajectory " + std::to_string(i);
    if (t.length() < 2) throw InvalidInput(where + " is shorter than 2 transitions");
    if (t.states.rows() != sdim || t.actions.rows() != adim) {
      throw InvalidInput(where + " has wrong state/action dimension");
    }
    if (static_cast<std::size_t>(t.states.cols()) != t.length() + 1) {
      throw InvalidInput(where + " state count must be length + 1");
    }
    for (const auto& [task, r] : t.gt_rewards) {
      if (r.size() != t.length()) throw InvalidInput(where + " gt channel '" + task + "' length");
    }
    if (any_pred && (!t.predicted_rewards || t.predicted_rewards->size() != t.length())) {
      throw InvalidInput(where + " predicted channel does not cover every transition");
    }
  }
}

PairPool::PairPool(std::vector<SnippetPair> pairs, std::uint64_t seed)
    : pairs_(std::move(pairs)), seed_(seed) {}

std::vector<std::size_t> PairPool::ids_with(PairStatus status) const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (pairs_[i].status == status) ids.push_back(i);
  }
  return ids;
}

std::size_t PairPool::count(PairStatus status) const {
  return static_cast<std::size_t>(std::count_if(
      pairs_.begin(), pairs_.end(), [&](const SnippetPair& p) { return p.status == status; }));
}

void PairPool::require_unlabeled(std::size_t id) const {
  if (id >= pairs_.size()) throw InvalidInput("pair id " + std::to_string(id) + " out of range");
  switch (pairs_[id].status) {
    case PairStatus::unlabeled: return;
    case PairStatus::held_out: throw Conflict("pair " + std::to_string(id) + " is held out");
    case PairStatus::labeled: throw Conflict("pair " + std::to_string(id) + " already labeled");
    case PairStatus::skipped: throw Conflict("pair " + std::to_string(id) + " was skipped");
  }
}

void PairPool::mark_labeled(std::size_t id) {
  require_unlabeled(id);
  pairs_[id].status = PairStatus::labeled;
}

void PairPool::mark_skipped(std::size_t id) {
  require_unlabeled(id);
  pairs_[id].status = PairStatus::skipped;
}

std::vector<SnippetRef> extract_snippets(const OfflineDataset& ds, std::size_t length,
                                         std::size_t n, std::uint64_t seed) {
  if (length == 0) throw InvalidConfig("snippet length must be positive");
  // Cumulative count of valid start positions per trajectory.
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& t : ds.trajectories) {
    total += t.length() >= length ? t.length() - length + 1 : 0;
    cumulative.push_back(total);
  }
  if (total == 0) throw InvalidConfig("no trajectory is as long as the snippet length");
  Rng rng(seed);
  std::vector<SnippetRef> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = uniform_index(rng, total);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), k);
    const auto traj = static_cast<std::size_t>(it - cumulative.begin());
    const std::size_t before = traj == 0 ? 0 : cumulative[traj - 1];
    out.push_back({traj, k - before, length});
  }
  return out;
}

PairPool build_pair_pool(const std::vector<SnippetRef>& snips, std::size_t n_pairs,
                         double heldout_fraction, std::uint64_t seed) {
  const std::size_t n = snips.size();
  if (n < 2) throw InvalidConfig("a pair pool needs at least 2 snippets");
  if (!(heldout_fraction >= 0.0 && heldout_fraction <= 1.0)) {
    throw InvalidConfig("held-out fraction must lie in [0, 1]");
  }
  const double combos = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  if (static_cast<double>(n_pairs) > combos) {
    throw InvalidConfig("requested more pairs than distinct snippet combinations");
  }
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  chosen.reserve(n_pairs);
  if (static_cast<double>(n_pairs) * 2.0 > combos) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) chosen.emplace_back(i, j);
    }
    shuffle(chosen, rng);
    chosen.resize(n_pairs);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (chosen.size() < n_pairs) {
      std::size_t i = uniform_index(rng, n);
      std::size_t j = uniform_index(rng, n);
      if (i == j) continue;
      if (seen.emplace(std::min(i, j), std::max(i, j)).second) chosen.emplace_back(i, j);
    }
  }
  const auto held = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n_pairs)));
  std::vector<SnippetPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    SnippetPair p{snips[chosen[k].first], snips[chosen[k].second], PairStatus::unlabeled};
    if (k >= n_pairs - held) p.status = PairStatus::held_out;
    pairs.push_back(p);
  }
  return PairPool(std::move(pairs), seed);
}

void check_snippet(const OfflineDataset& ds, const SnippetRef& snip) {
  if (snip.traj >= ds.trajectories.size()) throw InvalidInput("snippet trajectory out of range");
  if (snip.length == 0 || snip.start + snip.length > ds.trajectories[snip.traj].length()) {
    throw InvalidInput("snippet exceeds its trajectory");
  }
}

Eigen::MatrixXd snippet_states(const OfflineDataset& ds, const SnippetRef& snip) {
  check_snippet(ds, snip);
  return ds.trajectories[snip.traj].states.middleCols(static_cast<Eigen::Index>(snip.start),
                                                     static_cast<Eigen::Index>(snip.length));
}

double snippet_gt_return(const OfflineDataset& ds, const SnippetRef& snip,
                         const std::string& task) {
  check_snippet(ds, snip);
  const auto& t = ds.trajectories[snip.traj];
  const auto it = t.gt_rewards.find(task);
  if (it == t.gt_rewards.end()) throw InvalidConfig("dataset has no gt channel for " + task);
  double sum = 0.0;
  for (std::size_t k = 0; k < snip.length; ++k) sum += it->second[snip.start + k];
  return sum;
}

namespace {

json matrix_columns(const Eigen::MatrixXd& m) {
  json cols = json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    json c = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) c.push_back(m(i, j));
    cols.push_back(std::move(c));
  }
  return cols;
}

Eigen::MatrixXd columns_matrix(const json& cols, Eigen::Index rows) {
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& c = cols[j];
    if (!c.is_array() || static_cast<Eigen::Index>(c.size()) != rows) {
      throw InvalidInput("vector has wrong dimension");
    }
    for (Eigen::Index i = 0; i < rows; ++i) m(i, static_cast<Eigen::Index>(j)) = c[static_cast<std::size_t>(i)].get<double>();
  }
  return m;
}

}  // namespace

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  json header{{"type", "header"},
              {"env", env_name(ds.env)},
              {"behavior", ds.meta.behavior},
              {"seed", ds.meta.seed},
              {"steps", ds.meta.steps},
              {"episode_len", ds.meta.episode_len},
              {"trajectories", ds.trajectories.size()}};
  out << header.dump() << '\n';
  for (const auto& t : ds.trajectories) {
    json rec{{"type", "trajectory"},
             {"env", env_name(ds.env)},
             {"states", matrix_columns(t.states)},
             {"actions", matrix_columns(t.actions)},
             {"gt_rewards", t.gt_rewards}};
    if (t.predicted_rewards) rec["predicted_rewards"] = *t.predicted_rewards;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  OfflineDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t expected = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      const std::string type = rec.at("type").get<std::string>();
      if (!have_header) {
        if (type != "header") throw InvalidInput("first record must be a header");
        ds.env = parse_env(rec.at("env").get<std::string>());
        ds.meta.behavior = rec.at("behavior").get<std::string>();
        ds.meta.seed = rec.at("seed").get<std::uint64_t>();
        ds.meta.steps = rec.at("steps").get<std::size_t>();
        ds.meta.episode_len = rec.at("episode_len").get<std::size_t>();
        expected = rec.at("trajectories").get<std::size_t>();
        have_header = true;
        continue;
      }
      if (type != "trajectory") throw InvalidInput("unexpected record type '" + type + "'");
      if (parse_env(rec.at("env").get<std::string>()) != ds.env) {
        throw InvalidInput("trajectory env differs from header");
      }
      Trajectory t;
      t.states = columns_matrix(rec.at("states"), static_cast<Eigen::Index>(state_dim(ds.env)));
      t.actions = columns_matrix(rec.at("actions"), static_cast<Eigen::Index>(action_dim(ds.env)));
      t.gt_rewards = rec.at("gt_rewards").get<std::map<std::string, std::vector<double>>>();
      if (rec.contains("predicted_rewards")) {
        t.predicted_rewards = rec.at("predicted_rewards").get<std::vector<double>>();
      }
      ds.trajectories.push_back(std::move(t));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  if (!have_header) throw ParseError(path.string() + ": missing header", line_no + 1);
  if (ds.trajectories.size() != expected) {
    throw ParseError(path.string() + ": expected " + std::to_string(expected) +
                         " trajectories, found " + std::to_string(ds.trajectories.size()),
                     line_no + 1);
  }
  try {
    ds.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(path.string() + ": " + e.what(), line_no);
  }
  return ds;
}

std::string label_source_name(LabelSource s) { return s == LabelSource::oracle ? "oracle" : "human"; }

namespace {

json snippet_json(const SnippetRef& s) {
  return {{"traj", s.traj}, {"start", s.start}, {"length", s.length}};
}

SnippetRef snippet_from(const json& j) {
  return {j.at("traj").get<std::size_t>(), j.at("start").get<std::size_t>(),
          j.at("length").get<std::size_t>()};
}

}  // namespace

void append_label(const std::filesystem::path& path, const LabeledQuery& q) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  json rec{{"pair_id", q.pair_id},
           {"a", snippet_json(q.a)},
           {"b", snippet_json(q.b)},
           {"label", q.label},
           {"source", label_source_name(q.source)},
           {"provenance", q.provenance},
           {"timestamp", q.timestamp}};
  out << rec.dump() << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<LabeledQuery> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<LabeledQuery> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      LabeledQuery q;
      q.pair_id = rec.at("pair_id").get<std::size_t>();
      q.a = snippet_from(rec.at("a"));
      q.b = snippet_from(rec.at("b"));
      q.label = rec.at("label").get<int>();
      if (q.label != 0 && q.label != 1) throw InvalidInput("label must be 0 or 1");
      const auto src = rec.at("source").get<std::string>();
      if (src == "oracle") {
        q.source = LabelSource::oracle;
      } else if (src == "human") {
        q.source = LabelSource::human;
      } else {
        throw InvalidInput("unknown label source '" + src + "'");
      }
      q.provenance = rec.at("provenance").get<std::string>();
      q.timestamp = rec.at("timestamp").get<std::string>();
      out.push_back(std::move(q));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace oprl
