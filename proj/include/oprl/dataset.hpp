#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oprl/env_id.hpp"
#include "oprl/rng.hpp"

namespace oprl {

/// A contiguous run of transitions. States are stored once, so transition t
/// is (states[:, t], actions[:, t], states[:, t + 1]) and contiguity holds by
/// construction.
struct Trajectory {
  Eigen::MatrixXd states;   // state_dim x (length + 1)
  Eigen::MatrixXd actions;  // action_dim x length
  std::map<std::string, std::vector<double>> gt_rewards;  // task id -> per transition
  std::optional<std::vector<double>> predicted_rewards;

  std::size_t length() const { return static_cast<std::size_t>(actions.cols()); }
  Eigen::VectorXd state(std::size_t t) const { return states.col(static_cast<Eigen::Index>(t)); }
  Eigen::VectorXd next_state(std::size_t t) const {
    return states.col(static_cast<Eigen::Index>(t + 1));
  }

  bool operator==(const Trajectory& o) const;
};

struct DatasetMeta {
  std::string behavior;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t episode_len = 0;

  bool operator==(const DatasetMeta&) const = default;
};

struct OfflineDataset {
  EnvId env = EnvId::open_maze;
  std::vector<Trajectory> trajectories;
  DatasetMeta meta;

  std::size_t transition_count() const;
  bool has_predicted() const;
  bool has_gt(const std::string& task) const;
  /// Throws InvalidInput when an invariant does not hold.
  void validate() const;

  bool operator==(const OfflineDataset&) const = default;
};

struct SnippetRef {
  std::size_t traj = 0;
  std::size_t start = 0;
  std::size_t length = 1;

  bool operator==(const SnippetRef&) const = default;
  auto operator<=>(const SnippetRef&) const = default;
};

enum class PairStatus { unlabeled, labeled, held_out, skipped };

struct SnippetPair {
  SnippetRef a;
  SnippetRef b;
  PairStatus status = PairStatus::unlabeled;
};

/// Candidate query pool. Held-out pairs are fixed at construction and can
/// never become training labels.
class PairPool {
 public:
  PairPool() = default;
  PairPool(std::vector<SnippetPair> pairs, std::uint64_t seed);

  std::size_t size() const { return pairs_.size(); }
  const SnippetPair& operator[](std::size_t id) const { return pairs_.at(id); }
  const std::vector<SnippetPair>& pairs() const { return pairs_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<std::size_t> ids_with(PairStatus status) const;
  std::size_t count(PairStatus status) const;

  void mark_labeled(std::size_t id);
  void mark_skipped(std::size_t id);

 private:
  void require_unlabeled(std::size_t id) const;

  std::vector<SnippetPair> pairs_;
  std::uint64_t seed_ = 0;
};

enum class LabelSource { oracle, human };

/// y = 0: first snippet preferred; y = 1: second snippet preferred.
struct LabeledQuery {
  std::size_t pair_id = 0;
  SnippetRef a;
  SnippetRef b;
  int label = 0;
  LabelSource source = LabelSource::oracle;
  std::string provenance;  // oracle task id or human session id
  std::string timestamp;   // label ordinal for oracle labels, UTC time for human ones

  bool operator==(const LabeledQuery&) const = default;
};

/// n refs drawn uniformly over every valid (trajectory, start) position.
std::vector<SnippetRef> extract_snippets(const OfflineDataset& ds, std::size_t length,
                                         std::size_t n, std::uint64_t seed);

/// n_pairs distinct unordered pairs of distinct snippets; the last
/// round(heldout_fraction * n_pairs) of them are held out.
PairPool build_pair_pool(const std::vector<SnippetRef>& snips, std::size_t n_pairs,
                         double heldout_fraction, std::uint64_t seed);

/// Column block of the snippet's states (the state of every transition).
Eigen::MatrixXd snippet_states(const OfflineDataset& ds, const SnippetRef& snip);
/// Sum of a per-transition reward channel over the snippet.
double snippet_gt_return(const OfflineDataset& ds, const SnippetRef& snip,
                         const std::string& task);
void check_snippet(const OfflineDataset& ds, const SnippetRef& snip);

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path);

std::string label_source_name(LabelSource s);
void append_label(const std::filesystem::path& path, const LabeledQuery& q);
std::vector<LabeledQuery> load_labels(const std::filesystem::path& path);

}  // namespace oprl
