#pragma once

#include <condition_variable>
#include <functional>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "oprl/dataset.hpp"

namespace oprl::labeling {

/// y = 1 iff the second snippet's summed gt reward is larger; exact ties are
/// settled by a fair coin from `rng`. With `noise_beta` set, y is instead
/// sampled from the Bradley-Terry probability of the gt returns.
int oracle_label(const SnippetPair& pair, const OfflineDataset& ds, const std::string& task,
                 Rng& rng, std::optional<double> noise_beta = std::nullopt);

/// Source of preference labels for the active loop. nullopt means skip.
class Labeler {
 public:
  virtual ~Labeler() = default;
  virtual std::optional<int> label(std::size_t pair_id, const SnippetPair& pair) = 0;
  virtual LabelSource source() const = 0;
  virtual std::string provenance() const = 0;
  /// Timestamp recorded with the label just produced.
  virtual std::string timestamp() = 0;
};

class OracleLabeler final : public Labeler {
 public:
  OracleLabeler(const OfflineDataset& ds, std::string task, std::uint64_t seed,
                std::optional<double> noise_beta = std::nullopt);

  std::optional<int> label(std::size_t pair_id, const SnippetPair& pair) override;
  LabelSource source() const override { return LabelSource::oracle; }
  std::string provenance() const override { return "oracle:" + task_; }
  std::string timestamp() override { return std::to_string(count_); }

 private:
  const OfflineDataset& ds_;
  std::string task_;
  Rng rng_;
  std::optional<double> noise_beta_;
  std::uint64_t count_ = 0;
};

enum class Choice { a, b, skip };
std::optional<Choice> parse_choice(const std::string& s);

/// Hand-off between the active loop (consumer) and the labeling service
/// (producer). At most one query is pending; each pair id is answered once.
class HumanQueue {
 public:
  /// Publishes a query and clears any previous one.
  void post(std::size_t pair_id, nlohmann::json payload);
  /// Blocks until the pending pair is answered; throws LabelerFailure on shutdown.
  Choice wait(std::size_t pair_id);
  /// Throws Conflict for a stale, unknown or already answered pair id.
  void submit(std::size_t pair_id, Choice choice);
  std::optional<nlohmann::json> pending() const;
  std::optional<std::size_t> pending_id() const;
  void shutdown();
  bool is_shut_down() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<std::size_t> pending_id_;
  nlohmann::json payload_;
  std::optional<Choice> answer_;
  std::set<std::size_t> answered_;
  bool shutdown_ = false;
};

class HumanLabeler final : public Labeler {
 public:
  /// `render` builds the query payload for a pair.
  HumanLabeler(HumanQueue& queue, std::string session,
               std::function<nlohmann::json(std::size_t, const SnippetPair&)> render);

  std::optional<int> label(std::size_t pair_id, const SnippetPair& pair) override;
  LabelSource source() const override { return LabelSource::human; }
  std::string provenance() const override { return "human:" + session_; }
  std::string timestamp() override;

 private:
  HumanQueue& queue_;
  std::string session_;
  std::function<nlohmann::json(std::size_t, const SnippetPair&)> render_;
};

}  // namespace oprl::labeling
