#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "oprl/config.hpp"
#include "oprl/dataset.hpp"
#include "oprl/envs.hpp"
#include "oprl/labeler.hpp"
#include "oprl/pipeline.hpp"

// Single-session labeling service: the active loop runs on a background
// thread with a human labeler, and HTTP handlers read or answer its queries.
namespace oprl::service {

/// Posterior-mean reward on a regular grid over the bounding box of the
/// layout's free cells, at zero velocity. Wall samples are null.
struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t resolution = 1;  // samples per cell side
  double x0 = 0.0;             // centre of sample (0, 0)
  double y0 = 0.0;
  double step = 1.0;
  std::vector<std::optional<double>> values;  // row-major, row = y index

  /// World position of sample (r, c).
  Eigen::Vector2d point(std::size_t r, std::size_t c) const;
};

Heatmap reward_heatmap(const reward::RewardPosterior& post, const envs::MazeLayout& layout,
                       std::size_t resolution);
nlohmann::json heatmap_to_json(const Heatmap& h);

/// Query body shown to the labeler: both snippets as raw state sequences
/// plus what a client needs to draw them.
nlohmann::json render_query(const OfflineDataset& ds, std::size_t pair_id, const SnippetPair& pair);
nlohmann::json env_metadata(EnvId env);

struct Response {
  int status = 200;
  nlohmann::json body;
};

class LabelingSession {
 public:
  LabelingSession(OfflineDataset ds, config::RunConfig cfg);
  ~LabelingSession();
  LabelingSession(const LabelingSession&) = delete;
  LabelingSession& operator=(const LabelingSession&) = delete;

  /// Starts the active loop; outputs go to `out` when set.
  void start(const std::filesystem::path& out = {});
  /// Unblocks and joins the loop thread.
  void stop();
  /// Blocks until the loop finishes or fails.
  void wait();

  Response get_query() const;
  Response post_label(const std::string& body);
  Response get_status() const;
  Response get_reward_map() const;

  bool finished() const { return finished_; }
  const std::string& run_id() const { return run_id_; }
  const OfflineDataset& dataset() const { return ds_; }
  const config::RunConfig& config() const { return cfg_; }
  /// Posterior-mean reward of arbitrary feature columns under the session lock.
  Eigen::RowVectorXd mean_reward(const nn::Matrix& features) const;

 private:
  OfflineDataset ds_;
  config::RunConfig cfg_;
  std::uint64_t seed_ = 0;
  std::string run_id_;
  pipeline::QuerySetup setup_;
  labeling::HumanQueue queue_;
  mutable std::mutex posterior_mu_;
  mutable std::mutex state_mu_;
  std::size_t labels_ = 0;
  std::size_t skipped_ = 0;
  std::size_t rounds_done_ = 0;
  std::vector<double> accuracy_;
  std::optional<std::string> error_;
  std::atomic<bool> finished_{false};
  std::atomic<bool> started_{false};
  std::thread worker_;
};

/// HTTP front end: GET /api/query, POST /api/label, GET /api/status,
/// GET /api/reward-map.
class HttpServer {
 public:
  explicit HttpServer(LabelingSession& session);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on a background thread after bind().
  void start();
  /// Serves on the calling thread until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace oprl::service
