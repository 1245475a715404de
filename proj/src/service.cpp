#include "oprl/service.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdio>

#include "oprl/errors.hpp"

namespace oprl::service {

Eigen::Vector2d Heatmap::point(std::size_t r, std::size_t c) const {
  return {x0 + step * static_cast<double>(c), y0 + step * static_cast<double>(r)};
}

Heatmap reward_heatmap(const reward::RewardPosterior& post, const envs::MazeLayout& layout,
                       std::size_t resolution) {
  if (resolution == 0) throw InvalidConfig("heatmap resolution must be positive");
  int rmin = layout.rows(), rmax = -1, cmin = layout.cols(), cmax = -1;
  for (const auto& c : layout.free_cells()) {
    rmin = std::min(rmin, c.row);
    rmax = std::max(rmax, c.row);
    cmin = std::min(cmin, c.col);
    cmax = std::max(cmax, c.col);
  }
  Heatmap h;
  h.resolution = resolution;
  h.rows = static_cast<std::size_t>(rmax - rmin + 1) * resolution;
  h.cols = static_cast<std::size_t>(cmax - cmin + 1) * resolution;
  h.step = layout.cell_size() / static_cast<double>(resolution);
  h.x0 = cmin * layout.cell_size() + h.step / 2.0;
  h.y0 = rmin * layout.cell_size() + h.step / 2.0;

  std::vector<std::size_t> free_idx;
  std::vector<Eigen::VectorXd> states;
  for (std::size_t r = 0; r < h.rows; ++r) {
    for (std::size_t c = 0; c < h.cols; ++c) {
      const Eigen::Vector2d p = h.point(r, c);
      if (!layout.is_free_position(p.x(), p.y())) continue;
      free_idx.push_back(r * h.cols + c);
      Eigen::VectorXd s(4);
      s << p.x(), p.y(), 0.0, 0.0;
      states.push_back(s);
    }
  }
  h.values.assign(h.rows * h.cols, std::nullopt);
  if (states.empty()) return h;
  Eigen::MatrixXd sm(4, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) sm.col(static_cast<Eigen::Index>(i)) = states[i];
  const Eigen::RowVectorXd v = reward::mean_reward(post, envs::observe_batch(post.env(), sm));
  for (std::size_t i = 0; i < free_idx.size(); ++i) h.values[free_idx[i]] = v[static_cast<Eigen::Index>(i)];
  return h;
}

nlohmann::json heatmap_to_json(const Heatmap& h) {
  nlohmann::json grid = nlohmann::json::array();
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t r = 0; r < h.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < h.cols; ++c) {
      const auto& v = h.values[r * h.cols + c];
      if (v) {
        row.push_back(*v);
        lo = std::min(lo, *v);
        hi = std::max(hi, *v);
      } else {
        row.push_back(nullptr);
      }
    }
    grid.push_back(std::move(row));
  }
  nlohmann::json out{{"rows", h.rows}, {"cols", h.cols}, {"resolution", h.resolution},
                     {"x0", h.x0},     {"y0", h.y0},     {"step", h.step},
                     {"values", grid}};
  if (lo <= hi) {
    out["min"] = lo;
    out["max"] = hi;
  }
  return out;
}

nlohmann::json env_metadata(EnvId env) {
  if (is_maze(env)) {
    const auto& l = envs::layout_for(env);
    nlohmann::json rows = nlohmann::json::array();
    std::string text = l.to_text();
    std::size_t start = 0;
    while (start < text.size()) {
      const auto nl = text.find('\n', start);
      rows.push_back(text.substr(start, nl - start));
      if (nl == std::string::npos) break;
      start = nl + 1;
    }
    return {{"env", env_name(env)},
            {"kind", "maze"},
            {"layout", rows},
            {"cell_size", l.cell_size()},
            {"state_fields", {"x", "y", "vx", "vy"}}};
  }
  return {{"env", env_name(env)},
          {"kind", "cartpole"},
          {"track_limit", envs::kTrackLimit},
          {"pole_half_length", 0.5},
          {"state_fields", {"x", "x_dot", "theta", "theta_dot"}}};
}

nlohmann::json render_query(const OfflineDataset& ds, std::size_t pair_id, const SnippetPair& pair) {
  auto snippet = [&](const SnippetRef& s) {
    const Eigen::MatrixXd st = snippet_states(ds, s);
    nlohmann::json states = nlohmann::json::array();
    for (Eigen::Index c = 0; c < st.cols(); ++c) {
      states.push_back(std::vector<double>(st.col(c).data(), st.col(c).data() + st.rows()));
    }
    return nlohmann::json{{"trajectory", s.traj}, {"start", s.start}, {"length", s.length},
                          {"states", states}};
  };
  return {{"pair_id", pair_id},
          {"snippets", {snippet(pair.a), snippet(pair.b)}},
          {"env", env_metadata(ds.env)}};
}

LabelingSession::LabelingSession(OfflineDataset ds, config::RunConfig cfg)
    : ds_(std::move(ds)),
      cfg_(std::move(cfg)),
      seed_(cfg_.u64("seed")),
      setup_(pipeline::prepare_queries(ds_, cfg_, seed_)) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%s-%llu", cfg_.get("env").c_str(), cfg_.get("method").c_str(),
                static_cast<unsigned long long>(seed_));
  run_id_ = buf;
}

LabelingSession::~LabelingSession() { stop(); }

void LabelingSession::start(const std::filesystem::path& out) {
  if (started_.exchange(true)) throw Conflict("session already started");
  worker_ = std::thread([this, out] {
    labeling::HumanLabeler labeler(queue_, run_id_, [this](std::size_t id, const SnippetPair& p) {
      return render_query(ds_, id, p);
    });
    pipeline::LoopOptions opts;
    opts.out = out;
    opts.posterior_mutex = &posterior_mu_;
    opts.on_round = [this](const acquisition::RoundRecord& rec, const reward::RewardPosterior&) {
      std::lock_guard lock(state_mu_);
      rounds_done_ = rec.round;
      if (rec.heldout_accuracy) accuracy_.push_back(*rec.heldout_accuracy);
    };
    try {
      pipeline::learn_reward(ds_, cfg_, seed_, setup_, labeler, opts);
    } catch (const std::exception& e) {
      std::lock_guard lock(state_mu_);
      if (!queue_.is_shut_down()) error_ = e.what();
    }
    finished_ = true;
  });
}

void LabelingSession::stop() {
  queue_.shutdown();
  if (worker_.joinable()) worker_.join();
}

void LabelingSession::wait() {
  if (worker_.joinable()) worker_.join();
}

Response LabelingSession::get_query() const {
  if (auto q = queue_.pending()) return {200, *q};
  return {204, nullptr};
}

Response LabelingSession::post_label(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return {400, {{"error", "body is not JSON"}}};
  }
  if (!j.is_object() || !j.contains("pair_id") || !j["pair_id"].is_number_unsigned() ||
      !j.contains("choice") || !j["choice"].is_string()) {
    return {400, {{"error", "expected {\"pair_id\": <id>, \"choice\": \"a\" | \"b\" | \"skip\"}"}}};
  }
  const auto choice = labeling::parse_choice(j["choice"].get<std::string>());
  if (!choice) return {400, {{"error", "choice must be a, b or skip"}}};
  const auto id = j["pair_id"].get<std::size_t>();
  try {
    std::lock_guard lock(state_mu_);
    queue_.submit(id, *choice);
    if (*choice == labeling::Choice::skip) {
      ++skipped_;
    } else {
      ++labels_;
    }
  } catch (const Conflict& e) {
    return {409, {{"error", e.what()}}};
  }
  return {200, {{"accepted", true}, {"pair_id", id}, {"choice", j["choice"]}}};
}

Response LabelingSession::get_status() const {
  std::lock_guard lock(state_mu_);
  const auto sched = pipeline::schedule(cfg_);
  nlohmann::json body{{"run_id", run_id_},
                      {"env", cfg_.get("env")},
                      {"method", cfg_.get("method")},
                      {"labels", labels_},
                      {"skipped", skipped_},
                      {"labels_total", sched.total()},
                      {"round", rounds_done_},
                      {"rounds_total", sched.rounds},
                      {"accuracy", accuracy_},
                      {"pending", queue_.pending_id().has_value()},
                      {"finished", finished_.load()}};
  if (error_) body["error"] = *error_;
  return {200, body};
}

Response LabelingSession::get_reward_map() const {
  if (!is_maze(ds_.env)) {
    return {422, {{"error", "reward map is only available for maze environments"}}};
  }
  std::lock_guard lock(posterior_mu_);
  const Heatmap h = reward_heatmap(setup_.posterior, envs::layout_for(ds_.env),
                                   cfg_.count("heatmap-resolution"));
  return {200, heatmap_to_json(h)};
}

Eigen::RowVectorXd LabelingSession::mean_reward(const nn::Matrix& features) const {
  std::lock_guard lock(posterior_mu_);
  return reward::mean_reward(setup_.posterior, features);
}

struct HttpServer::Impl {
  LabelingSession& session;
  httplib::Server server;
  std::thread thread;

  explicit Impl(LabelingSession& s) : session(s) {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", "*");
      if (r.status != 204) res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/api/query", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, session.get_query());
    });
    server.Post("/api/label", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, session.post_label(req.body));
    });
    server.Get("/api/status", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, session.get_status());
    });
    server.Get("/api/reward-map", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, session.get_reward_map());
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
  }
};

HttpServer::HttpServer(LabelingSession& session) : impl_(std::make_unique<Impl>(session)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace oprl::service
