#include "oprl/labeler.hpp"

#include <chrono>
#include <ctime>

#include "oprl/errors.hpp"
#include "oprl/reward_model.hpp"

namespace oprl::labeling {

int oracle_label(const SnippetPair& pair, const OfflineDataset& ds, const std::string& task,
                 Rng& rng, std::optional<double> noise_beta) {
  if (!ds.has_gt(task)) throw InvalidConfig("oracle needs the gt channel for " + task);
  const double ra = snippet_gt_return(ds, pair.a, task);
  const double rb = snippet_gt_return(ds, pair.b, task);
  if (noise_beta) return coin(rng, reward::bt_prob(ra, rb, *noise_beta)) ? 1 : 0;
  if (rb > ra) return 1;
  if (ra > rb) return 0;
  return coin(rng) ? 1 : 0;
}

OracleLabeler::OracleLabeler(const OfflineDataset& ds, std::string task, std::uint64_t seed,
                             std::optional<double> noise_beta)
    : ds_(ds), task_(std::move(task)), rng_(seed), noise_beta_(noise_beta) {
  if (!ds_.has_gt(task_)) throw InvalidConfig("oracle needs the gt channel for " + task_);
}

std::optional<int> OracleLabeler::label(std::size_t, const SnippetPair& pair) {
  ++count_;
  return oracle_label(pair, ds_, task_, rng_, noise_beta_);
}

std::optional<Choice> parse_choice(const std::string& s) {
  if (s == "a") return Choice::a;
  if (s == "b") return Choice::b;
  if (s == "skip") return Choice::skip;
  return std::nullopt;
}

void HumanQueue::post(std::size_t pair_id, nlohmann::json payload) {
  std::lock_guard lock(mu_);
  pending_id_ = pair_id;
  payload_ = std::move(payload);
  answer_.reset();
}

Choice HumanQueue::wait(std::size_t pair_id) {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return shutdown_ || (pending_id_ == pair_id && answer_); });
  if (shutdown_ && !(pending_id_ == pair_id && answer_)) {
    throw LabelerFailure("labeling service shut down");
  }
  const Choice c = *answer_;
  pending_id_.reset();
  answer_.reset();
  payload_ = nullptr;
  return c;
}

void HumanQueue::submit(std::size_t pair_id, Choice choice) {
  {
    std::lock_guard lock(mu_);
    if (answered_.count(pair_id)) throw Conflict("pair " + std::to_string(pair_id) + " already answered");
    if (pending_id_ != pair_id || answer_) {
      throw Conflict("pair " + std::to_string(pair_id) + " is not the pending query");
    }
    answer_ = choice;
    answered_.insert(pair_id);
  }
  cv_.notify_all();
}

std::optional<nlohmann::json> HumanQueue::pending() const {
  std::lock_guard lock(mu_);
  if (!pending_id_ || answer_) return std::nullopt;
  return payload_;
}

std::optional<std::size_t> HumanQueue::pending_id() const {
  std::lock_guard lock(mu_);
  if (!pending_id_ || answer_) return std::nullopt;
  return pending_id_;
}

void HumanQueue::shutdown() {
  {
    std::lock_guard lock(mu_);
    shutdown_ = true;
  }
  cv_.notify_all();
}

bool HumanQueue::is_shut_down() const {
  std::lock_guard lock(mu_);
  return shutdown_;
}

HumanLabeler::HumanLabeler(HumanQueue& queue, std::string session,
                           std::function<nlohmann::json(std::size_t, const SnippetPair&)> render)
    : queue_(queue), session_(std::move(session)), render_(std::move(render)) {}

std::optional<int> HumanLabeler::label(std::size_t pair_id, const SnippetPair& pair) {
  queue_.post(pair_id, render_(pair_id, pair));
  switch (queue_.wait(pair_id)) {
    case Choice::a: return 0;
    case Choice::b: return 1;
    case Choice::skip: return std::nullopt;
  }
  return std::nullopt;
}

std::string HumanLabeler::timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace oprl::labeling
