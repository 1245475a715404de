#include <doctest.h>

#include <thread>

#include "oprl/errors.hpp"
#include "oprl/labeler.hpp"

using namespace oprl;
using namespace oprl::labeling;

namespace {

// One trajectory whose balance reward at step t is rewards[t].
OfflineDataset reward_line(const std::vector<double>& rewards) {
  OfflineDataset ds;
  ds.env = EnvId::cartpole;
  Trajectory t;
  t.states = Eigen::MatrixXd::Zero(4, static_cast<Eigen::Index>(rewards.size() + 1));
  t.actions = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(rewards.size()));
  t.gt_rewards["balance"] = rewards;
  ds.trajectories.push_back(t);
  return ds;
}

}  // namespace

TEST_CASE("oracle prefers the higher return and flips when swapped") {
  const auto ds = reward_line({3.0, 5.0, 1.0, 1.0});
  const SnippetRef three{0, 0, 1}, five{0, 1, 1};
  Rng rng(0);
  CHECK(oracle_label({three, five}, ds, "balance", rng) == 1);
  CHECK(oracle_label({five, three}, ds, "balance", rng) == 0);
  CHECK_THROWS_AS(oracle_label({three, five}, ds, "windmill-cw", rng), InvalidConfig);
  CHECK_THROWS_AS(OracleLabeler(ds, "windmill-cw", 1), InvalidConfig);
}

TEST_CASE("ties are settled by a fair seeded coin") {
  const auto ds = reward_line({1.0, 1.0});
  const SnippetPair tie{{0, 0, 1}, {0, 1, 1}};
  Rng rng(42);
  int ones = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ones += oracle_label(tie, ds, "balance", rng);
  CHECK(std::abs(ones / static_cast<double>(n) - 0.5) <= 0.02);
  Rng r1(7), r2(7);
  for (int i = 0; i < 50; ++i) CHECK(oracle_label(tie, ds, "balance", r1) == oracle_label(tie, ds, "balance", r2));
}

TEST_CASE("oracle labels never form preference cycles") {
  std::vector<double> r(40);
  Rng rng(5);
  for (double& v : r) v = uniform(rng, -1.0, 1.0);
  const auto ds = reward_line(r);
  std::vector<SnippetRef> snips;
  for (std::size_t i = 0; i < 40; ++i) snips.push_back({0, i, 1});
  // prefers[i][j]: i preferred over j by some emitted label.
  std::vector<std::vector<bool>> prefers(40, std::vector<bool>(40, false));
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 40; ++j) {
      if (i == j) continue;
      const int y = oracle_label({snips[i], snips[j]}, ds, "balance", rng);
      if (y == 1) prefers[j][i] = true; else prefers[i][j] = true;
    }
  }
  // Transitive closure; a cycle shows up as prefers[i][i].
  for (std::size_t k = 0; k < 40; ++k)
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t j = 0; j < 40; ++j)
        if (prefers[i][k] && prefers[k][j]) prefers[i][j] = true;
  for (std::size_t i = 0; i < 40; ++i) CHECK(!prefers[i][i]);
}

TEST_CASE("noisy oracle follows the Bradley-Terry probability") {
  const auto ds = reward_line({0.0, 1.0});
  const SnippetPair p{{0, 0, 1}, {0, 1, 1}};
  Rng rng(3);
  int ones = 0;
  for (int i = 0; i < 20000; ++i) ones += oracle_label(p, ds, "balance", rng, 1.0);
  CHECK(ones / 20000.0 == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(0.02));
}

TEST_CASE("oracle labeler provenance and ordinal timestamps") {
  const auto ds = reward_line({0.0, 1.0});
  OracleLabeler lab(ds, "balance", 1);
  CHECK(lab.provenance() == "oracle:balance");
  CHECK(lab.source() == LabelSource::oracle);
  CHECK(lab.label(0, {{0, 0, 1}, {0, 1, 1}}) == 1);
  CHECK(lab.timestamp() == "1");
  lab.label(1, {{0, 1, 1}, {0, 0, 1}});
  CHECK(lab.timestamp() == "2");
}

TEST_CASE("choice parsing") {
  CHECK(parse_choice("a") == Choice::a);
  CHECK(parse_choice("b") == Choice::b);
  CHECK(parse_choice("skip") == Choice::skip);
  CHECK(!parse_choice("left"));
}

TEST_CASE("human labeler: a -> 0, b -> 1, skip, exactly-once, shutdown") {
  HumanQueue q;
  HumanLabeler lab(q, "s1", [](std::size_t id, const SnippetPair&) {
    return nlohmann::json{{"pair_id", id}};
  });
  CHECK(lab.provenance() == "human:s1");
  CHECK(!q.pending());

  auto answer = [&](std::size_t id, Choice c) {
    while (q.pending_id() != id) std::this_thread::yield();
    CHECK((*q.pending())["pair_id"] == id);
    q.submit(id, c);
  };
  std::thread producer([&] {
    answer(4, Choice::a);
    answer(9, Choice::b);
    answer(2, Choice::skip);
  });
  CHECK(lab.label(4, {}) == 0);
  CHECK(lab.label(9, {}) == 1);
  CHECK(!lab.label(2, {}).has_value());
  producer.join();

  CHECK_THROWS_AS(q.submit(4, Choice::b), Conflict);   // already answered
  CHECK_THROWS_AS(q.submit(77, Choice::a), Conflict);  // not pending
  q.post(5, {{"pair_id", 5}});
  q.submit(5, Choice::a);
  CHECK_THROWS_AS(q.submit(5, Choice::a), Conflict);

  std::thread closer([&] {
    while (q.pending_id() != 6) std::this_thread::yield();
    q.shutdown();
  });
  CHECK_THROWS_AS(lab.label(6, {}), LabelerFailure);
  closer.join();
  CHECK(q.is_shut_down());
  const std::string ts = lab.timestamp();
  CHECK(ts.size() == 20);
  CHECK(ts.back() == 'Z');
}
