#include <doctest.h>

#include <fstream>

#include "oprl/config.hpp"
#include "oprl/errors.hpp"
#include "oracles.hpp"

using namespace oprl;
using namespace oprl::config;

TEST_CASE("defaults and typed accessors") {
  RunConfig c;
  CHECK(c.get("env") == "open-maze");
  CHECK(c.is_auto("gamma"));
  CHECK(c.count("ensemble-size") == 7);
  CHECK(c.count("dropout-passes") == 30);
  CHECK(c.real("dropout-rate") == 0.5);
  CHECK(c.counts("reward-hidden") == std::vector<std::size_t>{64, 64});
  CHECK(!c.optional_real("oracle-noise-beta").has_value());
  c.set("values", "1, 5,10");
  CHECK(c.list("values") == std::vector<std::string>{"1", "5", "10"});
  c.set("oracle-noise-beta", "2.5");
  CHECK(*c.optional_real("oracle-noise-beta") == 2.5);

  CHECK_THROWS_AS(c.set("no-such-key", "1"), InvalidConfig);
  CHECK_THROWS_AS(c.get("no-such-key"), InvalidConfig);
  c.set("rounds", "-3");
  CHECK_THROWS_AS(c.count("rounds"), InvalidConfig);
  c.set("bt-beta", "1.5x");
  CHECK_THROWS_AS(c.real("bt-beta"), InvalidConfig);
  c.set("reward-hidden", "64,x");
  CHECK_THROWS_AS(c.counts("reward-hidden"), InvalidConfig);
  c.set("env", "mountaincar");
  CHECK_THROWS_AS(c.env(), InvalidConfig);

  for (const auto& k : known_keys()) CHECK(is_known_key(k.name));
}

TEST_CASE("auto values resolve per environment") {
  RunConfig maze;
  maze.resolve();
  CHECK(maze.get("initial") == "5");
  CHECK(maze.get("per-round") == "1");
  CHECK(maze.get("episode-len") == "300");
  CHECK(maze.get("behavior") == "random-waypoints");
  CHECK(maze.get("label-task") == "goal-reach");
  CHECK(maze.get("posterior") == "ensemble");

  RunConfig cart;
  cart.set("env", "cartpole");
  cart.set("task", "balance");
  cart.set("method", "dropinfo");
  cart.set("initial", "7");
  cart.resolve();
  CHECK(cart.get("initial") == "7");
  CHECK(cart.get("per-round") == "10");
  CHECK(cart.get("episode-len") == "200");
  CHECK(cart.get("eval-len") == "200");
  CHECK(cart.get("behavior") == "random-policy");
  CHECK(cart.get("label-task") == "balance");
  CHECK(cart.get("posterior") == "dropout");
  for (const auto& [k, v] : cart.values()) CHECK(v != "auto");
}

TEST_CASE("config text parsing") {
  const auto m = parse_config_text("# comment\nenv = cartpole\n\n  rounds=4   # trailing\nvalues = a,b\n");
  CHECK(m.size() == 3);
  CHECK(m.at("env") == "cartpole");
  CHECK(m.at("rounds") == "4");
  CHECK(m.at("values") == "a,b");
  try {
    parse_config_text("env = cartpole\nrounds 4\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  try {
    parse_config_text("\n\nsped = 1\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(load_config_file("/nonexistent/oprl.cfg"), IoError);
}

TEST_CASE("precedence: defaults < file < overrides") {
  const RunConfig c = merge({{"rounds", "4"}, {"seed", "9"}}, {{"seed", "11"}});
  CHECK(c.get("rounds") == "4");
  CHECK(c.get("seed") == "11");
  CHECK(c.get("ensemble-size") == "7");
  CHECK_THROWS_AS(merge({{"bogus", "1"}}, {}), InvalidConfig);
}

TEST_CASE("manifest reproduces the resolved config") {
  oracle::TempDir dir("cfg");
  const RunConfig c = merge({{"env", "cartpole"}, {"task", "windmill-ccw"}}, {{"rounds", "2"}});
  write_manifest({"reward", c, {0, 1, 2}}, dir.path);
  const RunConfig back = merge(load_config_file(dir.path / "manifest.cfg"), {});
  CHECK(back.values() == c.values());

  std::ifstream in(dir.path / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["command"] == "reward");
  CHECK(j["seeds"] == nlohmann::json::array({0, 1, 2}));
  CHECK(j["config"]["task"] == "windmill-ccw");
  CHECK(j["config"].size() == known_keys().size());
}
