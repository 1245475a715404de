#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "oprl/envs.hpp"
#include "oprl/errors.hpp"
#include "oracles.hpp"

using namespace oprl;
using namespace oprl::envs;

namespace {

// Classic cart-pole accelerations for an angle measured clockwise, written out
// term by term.
struct ClassicAcc {
  double x_acc;
  double phi_acc;
};

ClassicAcc classic_cartpole(double phi, double phi_dot, double force) {
  const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5;
  const double num = g * std::sin(phi) +
                     std::cos(phi) * ((-force - mp * l * phi_dot * phi_dot * std::sin(phi)) / (mc + mp));
  const double den = l * (4.0 / 3.0 - mp * std::cos(phi) * std::cos(phi) / (mc + mp));
  const double phi_acc = num / den;
  const double x_acc =
      (force + mp * l * (phi_dot * phi_dot * std::sin(phi) - phi_acc * std::cos(phi))) / (mc + mp);
  return {x_acc, phi_acc};
}

}  // namespace

TEST_CASE("layouts: borders are walls and the open room is 5x3") {
  for (auto id : {LayoutId::umaze, LayoutId::medium, LayoutId::open}) {
    const auto& lay = layout(id);
    CHECK(!lay.free_cells().empty());
    for (int r = 0; r < lay.rows(); ++r) {
      CHECK(lay.is_wall({r, 0}));
      CHECK(lay.is_wall({r, lay.cols() - 1}));
    }
    for (int c = 0; c < lay.cols(); ++c) {
      CHECK(lay.is_wall({0, c}));
      CHECK(lay.is_wall({lay.rows() - 1, c}));
    }
    CHECK(!lay.is_wall(default_goal(id)));
  }
  CHECK(layout(LayoutId::open).free_cells().size() == 15);
  CHECK(layout(LayoutId::umaze).to_text() == "#####\n#...#\n###.#\n#...#\n#####\n");
  CHECK_THROWS_AS(layout_for(EnvId::cartpole), InvalidConfig);
}

TEST_CASE("maze step: fixed point, hand-evaluated update, wall collision") {
  const auto& lay = layout(LayoutId::open);
  const MazeState rest{2.5, 2.5, 0.0, 0.0};
  CHECK(maze_step(lay, rest, 0.0, 0.0) == rest);

  const MazeState n = maze_step(lay, rest, 1.0, 0.0);
  CHECK(n.vx == doctest::Approx(0.1));
  CHECK(n.vy == 0.0);
  CHECK(n.x == doctest::Approx(2.51));
  CHECK(n.y == 2.5);

  // Right wall of the open room starts at x = 6.
  const MazeState near{5.99, 2.0, 0.5, 0.3};
  const MazeState hit = maze_step(lay, near, 1.0, 0.0);
  CHECK(hit.x == near.x);
  CHECK(hit.vx == 0.0);
  CHECK(hit.vy == doctest::Approx(0.3));
  CHECK(hit.y == doctest::Approx(2.0 + 0.3 * 0.1));

  // Forces are clamped to [-1, 1] and speed to v_max.
  CHECK(maze_step(lay, rest, 50.0, 0.0) == maze_step(lay, rest, 1.0, 0.0));
  const MazeState fast = maze_step(lay, {2.5, 2.5, 0.99, 0.0}, 1.0, 0.0);
  CHECK(fast.vx == 1.0);
}

TEST_CASE("maze fuzz: positions never enter walls") {
  Rng rng(17);
  for (auto env : {EnvId::umaze, EnvId::medium_maze, EnvId::open_maze}) {
    const auto& lay = layout_for(env);
    MazeState s = to_maze(reset_state(env, rng));
    for (int i = 0; i < 100000 / 3; ++i) {
      s = maze_step(lay, s, uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
      REQUIRE(lay.is_free_position(s.x, s.y));
      REQUIRE(std::abs(s.vx) <= 1.0);
      REQUIRE(std::abs(s.vy) <= 1.0);
      if (i % 300 == 0) s = to_maze(reset_state(env, rng));
    }
  }
}

TEST_CASE("cartpole step: equilibrium, determinism, one-step oracle") {
  const CartpoleState rest{};
  CHECK(cartpole_step(rest, 0.0) == rest);
  CHECK(cartpole_step(rest, 10.0) == cartpole_step(rest, 10.0));

  const CartpoleState n = cartpole_step(rest, 10.0);
  const ClassicAcc acc = classic_cartpole(0.0, 0.0, 10.0);
  CHECK(n.x == 0.0);
  CHECK(n.theta == 0.0);
  CHECK(n.x_dot == doctest::Approx(0.02 * acc.x_acc).epsilon(1e-12));
  // theta is counter-clockwise, the classic angle clockwise.
  CHECK(n.theta_dot == doctest::Approx(-0.02 * acc.phi_acc).epsilon(1e-12));
  CHECK(n.x_dot == doctest::Approx(0.19512).epsilon(1e-4));
  CHECK(n.theta_dot == doctest::Approx(0.29268).epsilon(1e-4));

  // Off-equilibrium state against the same oracle.
  const CartpoleState s{0.3, -0.2, 2.0, 1.5};
  const CartpoleState m = cartpole_step(s, -7.0);
  const ClassicAcc a2 = classic_cartpole(-2.0, -1.5, -7.0);
  CHECK(m.x == doctest::Approx(0.3 + 0.02 * -0.2));
  CHECK(m.theta == doctest::Approx(2.0 + 0.02 * 1.5));
  CHECK(m.x_dot == doctest::Approx(-0.2 + 0.02 * a2.x_acc).epsilon(1e-12));
  CHECK(m.theta_dot == doctest::Approx(1.5 - 0.02 * a2.phi_acc).epsilon(1e-12));

  // Saturating force; no wrapping or clipping.
  CHECK(cartpole_step(rest, 100.0) == cartpole_step(rest, 10.0));
  const CartpoleState far{10.0, 0.0, 20.0, 0.0};
  const CartpoleState f = cartpole_step(far, 10.0);
  CHECK(f.x == 10.0);
  CHECK(f.theta == 20.0);
}

TEST_CASE("ground-truth rewards") {
  const TaskSpec goal = make_task(EnvId::open_maze, "goal-reach");
  const Eigen::Vector2d gc = layout(LayoutId::open).cell_center(goal.goal);
  const Eigen::Vector2d no_force = Eigen::Vector2d::Zero();
  CHECK(gt_reward(goal, Eigen::Vector4d(gc.x(), gc.y(), 0, 0), no_force) == 1.0);
  CHECK(gt_reward(goal, Eigen::Vector4d(gc.x() - 3.0, gc.y(), 0, 0), no_force) ==
        doctest::Approx(std::exp(-3.0)));

  const Eigen::VectorXd push = Eigen::VectorXd::Zero(1);
  const TaskSpec bal = make_task(EnvId::cartpole, "balance");
  CHECK(gt_reward(bal, Eigen::Vector4d(0, 0, 0, 0), push) == 1.0);
  CHECK(gt_reward(bal, Eigen::Vector4d(3.0, 0, 0, 0), push) == 0.0);
  CHECK(gt_reward(bal, Eigen::Vector4d(0, 0, 4.0 * std::numbers::pi + 0.1, 0), push) == 1.0);
  CHECK(gt_reward(bal, Eigen::Vector4d(0, 0, 0.5, 0), push) == 0.0);

  const TaskSpec ccw = make_task(EnvId::cartpole, "windmill-ccw");
  const TaskSpec cw = make_task(EnvId::cartpole, "windmill-cw");
  CHECK(gt_reward(ccw, Eigen::Vector4d(0, 0, 1, 1), push) == 1.0);
  CHECK(gt_reward(cw, Eigen::Vector4d(0, 0, 1, 1), push) == 0.0);
  CHECK(gt_reward(cw, Eigen::Vector4d(0, 0, 1, -1), push) == 1.0);
  CHECK(gt_reward(ccw, Eigen::Vector4d(2.5, 0, 1, 1), push) == 0.0);

  CHECK_THROWS_AS(make_task(EnvId::cartpole, "goal-reach"), InvalidTask);
  CHECK_THROWS_AS(make_task(EnvId::open_maze, "balance"), InvalidTask);
}

TEST_CASE("angular increments over a sampled quarter arc sum to +-pi/2") {
  const Eigen::Vector2d c(3.5, 2.5);
  double ccw = 0.0, cw = 0.0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    const double t0 = std::numbers::pi / 2 * i / n, t1 = std::numbers::pi / 2 * (i + 1) / n;
    const Eigen::Vector2d p0 = c + Eigen::Vector2d(std::cos(t0), std::sin(t0));
    const Eigen::Vector2d p1 = c + Eigen::Vector2d(std::cos(t1), std::sin(t1));
    ccw += angular_increment(c, p0, p1);
    cw += angular_increment(c, p1, p0);
  }
  CHECK(ccw == doctest::Approx(std::numbers::pi / 2));
  CHECK(cw == doctest::Approx(-std::numbers::pi / 2));
  CHECK(angular_increment(c, c, c) == 0.0);
}

TEST_CASE("ccw-orbit reward is the angular progress of the step it takes") {
  const TaskSpec orbit = make_task(EnvId::open_maze, "ccw-orbit");
  const auto& lay = layout(LayoutId::open);
  const Eigen::Vector2d c = lay.centroid();
  const Eigen::Vector4d s(c.x() + 1.0, c.y(), 0.0, 0.5);
  const double r = gt_reward(orbit, s, Eigen::Vector2d(0.0, 1.0));
  // one step: vy' = 0.6, y' = y + 0.06
  CHECK(r == doctest::Approx(std::atan2(0.06, 1.0)));
  CHECK(r > 0.0);
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(7.0) == doctest::Approx(7.0 - 2 * std::numbers::pi));
  CHECK(wrap_angle(-13.0) == doctest::Approx(-13.0 + 4 * std::numbers::pi));
}

TEST_CASE("observation features") {
  const auto o = observe(EnvId::cartpole, Eigen::Vector4d(1.2, 2.0, std::numbers::pi / 2, 5.0));
  REQUIRE(o.size() == 5);
  CHECK(o[0] == doctest::Approx(0.5));
  CHECK(o[1] == doctest::Approx(1.0));
  CHECK(o[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(o[3] == doctest::Approx(1.0));
  CHECK(o[4] == doctest::Approx(1.0));
  // Angles a full turn apart share features.
  const auto a = observe(EnvId::cartpole, Eigen::Vector4d(0, 0, 0.3, 0));
  const auto b = observe(EnvId::cartpole, Eigen::Vector4d(0, 0, 0.3 + 2 * std::numbers::pi, 0));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);

  const auto m = observe(EnvId::open_maze, Eigen::Vector4d(3.5, 2.5, 0.1, -0.2));
  CHECK(m.head<2>().norm() < 1e-12);
  CHECK(m[2] == 0.1);
  CHECK_THROWS_AS(observe(EnvId::open_maze, Eigen::Vector3d::Zero()), ShapeError);
}

TEST_CASE("dataset generation: counting, determinism, contiguity") {
  const auto one = generate_offline_dataset(EnvId::cartpole, Behavior::random_policy, 200, 200, 3);
  REQUIRE(one.trajectories.size() == 1);
  CHECK(one.trajectories[0].length() == 200);

  const auto ds = generate_offline_dataset(EnvId::open_maze, Behavior::random_waypoints, 1001, 300, 5);
  REQUIRE(ds.trajectories.size() == 4);
  CHECK(ds.trajectories[3].length() == 101);
  CHECK(ds.transition_count() == 1001);
  CHECK(generate_offline_dataset(EnvId::open_maze, Behavior::random_waypoints, 1001, 300, 5) == ds);
  CHECK(!(generate_offline_dataset(EnvId::open_maze, Behavior::random_waypoints, 1001, 300, 6) == ds));

  // A single leftover transition is dropped.
  CHECK(generate_offline_dataset(EnvId::cartpole, Behavior::random_policy, 401, 200, 1)
            .transition_count() == 400);

  for (const auto& t : ds.trajectories) {
    for (std::size_t i = 0; i < t.length(); ++i) {
      const Eigen::VectorXd next = env_step(ds.env, t.state(i), t.actions.col(static_cast<Eigen::Index>(i)));
      REQUIRE(next == t.next_state(i));
      for (const auto& task : tasks_for_env(ds.env)) {
        REQUIRE(t.gt_rewards.at(task.id())[i] ==
                gt_reward(task, t.state(i), t.actions.col(static_cast<Eigen::Index>(i))));
      }
    }
  }
  CHECK_THROWS_AS(generate_offline_dataset(EnvId::open_maze, Behavior::random_policy, 100, 300, 1),
                  InvalidConfig);
  CHECK_THROWS_AS(generate_offline_dataset(EnvId::cartpole, Behavior::random_waypoints, 400, 200, 1),
                  InvalidConfig);
}

TEST_CASE("waypoint data visits every free cell of the open maze") {
  const auto ds =
      generate_offline_dataset(EnvId::open_maze, Behavior::random_waypoints, 100000, 300, 0);
  const auto& lay = layout(LayoutId::open);
  std::set<std::pair<int, int>> seen;
  for (const auto& t : ds.trajectories) {
    for (Eigen::Index j = 0; j < t.states.cols(); ++j) {
      const Cell c = lay.cell_of(t.states(0, j), t.states(1, j));
      seen.insert({c.row, c.col});
    }
  }
  CHECK(seen.size() == lay.free_cells().size());
}

TEST_CASE("random cartpole data rarely balances") {
  const auto ds = generate_offline_dataset(EnvId::cartpole, Behavior::random_policy, 20000, 200, 0);
  double balanced = 0.0;
  for (const auto& t : ds.trajectories) {
    for (double r : t.gt_rewards.at("balance")) balanced += r;
  }
  CHECK(balanced / static_cast<double>(ds.trajectories.size()) < 100.0);
}
