#include "oprl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "oprl/errors.hpp"

namespace oprl {

std::string env_name(EnvId env) {
  switch (env) {
    case EnvId::umaze: return "umaze";
    case EnvId::medium_maze: return "medium-maze";
    case EnvId::open_maze: return "open-maze";
    case EnvId::cartpole: return "cartpole";
  }
  return "?";
}

EnvId parse_env(std::string_view name) {
  if (name == "umaze") return EnvId::umaze;
  if (name == "medium-maze") return EnvId::medium_maze;
  if (name == "open-maze") return EnvId::open_maze;
  if (name == "cartpole") return EnvId::cartpole;
  throw InvalidConfig("unknown env '" + std::string(name) + "'");
}

namespace envs {

MazeLayout::MazeLayout(LayoutId id, const std::vector<std::string>& rows, double cell_size)
    : id_(id), rows_(static_cast<int>(rows.size())), cell_size_(cell_size) {
  cols_ = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  walls_.resize(static_cast<std::size_t>(rows_ * cols_));
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) {
      const bool wall = rows[r][c] == '#';
      walls_[static_cast<std::size_t>(r * cols_ + c)] = wall;
      if (!wall) free_.push_back({r, c});
    }
  }
}

bool MazeLayout::is_wall(Cell c) const {
  if (c.row < 0 || c.col < 0 || c.row >= rows_ || c.col >= cols_) return true;
  return walls_[static_cast<std::size_t>(c.row * cols_ + c.col)];
}

Cell MazeLayout::cell_of(double x, double y) const {
  return {static_cast<int>(std::floor(y / cell_size_)),
          static_cast<int>(std::floor(x / cell_size_))};
}

bool MazeLayout::is_free_position(double x, double y) const {
  if (!std::isfinite(x) || !std::isfinite(y)) return false;
  return !is_wall(cell_of(x, y));
}

Eigen::Vector2d MazeLayout::cell_center(Cell c) const {
  return {(c.col + 0.5) * cell_size_, (c.row + 0.5) * cell_size_};
}

Eigen::Vector2d MazeLayout::centroid() const {
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (const Cell& c : free_) sum += cell_center(c);
  return sum / static_cast<double>(free_.size());
}

std::string MazeLayout::to_text() const {
  std::string out;
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) out += is_wall({r, c}) ? '#' : '.';
    out += '\n';
  }
  return out;
}

const MazeLayout& layout(LayoutId id) {
  static const MazeLayout umaze(LayoutId::umaze,
                                {"#####", "#...#", "###.#", "#...#", "#####"}, 1.0);
  static const MazeLayout medium(LayoutId::medium,
                                 {"########", "#..##..#", "#..#...#", "##...###", "#..#...#",
                                  "#.#..#.#", "#...#..#", "########"},
                                 1.0);
  static const MazeLayout open(LayoutId::open,
                               {"#######", "#.....#", "#.....#", "#.....#", "#######"}, 1.0);
  switch (id) {
    case LayoutId::umaze: return umaze;
    case LayoutId::medium: return medium;
    case LayoutId::open: return open;
  }
  return open;
}

const MazeLayout& layout_for(EnvId env) {
  switch (env) {
    case EnvId::umaze: return layout(LayoutId::umaze);
    case EnvId::medium_maze: return layout(LayoutId::medium);
    case EnvId::open_maze: return layout(LayoutId::open);
    case EnvId::cartpole: break;
  }
  throw InvalidConfig("cartpole has no maze layout");
}

MazeState maze_step(const MazeLayout& layout, const MazeState& s, double ax, double ay,
                    const MazeParams& params) {
  ax = std::clamp(ax, -1.0, 1.0);
  ay = std::clamp(ay, -1.0, 1.0);
  MazeState n = s;
  n.vx = std::clamp(s.vx + ax * params.dt * params.accel_gain, -params.v_max, params.v_max);
  n.vy = std::clamp(s.vy + ay * params.dt * params.accel_gain, -params.v_max, params.v_max);
  const double nx = s.x + n.vx * params.dt;
  if (layout.is_free_position(nx, s.y)) {
    n.x = nx;
  } else {
    n.vx = 0.0;
  }
  const double ny = s.y + n.vy * params.dt;
  if (layout.is_free_position(n.x, ny)) {
    n.y = ny;
  } else {
    n.vy = 0.0;
  }
  return n;
}

CartpoleState cartpole_step(const CartpoleState& s, double force, const CartpoleParams& p) {
  force = std::clamp(force, -p.force_mag, p.force_mag);
  const double total_mass = p.cart_mass + p.pole_mass;
  const double pole_mass_length = p.pole_mass * p.half_length;
  // The classic equations measure the angle clockwise; phi is that angle.
  const double phi = -s.theta;
  const double phi_dot = -s.theta_dot;
  const double sin_phi = std::sin(phi);
  const double cos_phi = std::cos(phi);
  const double temp = (force + pole_mass_length * phi_dot * phi_dot * sin_phi) / total_mass;
  const double phi_acc =
      (p.gravity * sin_phi - cos_phi * temp) /
      (p.half_length * (4.0 / 3.0 - p.pole_mass * cos_phi * cos_phi / total_mass));
  const double x_acc = temp - pole_mass_length * phi_acc * cos_phi / total_mass;

  CartpoleState n;
  n.x = s.x + p.dt * s.x_dot;
  n.x_dot = s.x_dot + p.dt * x_acc;
  n.theta = s.theta + p.dt * s.theta_dot;
  n.theta_dot = s.theta_dot - p.dt * phi_acc;
  return n;
}

namespace {

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::goal_reach: return "goal-reach";
    case TaskKind::ccw_orbit: return "ccw-orbit";
    case TaskKind::balance: return "balance";
    case TaskKind::windmill_cw: return "windmill-cw";
    case TaskKind::windmill_ccw: return "windmill-ccw";
  }
  return "?";
}

LayoutId layout_id(EnvId env) { return layout_for(env).id(); }

}  // namespace

std::string TaskSpec::id() const { return task_kind_name(kind); }

Cell default_goal(LayoutId id) {
  switch (id) {
    case LayoutId::umaze: return {1, 1};
    case LayoutId::medium: return {6, 6};
    case LayoutId::open: return {1, 5};
  }
  return {1, 1};
}

TaskSpec make_task(EnvId env, const std::string& task_id) {
  TaskSpec t;
  t.env = env;
  if (is_maze(env)) {
    if (task_id == "goal-reach") {
      t.kind = TaskKind::goal_reach;
      t.goal = default_goal(layout_id(env));
    } else if (task_id == "ccw-orbit") {
      t.kind = TaskKind::ccw_orbit;
    } else {
      throw InvalidTask("task '" + task_id + "' is not defined for " + env_name(env));
    }
  } else {
    if (task_id == "balance") {
      t.kind = TaskKind::balance;
    } else if (task_id == "windmill-cw") {
      t.kind = TaskKind::windmill_cw;
    } else if (task_id == "windmill-ccw") {
      t.kind = TaskKind::windmill_ccw;
    } else {
      throw InvalidTask("task '" + task_id + "' is not defined for cartpole");
    }
  }
  if (t.kind == TaskKind::goal_reach && layout_for(env).is_wall(t.goal)) {
    throw InvalidTask("goal cell is a wall");
  }
  return t;
}

std::vector<TaskSpec> tasks_for_env(EnvId env) {
  if (is_maze(env)) return {make_task(env, "goal-reach"), make_task(env, "ccw-orbit")};
  return {make_task(env, "balance"), make_task(env, "windmill-cw"),
          make_task(env, "windmill-ccw")};
}

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  if (w > std::numbers::pi) w -= two_pi;
  return w;
}

double angular_increment(const Eigen::Vector2d& center, const Eigen::Vector2d& p0,
                         const Eigen::Vector2d& p1) {
  const Eigen::Vector2d u = p0 - center;
  const Eigen::Vector2d v = p1 - center;
  const double cross = u.x() * v.y() - u.y() * v.x();
  const double dot = u.dot(v);
  if (cross == 0.0 && dot == 0.0) return 0.0;
  return std::atan2(cross, dot);
}

bool is_balanced(const CartpoleState& s) {
  return std::abs(wrap_angle(s.theta)) <= kBalanceMaxAngle && s.x >= -kTrackLimit &&
         s.x <= kTrackLimit;
}

bool is_windmilling(const CartpoleState& s, bool counter_clockwise) {
  if (s.x < -kTrackLimit || s.x > kTrackLimit) return false;
  return counter_clockwise ? s.theta_dot > 0.0 : s.theta_dot < 0.0;
}

MazeState to_maze(const Eigen::VectorXd& s) {
  if (s.size() != 4) throw ShapeError("maze state must have 4 entries");
  return {s[0], s[1], s[2], s[3]};
}

CartpoleState to_cartpole(const Eigen::VectorXd& s) {
  if (s.size() != 4) throw ShapeError("cartpole state must have 4 entries");
  return {s[0], s[1], s[2], s[3]};
}

Eigen::VectorXd to_vector(const MazeState& s) { return Eigen::Vector4d(s.x, s.y, s.vx, s.vy); }

Eigen::VectorXd to_vector(const CartpoleState& s) {
  return Eigen::Vector4d(s.x, s.x_dot, s.theta, s.theta_dot);
}

double gt_reward(const TaskSpec& task, const Eigen::VectorXd& state,
                 const Eigen::VectorXd& action) {
  switch (task.kind) {
    case TaskKind::goal_reach: {
      const auto& lay = layout_for(task.env);
      const MazeState s = to_maze(state);
      return std::exp(-(Eigen::Vector2d(s.x, s.y) - lay.cell_center(task.goal)).norm());
    }
    case TaskKind::ccw_orbit: {
      const auto& lay = layout_for(task.env);
      const MazeState s = to_maze(state);
      if (action.size() != 2) throw ShapeError("maze action must have 2 entries");
      const MazeState n = maze_step(lay, s, action[0], action[1]);
      return angular_increment(lay.centroid(), {s.x, s.y}, {n.x, n.y});
    }
    case TaskKind::balance:
      return is_balanced(to_cartpole(state)) ? 1.0 : 0.0;
    case TaskKind::windmill_cw:
      return is_windmilling(to_cartpole(state), false) ? 1.0 : 0.0;
    case TaskKind::windmill_ccw:
      return is_windmilling(to_cartpole(state), true) ? 1.0 : 0.0;
  }
  throw InvalidTask("unknown task");
}

Eigen::VectorXd env_step(EnvId env, const Eigen::VectorXd& state, const Eigen::VectorXd& action) {
  if (action.size() != static_cast<Eigen::Index>(action_dim(env))) {
    throw ShapeError("action dimension mismatch for " + env_name(env));
  }
  if (is_maze(env)) {
    return to_vector(maze_step(layout_for(env), to_maze(state), action[0], action[1]));
  }
  return to_vector(cartpole_step(to_cartpole(state), action[0]));
}

Eigen::VectorXd reset_state(EnvId env, Rng& rng) {
  if (is_maze(env)) {
    const auto& lay = layout_for(env);
    const Cell c = lay.free_cells()[uniform_index(rng, lay.free_cells().size())];
    const double cs = lay.cell_size();
    MazeState s;
    s.x = (c.col + uniform(rng, 0.2, 0.8)) * cs;
    s.y = (c.row + uniform(rng, 0.2, 0.8)) * cs;
    return to_vector(s);
  }
  CartpoleState s;
  s.x = uniform(rng, -0.05, 0.05);
  s.x_dot = uniform(rng, -0.05, 0.05);
  s.theta = uniform(rng, -0.05, 0.05);
  s.theta_dot = uniform(rng, -0.05, 0.05);
  return to_vector(s);
}

Eigen::VectorXd observe(EnvId env, const Eigen::VectorXd& state) {
  if (state.size() != static_cast<Eigen::Index>(state_dim(env))) {
    throw ShapeError("state dimension mismatch for " + env_name(env));
  }
  Eigen::VectorXd o(static_cast<Eigen::Index>(obs_dim(env)));
  if (is_maze(env)) {
    const auto& lay = layout_for(env);
    const double half_w = 0.5 * (lay.cols() - 2) * lay.cell_size();
    const double half_h = 0.5 * (lay.rows() - 2) * lay.cell_size();
    const double cx = 0.5 * lay.cols() * lay.cell_size();
    const double cy = 0.5 * lay.rows() * lay.cell_size();
    o << (state[0] - cx) / half_w, (state[1] - cy) / half_h, state[2], state[3];
  } else {
    o << state[0] / kTrackLimit, state[1] / 2.0, std::cos(state[2]), std::sin(state[2]),
        state[3] / 5.0;
  }
  return o;
}

Eigen::MatrixXd observe_batch(EnvId env, const Eigen::MatrixXd& states) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(obs_dim(env)), states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) out.col(j) = observe(env, states.col(j));
  return out;
}

std::string behavior_name(Behavior b) {
  return b == Behavior::random_policy ? "random-policy" : "random-waypoints";
}

Behavior parse_behavior(const std::string& name) {
  if (name == "random-policy") return Behavior::random_policy;
  if (name == "random-waypoints") return Behavior::random_waypoints;
  throw InvalidConfig("unknown behavior '" + name + "'");
}

namespace {

constexpr double kWaypointArrival = 0.3;
constexpr std::size_t kWaypointTimeout = 100;
constexpr double kSteerGain = 1.5;
constexpr double kSteerDamping = 1.0;
constexpr double kSteerNoise = 0.1;

struct WaypointSteer {
  Eigen::Vector2d target;
  std::size_t age = 0;
};

Eigen::Vector2d draw_waypoint(const MazeLayout& lay, Rng& rng) {
  return lay.cell_center(lay.free_cells()[uniform_index(rng, lay.free_cells().size())]);
}

Eigen::VectorXd behavior_action(EnvId env, Behavior behavior, const Eigen::VectorXd& state,
                                WaypointSteer& steer, Rng& rng) {
  if (!is_maze(env)) {
    Eigen::VectorXd a(1);
    a[0] = coin(rng) ? 10.0 : -10.0;
    return a;
  }
  Eigen::VectorXd a(2);
  if (behavior == Behavior::random_policy) {
    a[0] = uniform(rng, -1.0, 1.0);
    a[1] = uniform(rng, -1.0, 1.0);
    return a;
  }
  const auto& lay = layout_for(env);
  const Eigen::Vector2d p(state[0], state[1]);
  if ((p - steer.target).norm() < kWaypointArrival || steer.age >= kWaypointTimeout) {
    steer.target = draw_waypoint(lay, rng);
    steer.age = 0;
  }
  ++steer.age;
  const Eigen::Vector2d v(state[2], state[3]);
  const Eigen::Vector2d u = kSteerGain * (steer.target - p) - kSteerDamping * v;
  a[0] = std::clamp(u.x() + kSteerNoise * normal01(rng), -1.0, 1.0);
  a[1] = std::clamp(u.y() + kSteerNoise * normal01(rng), -1.0, 1.0);
  return a;
}

}  // namespace

OfflineDataset generate_offline_dataset(EnvId env, Behavior behavior, std::size_t steps,
                                        std::size_t episode_len, std::uint64_t seed) {
  if (episode_len < 2 || steps < episode_len) {
    throw InvalidConfig("dataset generation requires steps >= episode_len >= 2");
  }
  if (!is_maze(env) && behavior == Behavior::random_waypoints) {
    throw InvalidConfig("random-waypoints behavior needs a maze env");
  }
  OfflineDataset ds;
  ds.env = env;
  ds.meta = {behavior_name(behavior), seed, steps, episode_len};
  const auto tasks = tasks_for_env(env);
  Rng rng(seed);
  const auto sdim = static_cast<Eigen::Index>(state_dim(env));
  const auto adim = static_cast<Eigen::Index>(action_dim(env));

  std::size_t remaining = steps;
  while (remaining >= 2) {
    const std::size_t len = std::min(remaining, episode_len);
    remaining -= len;
    Trajectory traj;
    traj.states.resize(sdim, static_cast<Eigen::Index>(len + 1));
    traj.actions.resize(adim, static_cast<Eigen::Index>(len));
    for (const auto& t : tasks) traj.gt_rewards[t.id()].reserve(len);

    Eigen::VectorXd s = reset_state(env, rng);
    WaypointSteer steer;
    if (is_maze(env)) steer.target = draw_waypoint(layout_for(env), rng);
    traj.states.col(0) = s;
    for (std::size_t t = 0; t < len; ++t) {
      const Eigen::VectorXd a = behavior_action(env, behavior, s, steer, rng);
      for (const auto& task : tasks) traj.gt_rewards[task.id()].push_back(gt_reward(task, s, a));
      s = env_step(env, s, a);
      traj.actions.col(static_cast<Eigen::Index>(t)) = a;
      traj.states.col(static_cast<Eigen::Index>(t + 1)) = s;
    }
    ds.trajectories.push_back(std::move(traj));
  }
  return ds;
}

}  // namespace envs
}  // namespace oprl
