#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "oprl/dataset.hpp"
#include "oprl/env_id.hpp"
#include "oprl/rng.hpp"

namespace oprl::envs {

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

enum class LayoutId { umaze, medium, open };

/// Occupancy grid. Cell (row, col) covers x in [col, col+1) * cell_size and
/// y in [row, row+1) * cell_size. Angles about the maze use the usual
/// x-right / y-up orientation, so counter-clockwise is a positive atan2 step.
class MazeLayout {
 public:
  MazeLayout(LayoutId id, const std::vector<std::string>& rows, double cell_size);

  LayoutId id() const { return id_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double cell_size() const { return cell_size_; }

  bool is_wall(Cell c) const;
  bool is_free_position(double x, double y) const;
  Cell cell_of(double x, double y) const;
  Eigen::Vector2d cell_center(Cell c) const;
  const std::vector<Cell>& free_cells() const { return free_; }
  /// Mean of the free-cell centers.
  Eigen::Vector2d centroid() const;
  /// '#' wall, '.' free; row 0 first.
  std::string to_text() const;

 private:
  LayoutId id_;
  int rows_ = 0;
  int cols_ = 0;
  double cell_size_ = 1.0;
  std::vector<bool> walls_;
  std::vector<Cell> free_;
};

const MazeLayout& layout(LayoutId id);
const MazeLayout& layout_for(EnvId env);  // throws InvalidConfig for cartpole

struct MazeParams {
  double dt = 0.1;
  double accel_gain = 1.0;
  double v_max = 1.0;
};

struct MazeState {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  bool operator==(const MazeState&) const = default;
};

/// Semi-implicit Euler with axis-separated collision: a blocked axis keeps
/// its coordinate and zeroes its velocity component. Forces are clamped to
/// [-1, 1].
MazeState maze_step(const MazeLayout& layout, const MazeState& s, double ax, double ay,
                    const MazeParams& params = {});

struct CartpoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force_mag = 10.0;
  double dt = 0.02;
};

/// theta is unbounded and counter-clockwise positive (pushing the cart
/// toward +x tips the pole counter-clockwise).
struct CartpoleState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
  bool operator==(const CartpoleState&) const = default;
};

/// One explicit Euler step of the cart-pole equations. Never terminates,
/// never wraps theta, never clips x. Force saturates at +-force_mag.
CartpoleState cartpole_step(const CartpoleState& s, double force,
                            const CartpoleParams& params = {});

enum class TaskKind { goal_reach, ccw_orbit, balance, windmill_cw, windmill_ccw };

struct TaskSpec {
  EnvId env = EnvId::open_maze;
  TaskKind kind = TaskKind::goal_reach;
  Cell goal;  // goal_reach only
  double gamma = 0.99;

  std::string id() const;
};

constexpr double kBalanceMaxAngle = 24.0 * 3.14159265358979323846 / 180.0;
constexpr double kTrackLimit = 2.4;

Cell default_goal(LayoutId id);
/// Task ids: goal-reach, ccw-orbit, balance, windmill-cw, windmill-ccw.
TaskSpec make_task(EnvId env, const std::string& task_id);
std::vector<TaskSpec> tasks_for_env(EnvId env);

/// Ground-truth reward of taking `action` in `state`.
double gt_reward(const TaskSpec& task, const Eigen::VectorXd& state,
                 const Eigen::VectorXd& action);

/// Signed angle swept by p0 -> p1 about `center`, in (-pi, pi].
double angular_increment(const Eigen::Vector2d& center, const Eigen::Vector2d& p0,
                         const Eigen::Vector2d& p1);
/// Maps an unbounded angle to (-pi, pi].
double wrap_angle(double theta);

bool is_balanced(const CartpoleState& s);
bool is_windmilling(const CartpoleState& s, bool counter_clockwise);

MazeState to_maze(const Eigen::VectorXd& s);
CartpoleState to_cartpole(const Eigen::VectorXd& s);
Eigen::VectorXd to_vector(const MazeState& s);
Eigen::VectorXd to_vector(const CartpoleState& s);

/// Generic environment interface over flat state/action vectors.
Eigen::VectorXd env_step(EnvId env, const Eigen::VectorXd& state, const Eigen::VectorXd& action);
Eigen::VectorXd reset_state(EnvId env, Rng& rng);

/// Network features: maze positions re-centred and scaled to roughly [-1, 1];
/// cartpole angle encoded as (cos, sin) so wrapped angles coincide.
Eigen::VectorXd observe(EnvId env, const Eigen::VectorXd& state);
Eigen::MatrixXd observe_batch(EnvId env, const Eigen::MatrixXd& states);

/// Cartpole actions available to discrete policies.
inline std::vector<double> cartpole_forces() { return {-10.0, 10.0}; }

enum class Behavior { random_policy, random_waypoints };
std::string behavior_name(Behavior b);
Behavior parse_behavior(const std::string& name);

constexpr std::size_t kMazeEpisodeLen = 300;
constexpr std::size_t kCartpoleEpisodeLen = 200;

/// floor(steps / episode_len) full episodes plus a final partial one when at
/// least two transitions remain. Every transition carries gt rewards for all
/// tasks of the env.
OfflineDataset generate_offline_dataset(EnvId env, Behavior behavior, std::size_t steps,
                                        std::size_t episode_len, std::uint64_t seed);

}  // namespace oprl::envs
