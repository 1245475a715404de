#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace oprl {

enum class EnvId { umaze, medium_maze, open_maze, cartpole };

std::string env_name(EnvId env);
EnvId parse_env(std::string_view name);  // throws InvalidConfig

inline bool is_maze(EnvId env) { return env != EnvId::cartpole; }
inline std::size_t state_dim(EnvId) { return 4; }
inline std::size_t action_dim(EnvId env) { return is_maze(env) ? 2 : 1; }
/// Width of the feature vector fed to networks (see envs::observe).
inline std::size_t obs_dim(EnvId env) { return is_maze(env) ? 4 : 5; }

}  // namespace oprl
