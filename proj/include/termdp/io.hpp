#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "termdp/model.hpp"

namespace termdp {

// Spec interchange format. Keys: S, A, H, stationary, transitions, rewards,
// costs, bias, window, norm_bound_L, reward_noise, initial_state. Tables are
// nested arrays indexed [h][s][a] (or [s][a] when stationary); transitions
// carry one more level for s'.
nlohmann::json spec_to_json(const TerMdpSpec& spec);
TerMdpSpec spec_from_json(const nlohmann::json& j);

TerMdpSpec load_spec(const std::string& path);
void save_spec(const TerMdpSpec& spec, const std::string& path);

nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

/// One JSON object per line.
std::vector<Trajectory> read_trajectories(std::istream& in);
void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajs);

}  // namespace termdp
