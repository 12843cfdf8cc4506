#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "termdp/model.hpp"

namespace termdp {

// Seeded environment families. Every planted cost is a multiple of the
// family's `resolution`, so exact evaluation and the reference planner apply.

struct RandomTermdpParams {
  int num_states = 3;
  int num_actions = 2;
  int horizon = 4;
  bool stationary = false;
  double resolution = 0.1;
  double cost_max = 1.0;      // costs drawn from the grid in [0, cost_max] ...
  bool signed_costs = false;  // ... or [-cost_max, cost_max]
  double bias = 1.0;
  int window = 0;             // 0 means w = H
  double norm_bound = 0.0;    // 0 means L = ||c||_2; otherwise costs are shrunk to fit
  int support = 0;            // next-state support size; 0 means all states
  RewardNoise reward_noise = RewardNoise::Deterministic;
};

TerMdpSpec random_termdp(const RandomTermdpParams& params, std::uint64_t seed);

/// A line of states with a safe action (low reward, zero cost) and a risky
/// one (higher reward, positive cost). Both push toward the far end.
struct ChainParams {
  int num_states = 5;
  int horizon = 5;
  double resolution = 0.1;
  double bias = 1.0;
  double safe_reward = 0.5;
  double risky_reward = 1.0;
  double risky_cost = 2.0;
  double jitter = 0.0;      // +- uniform spread (on the grid) on rewards and risky costs
  double advance = 0.8;     // probability of moving one state to the right
  int window = 0;
};

TerMdpSpec chain(const ChainParams& params, std::uint64_t seed);

/// Road seen from above. A state is the stretch of road ahead (a row of
/// `width` cells) plus the car's lane; actions 0, 1, 2 steer left, straight or
/// right into that row. Driving through a coin cell costs `coin_cost`,
/// overtake cells pay `overtake_reward` and every other cell `base_reward`.
/// The next row is drawn uniformly (a never-ending road) or, with
/// `random_rows = false`, follows a fixed loop. One lane, which also holds the
/// start, never carries coins. With `coupled`, coins appear only on overtake
/// cells and the safe lane carries neither.
struct GridworldCoinsParams {
  int width = 5;    // lanes
  int height = 5;   // distinct rows of road
  int horizon = 40;
  int window = 10;
  double bias = 6.0;
  double coin_cost = 2.0;
  double coin_density = 1.0;
  double overtake_reward = 1.0;
  double overtake_density = 0.8;
  double base_reward = 0.05;
  double resolution = 0.5;
  int safe_lane = -1;  // -1 picks the lane from the seed
  bool random_rows = true;
  bool coupled = true;
};

TerMdpSpec gridworld_coins(const GridworldCoinsParams& params, std::uint64_t seed);

/// Dispatch by family name ("random-termdp", "chain", "gridworld-coins") with
/// parameters given as a JSON object of the fields above.
TerMdpSpec generate(const std::string& family, const nlohmann::json& params, std::uint64_t seed);

/// Resolution on which the family plants its costs.
double generator_resolution(const std::string& family, const nlohmann::json& params);

}  // namespace termdp
