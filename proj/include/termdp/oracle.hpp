#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "termdp/model.hpp"

namespace termdp {

// Exhaustive reference computations for tiny instances. They work on raw
// (unquantized) costs and full histories, and share no code with the planner.

/// Fills `probs` (size A) with the action distribution at the given history.
using StochasticPolicy = std::function<void(const StepContext&, std::span<double> probs)>;

struct Outcome {
  std::vector<int> states;
  std::vector<int> actions;
  bool terminated = false;
  double probability = 0.0;
  double total_reward = 0.0;  // mean rewards along the path
};

struct OutcomeTree {
  std::vector<Outcome> outcomes;
  double total_probability() const;
  double expected_return() const;
};

/// Leaf cap for every enumeration.
inline constexpr double kOracleLeafCap = 1e6;

/// Every (trajectory, probability, return) under `policy`, with one branch per
/// termination outcome at each step. Throws InstanceTooLarge past the cap.
OutcomeTree enumerate_outcomes(const TerMdpSpec& spec, const StochasticPolicy& policy);

double brute_force_value(const TerMdpSpec& spec, const StochasticPolicy& policy);

/// Node of an optimal history-dependent policy: the action taken at this
/// history and the subtree for each surviving next state.
struct PolicyTreeNode {
  int step = 0;
  int state = 0;
  int action = 0;
  double value = 0.0;
  double accumulated_cost = 0.0;  // window sum before acting
  std::vector<std::pair<int, std::unique_ptr<PolicyTreeNode>>> children;

  const PolicyTreeNode* child(int next_state) const;
};

struct OptimalPolicy {
  double value = 0.0;
  std::unique_ptr<PolicyTreeNode> root;
};

/// Maximum over all deterministic history-dependent policies; ties within
/// 1e-12 go to the lowest action index.
OptimalPolicy brute_force_optimal(const TerMdpSpec& spec);

/// Follows the tree along the observed history.
Policy as_policy(const OptimalPolicy& optimal);

/// Deterministic policy as a degenerate distribution.
StochasticPolicy deterministic(Policy policy, int num_actions);

nlohmann::json policy_tree_to_json(const PolicyTreeNode& node);

}  // namespace termdp
