#include "termdp/oracle.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "termdp/errors.hpp"

namespace termdp {

double OutcomeTree::total_probability() const {
  double p = 0.0;
  for (const auto& o : outcomes) p += o.probability;
  return p;
}

double OutcomeTree::expected_return() const {
  double v = 0.0;
  for (const auto& o : outcomes) v += o.probability * o.total_reward;
  return v;
}

namespace {

void guard(const TerMdpSpec& spec) {
  const double leaves = std::pow(static_cast<double>(spec.num_states), spec.horizon) *
                        std::pow(static_cast<double>(spec.num_actions), spec.horizon);
  if (leaves > kOracleLeafCap)
    throw InstanceTooLarge("oracle: S^H * A^H = " + std::to_string(leaves) +
                           " exceeds the enumeration cap");
}

// Window sum over the last w raw costs of the history plus `extra`.
double window_sum(const TerMdpSpec& spec, const std::vector<int>& states,
                  const std::vector<int>& actions, double extra) {
  const int len = static_cast<int>(states.size());
  const int first = std::max(0, len - (spec.window - 1));
  double total = extra;
  for (int j = first; j < len; ++j) total += spec.cost(j, states[j], actions[j]);
  return total;
}

struct Enumerator {
  const TerMdpSpec& spec;
  const StochasticPolicy& policy;
  OutcomeTree& tree;
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> probs;

  void leaf(bool terminated, double prob, double ret) {
    if (static_cast<double>(tree.outcomes.size()) >= kOracleLeafCap)
      throw InstanceTooLarge("oracle: outcome count exceeds the enumeration cap");
    tree.outcomes.push_back({states, actions, terminated, prob, ret});
  }

  void visit(int h, int s, double prob, double ret) {
    probs.assign(spec.num_actions, 0.0);
    StepContext ctx{h, s, states, actions};
    policy(ctx, probs);
    std::vector<double> local = probs;
    double mass = std::accumulate(local.begin(), local.end(), 0.0);
    if (std::abs(mass - 1.0) > 1e-9)
      throw InvalidArgument("oracle: policy probabilities do not sum to 1");
    for (int a = 0; a < spec.num_actions; ++a) {
      const double pa = local[a];
      if (pa <= 0.0) continue;
      const double c = window_sum(spec, states, actions, spec.cost(h, s, a));
      const double term = termination_probability(c, spec.bias);
      const double r = ret + spec.reward(h, s, a);
      states.push_back(s);
      actions.push_back(a);
      if (h + 1 == spec.horizon) {
        // The last step ends the episode either way; keep both outcomes.
        if (term > 0.0) leaf(true, prob * pa * term, r);
        if (term < 1.0) leaf(false, prob * pa * (1.0 - term), r);
      } else {
        if (term > 0.0) leaf(true, prob * pa * term, r);
        const auto row = spec.transition_row(h, s, a);
        for (int s2 = 0; s2 < spec.num_states; ++s2) {
          if (row[s2] <= 0.0 || term >= 1.0) continue;
          visit(h + 1, s2, prob * pa * (1.0 - term) * row[s2], r);
        }
      }
      states.pop_back();
      actions.pop_back();
    }
  }
};

struct Maximizer {
  const TerMdpSpec& spec;
  std::vector<int> states;
  std::vector<int> actions;
  std::size_t nodes = 0;

  std::unique_ptr<PolicyTreeNode> solve(int h, int s) {
    if (static_cast<double>(++nodes) > kOracleLeafCap)
      throw InstanceTooLarge("oracle: history count exceeds the enumeration cap");
    auto node = std::make_unique<PolicyTreeNode>();
    node->step = h;
    node->state = s;
    node->accumulated_cost = window_sum(spec, states, actions, 0.0);

    std::vector<double> q(spec.num_actions, 0.0);
    std::vector<std::vector<std::pair<int, std::unique_ptr<PolicyTreeNode>>>> subtrees(
        spec.num_actions);
    for (int a = 0; a < spec.num_actions; ++a) {
      const double c = window_sum(spec, states, actions, spec.cost(h, s, a));
      const double surv = 1.0 - termination_probability(c, spec.bias);
      double ev = 0.0;
      if (h + 1 < spec.horizon) {
        states.push_back(s);
        actions.push_back(a);
        const auto row = spec.transition_row(h, s, a);
        for (int s2 = 0; s2 < spec.num_states; ++s2) {
          if (row[s2] <= 0.0) continue;
          auto child = solve(h + 1, s2);
          ev += row[s2] * child->value;
          subtrees[a].emplace_back(s2, std::move(child));
        }
        states.pop_back();
        actions.pop_back();
      }
      q[a] = spec.reward(h, s, a) + surv * ev;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (double v : q) best = std::max(best, v);
    int best_action = 0;
    while (q[best_action] < best - 1e-12) ++best_action;
    node->action = best_action;
    node->value = q[best_action];
    node->children = std::move(subtrees[best_action]);
    return node;
  }
};

}  // namespace

OutcomeTree enumerate_outcomes(const TerMdpSpec& spec, const StochasticPolicy& policy) {
  spec.validate(true);
  guard(spec);
  OutcomeTree tree;
  Enumerator e{spec, policy, tree, {}, {}, {}};
  e.visit(0, spec.initial_state, 1.0, 0.0);
  return tree;
}

double brute_force_value(const TerMdpSpec& spec, const StochasticPolicy& policy) {
  return enumerate_outcomes(spec, policy).expected_return();
}

const PolicyTreeNode* PolicyTreeNode::child(int next_state) const {
  for (const auto& [s, node] : children) {
    if (s == next_state) return node.get();
  }
  return nullptr;
}

OptimalPolicy brute_force_optimal(const TerMdpSpec& spec) {
  spec.validate(true);
  guard(spec);
  Maximizer m{spec, {}, {}, 0};
  OptimalPolicy out;
  out.root = m.solve(0, spec.initial_state);
  out.value = out.root->value;
  return out;
}

Policy as_policy(const OptimalPolicy& optimal) {
  const PolicyTreeNode* root = optimal.root.get();
  return [root](const StepContext& ctx, Rng&) {
    const PolicyTreeNode* node = root;
    for (std::size_t j = 1; j < ctx.past_states.size(); ++j) {
      node = node->child(ctx.past_states[j]);
      if (node == nullptr) throw InvalidArgument("optimal policy: history off the tree");
    }
    if (!ctx.past_states.empty()) {
      node = node->child(ctx.state);
      if (node == nullptr) throw InvalidArgument("optimal policy: history off the tree");
    }
    return node->action;
  };
}

StochasticPolicy deterministic(Policy policy, int num_actions) {
  return [policy = std::move(policy), num_actions](const StepContext& ctx, std::span<double> probs) {
    Rng unused(0);
    const int a = policy(ctx, unused);
    if (a < 0 || a >= num_actions) throw InvalidArgument("deterministic: action out of range");
    std::fill(probs.begin(), probs.end(), 0.0);
    probs[a] = 1.0;
  };
}

nlohmann::json policy_tree_to_json(const PolicyTreeNode& node) {
  nlohmann::json j;
  j["step"] = node.step;
  j["state"] = node.state;
  j["action"] = node.action;
  j["value"] = node.value;
  j["accumulated_cost"] = node.accumulated_cost;
  nlohmann::json kids = nlohmann::json::array();
  for (const auto& [s, child] : node.children) kids.push_back(policy_tree_to_json(*child));
  j["children"] = std::move(kids);
  return j;
}

}  // namespace termdp
