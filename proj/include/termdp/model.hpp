#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "termdp/rng.hpp"

namespace termdp {

// Step indices are zero-based throughout the code: h = 0 is the first step
// and h = H - 1 the last. Termination times are reported as trajectory
// lengths, so t* in {1..H}.

/// rho(x) = 1 / (1 + exp(-x)), stable over the whole double range.
double logistic(double x);

/// log(rho(x)) without cancellation.
double log_logistic(double x);

/// Probability that the terminator fires given the (window-truncated)
/// accumulated cost.
double termination_probability(double accumulated_cost, double bias);

enum class RewardNoise { Deterministic, Bernoulli };

struct TerMdpSpec {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  // A stationary spec stores one (s, a) layer shared by every step.
  bool stationary = false;
  std::vector<double> transitions;  // [layer][s][a][s']
  std::vector<double> rewards;      // [layer][s][a], means in [0, 1]
  std::vector<double> costs;        // [layer][s][a]
  double bias = 0.0;
  int window = 0;  // cost-memory length w in [1, H]
  double norm_bound = 0.0;  // L with ||costs||_2 <= L
  RewardNoise reward_noise = RewardNoise::Deterministic;
  int initial_state = 0;

  /// Zero rewards/costs, uniform transitions, w = H, L = 1.
  static TerMdpSpec zeros(int num_states, int num_actions, int horizon, bool stationary);

  int layers() const { return stationary ? 1 : horizon; }
  int layer(int h) const { return stationary ? 0 : h; }
  std::size_t table_size() const {
    return static_cast<std::size_t>(layers()) * num_states * num_actions;
  }
  std::size_t index(int h, int s, int a) const {
    return (static_cast<std::size_t>(layer(h)) * num_states + s) * num_actions + a;
  }

  double reward(int h, int s, int a) const { return rewards[index(h, s, a)]; }
  double cost(int h, int s, int a) const { return costs[index(h, s, a)]; }
  std::span<const double> transition_row(int h, int s, int a) const {
    return {transitions.data() + index(h, s, a) * num_states,
            static_cast<std::size_t>(num_states)};
  }
  std::span<double> transition_row(int h, int s, int a) {
    return {transitions.data() + index(h, s, a) * num_states,
            static_cast<std::size_t>(num_states)};
  }

  double cost_max() const;
  double cost_norm() const;
  bool nonnegative_costs() const;

  /// Throws InvalidArgument when any invariant is violated. Optimistic
  /// models carry rewards above 1 and are checked with `optimistic = true`.
  void validate(bool optimistic = false) const;
};

/// Reciprocal-derivative bound 1 / (rho(X)(1 - rho(X))) with
/// X = steps * c_max + |bias|.
double kappa_bound(int steps, double cost_max, double bias);
double kappa(const TerMdpSpec& spec);

/// The last `width` step costs and their sum.
class CostWindow {
 public:
  explicit CostWindow(int width);

  void push(double cost);
  double sum() const;
  int width() const { return width_; }
  const std::deque<double>& recent() const { return recent_; }

 private:
  int width_;
  std::deque<double> recent_;
};

struct StepOutcome {
  double reward = 0.0;
  double accumulated_cost = 0.0;  // window sum including this step's cost
  bool terminated = false;
  int next_state = -1;  // -1 when terminated or after the last step
};

/// One interaction step at (zero-based) time h. The reward is collected
/// before the terminator acts. `window` is updated in place.
StepOutcome step(const TerMdpSpec& spec, int h, int state, int action, CostWindow& window,
                 Rng& rng);

struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> accumulated_costs;
  std::optional<int> termination_time;

  std::size_t length() const { return states.size(); }
  bool terminated() const { return termination_time.has_value(); }
  double total_reward() const;
};

/// What a policy may observe: the step, the current state, and the
/// state/action history strictly before it.
struct StepContext {
  int step = 0;
  int state = 0;
  std::span<const int> past_states;
  std::span<const int> past_actions;
};

using Policy = std::function<int(const StepContext&, Rng&)>;

Trajectory rollout(const TerMdpSpec& spec, const Policy& policy, Rng& rng);

Policy uniform_policy(int num_actions);

}  // namespace termdp
