#include "termdp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "termdp/errors.hpp"

namespace termdp {

double logistic(double x) {
  if (!std::isfinite(x)) throw InvalidArgument("logistic: non-finite input");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_logistic(double x) {
  // log rho(x) = -softplus(-x)
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double termination_probability(double accumulated_cost, double bias) {
  if (!std::isfinite(accumulated_cost) || !std::isfinite(bias))
    throw InvalidArgument("termination_probability: non-finite input");
  return logistic(accumulated_cost - bias);
}

TerMdpSpec TerMdpSpec::zeros(int num_states, int num_actions, int horizon, bool stationary) {
  if (num_states <= 0 || num_actions <= 0 || horizon <= 0)
    throw InvalidArgument("TerMdpSpec: S, A, H must be positive");
  TerMdpSpec spec;
  spec.num_states = num_states;
  spec.num_actions = num_actions;
  spec.horizon = horizon;
  spec.stationary = stationary;
  spec.window = horizon;
  spec.norm_bound = 1.0;
  spec.rewards.assign(spec.table_size(), 0.0);
  spec.costs.assign(spec.table_size(), 0.0);
  spec.transitions.assign(spec.table_size() * num_states, 1.0 / num_states);
  return spec;
}

double TerMdpSpec::cost_max() const {
  double m = 0.0;
  for (double c : costs) m = std::max(m, std::abs(c));
  return m;
}

double TerMdpSpec::cost_norm() const {
  return std::sqrt(std::inner_product(costs.begin(), costs.end(), costs.begin(), 0.0));
}

bool TerMdpSpec::nonnegative_costs() const {
  return std::all_of(costs.begin(), costs.end(), [](double c) { return c >= 0.0; });
}

void TerMdpSpec::validate(bool optimistic) const {
  if (num_states <= 0 || num_actions <= 0 || horizon <= 0)
    throw InvalidArgument("spec: S, A, H must be positive");
  if (transitions.size() != table_size() * num_states || rewards.size() != table_size() ||
      costs.size() != table_size())
    throw InvalidArgument("spec: table sizes do not match S, A, H");
  if (window < 1 || window > horizon) throw InvalidArgument("spec: window must lie in [1, H]");
  if (initial_state < 0 || initial_state >= num_states)
    throw InvalidArgument("spec: initial_state out of range");
  if (!std::isfinite(bias)) throw InvalidArgument("spec: bias must be finite");
  for (std::size_t row = 0; row < table_size(); ++row) {
    double total = 0.0;
    for (int s2 = 0; s2 < num_states; ++s2) {
      const double p = transitions[row * num_states + s2];
      if (!(p >= 0.0) || !std::isfinite(p))
        throw InvalidArgument("spec: negative or non-finite transition probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw InvalidArgument("spec: transition row does not sum to 1");
  }
  for (double r : rewards) {
    if (!std::isfinite(r) || r < 0.0 || (!optimistic && r > 1.0))
      throw InvalidArgument("spec: mean reward outside [0, 1]");
  }
  for (double c : costs) {
    if (!std::isfinite(c)) throw InvalidArgument("spec: non-finite cost");
  }
  if (!optimistic && cost_norm() > norm_bound * (1.0 + 1e-12))
    throw InvalidArgument("spec: cost norm exceeds declared bound L");
}

double kappa_bound(int steps, double cost_max, double bias) {
  const double x = steps * cost_max + std::abs(bias);
  // 1 / (rho(x)(1 - rho(x))) = 2 + e^x + e^-x
  return 2.0 + std::exp(x) + std::exp(-x);
}

double kappa(const TerMdpSpec& spec) {
  return kappa_bound(std::min(spec.window, spec.horizon), spec.cost_max(), spec.bias);
}

CostWindow::CostWindow(int width) : width_(width) {
  if (width < 1) throw InvalidArgument("CostWindow: width must be >= 1");
}

void CostWindow::push(double cost) {
  recent_.push_back(cost);
  if (static_cast<int>(recent_.size()) > width_) recent_.pop_front();
}

double CostWindow::sum() const {
  double total = 0.0;
  for (double c : recent_) total += c;
  return total;
}

StepOutcome step(const TerMdpSpec& spec, int h, int state, int action, CostWindow& window,
                 Rng& rng) {
  if (h < 0 || h >= spec.horizon) throw InvalidArgument("step: time index out of range");
  if (state < 0 || state >= spec.num_states) throw InvalidArgument("step: state out of range");
  if (action < 0 || action >= spec.num_actions)
    throw InvalidArgument("step: action out of range");

  StepOutcome out;
  const double mean = spec.reward(h, state, action);
  out.reward = spec.reward_noise == RewardNoise::Bernoulli ? (rng.bernoulli(mean) ? 1.0 : 0.0)
                                                           : mean;
  window.push(spec.cost(h, state, action));
  out.accumulated_cost = window.sum();
  out.terminated = rng.bernoulli(termination_probability(out.accumulated_cost, spec.bias));
  if (!out.terminated && h + 1 < spec.horizon)
    out.next_state = rng.categorical(spec.transition_row(h, state, action));
  return out;
}

double Trajectory::total_reward() const {
  return std::accumulate(rewards.begin(), rewards.end(), 0.0);
}

Trajectory rollout(const TerMdpSpec& spec, const Policy& policy, Rng& rng) {
  Trajectory traj;
  CostWindow window(spec.window);
  int state = spec.initial_state;
  for (int h = 0; h < spec.horizon; ++h) {
    StepContext ctx{h, state, traj.states, traj.actions};
    const int action = policy(ctx, rng);
    if (action < 0 || action >= spec.num_actions)
      throw InvalidArgument("rollout: policy returned an out-of-range action");
    const StepOutcome out = step(spec, h, state, action, window, rng);
    traj.states.push_back(state);
    traj.actions.push_back(action);
    traj.rewards.push_back(out.reward);
    traj.accumulated_costs.push_back(out.accumulated_cost);
    if (out.terminated) {
      traj.termination_time = h + 1;
      break;
    }
    state = out.next_state;
  }
  return traj;
}

Policy uniform_policy(int num_actions) {
  return [num_actions](const StepContext&, Rng& rng) { return rng.uniform_int(num_actions); };
}

}  // namespace termdp
