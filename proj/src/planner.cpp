#include "termdp/planner.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "termdp/errors.hpp"

namespace termdp {

namespace {

constexpr double kGridTolerance = 1e-9;
constexpr std::size_t kMaxDenseCells = 50'000'000;
constexpr std::size_t kMaxWindowedStates = 2'000'000;

std::int64_t floor_index(double cost, double resolution) {
  return static_cast<std::int64_t>(std::floor(cost / resolution + kGridTolerance));
}

}  // namespace

CostLattice CostLattice::unclipped(double resolution, std::int64_t min_index,
                                   std::int64_t max_index) {
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw InvalidArgument("CostLattice: resolution must be positive");
  if (min_index > max_index) throw InvalidArgument("CostLattice: empty index range");
  CostLattice l;
  l.resolution_ = resolution;
  l.min_index_ = min_index;
  l.max_index_ = max_index;
  return l;
}

CostLattice CostLattice::clipped(double resolution, double clip_threshold, double bias) {
  if (!(clip_threshold > 0.0)) throw InvalidArgument("CostLattice: C* must be positive");
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw InvalidArgument("CostLattice: resolution must be positive");
  if (clip_threshold + bias < 0.0)
    throw InvalidArgument("CostLattice: C* + b must be non-negative for a clipped lattice");
  CostLattice l;
  l.resolution_ = resolution;
  l.clip_threshold_ = clip_threshold;
  l.min_index_ = 0;
  l.max_index_ = floor_index(clip_threshold + bias, resolution);
  return l;
}

CostLattice CostLattice::for_spec(const TerMdpSpec& spec, double resolution,
                                  std::optional<double> clip_threshold) {
  if (clip_threshold) {
    if (!spec.nonnegative_costs())
      throw InvalidArgument("CostLattice: clipping requires non-negative step costs");
    return clipped(resolution, *clip_threshold, spec.bias);
  }
  if (!(resolution > 0.0)) throw InvalidArgument("CostLattice: resolution must be positive");
  std::int64_t kmax = 0;
  for (double c : spec.costs) kmax = std::max<std::int64_t>(kmax, std::abs(floor_index(c, resolution)));
  return unclipped(resolution, -spec.horizon * kmax, spec.horizon * kmax);
}

std::int64_t CostLattice::quantize(double cost) const { return floor_index(cost, resolution_); }

std::int64_t CostLattice::accumulate(std::int64_t index, std::int64_t step) const {
  const std::int64_t next = index + step;
  if (clip_threshold_) return std::min(next, max_index_);
  if (!contains(next))
    throw InvalidArgument("lattice overflow: accumulated cost index " + std::to_string(next) +
                          " outside [" + std::to_string(min_index_) + ", " +
                          std::to_string(max_index_) + "]");
  return next;
}

std::vector<double> quantize_costs(std::span<const double> costs, double resolution) {
  if (!(resolution > 0.0)) throw InvalidArgument("quantize_costs: resolution must be positive");
  std::vector<double> out;
  out.reserve(costs.size());
  for (double c : costs) out.push_back(static_cast<double>(floor_index(c, resolution)) * resolution);
  return out;
}

std::optional<double> grid_resolution(const TerMdpSpec& spec) {
  static constexpr std::array<double, 12> kCandidates{1.0,   0.5,  0.25,  0.2,  0.125, 0.1,
                                                      0.05, 0.025, 0.02, 0.01, 0.005, 0.001};
  for (double r : kCandidates) {
    const bool aligned = std::all_of(spec.costs.begin(), spec.costs.end(), [r](double c) {
      const double k = c / r;
      return std::abs(k - std::round(k)) <= kGridTolerance * std::max(1.0, std::abs(k));
    });
    if (aligned) return r;
  }
  return std::nullopt;
}

std::int64_t AugmentedValueTable::cost_index(int h, int s, int a) const {
  const int layer = stationary_ ? 0 : h;
  return cost_index_[(static_cast<std::size_t>(layer) * num_states_ + s) * num_actions_ + a];
}

std::size_t AugmentedValueTable::dense_index(int h, int s, std::int64_t index) const {
  return (static_cast<std::size_t>(h) * num_states_ + s) * lattice_.bins() + lattice_.bin(index);
}

double AugmentedValueTable::value_at(int h, int s, std::int64_t index) const {
  if (windowed()) throw UnsupportedConfiguration("value_at: windowed table has no dense layout");
  if (h == horizon_) return 0.0;
  if (!lattice_.contains(index)) throw InvalidArgument("value_at: index outside lattice");
  return values_[dense_index(h, s, index)];
}

int AugmentedValueTable::action_at(int h, int s, std::int64_t index) const {
  if (windowed()) throw UnsupportedConfiguration("action_at: windowed table has no dense layout");
  if (h < 0 || h >= horizon_) throw InvalidArgument("action_at: step out of range");
  if (!lattice_.contains(index)) throw InvalidArgument("action_at: index outside lattice");
  return actions_[dense_index(h, s, index)];
}

std::vector<std::int64_t> AugmentedValueTable::memory_key(
    int h, int s, std::span<const std::int64_t> past) const {
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(window_ - 1), past.size());
  std::vector<std::int64_t> key{h, s};
  key.insert(key.end(), past.end() - static_cast<std::ptrdiff_t>(keep), past.end());
  return key;
}

double AugmentedValueTable::value(int h, int s, std::span<const std::int64_t> past) const {
  if (h == horizon_) return 0.0;
  if (windowed()) {
    auto it = windowed_.find(memory_key(h, s, past));
    if (it == windowed_.end()) throw InvalidArgument("value: augmented state not reachable");
    return it->second.value;
  }
  std::int64_t idx = 0;
  for (auto p : past) idx = lattice_.accumulate(idx, p);
  return value_at(h, s, idx);
}

int AugmentedValueTable::action(int h, int s, std::span<const std::int64_t> past) const {
  if (windowed()) {
    auto it = windowed_.find(memory_key(h, s, past));
    if (it == windowed_.end()) throw InvalidArgument("action: augmented state not reachable");
    return it->second.action;
  }
  std::int64_t idx = 0;
  for (auto p : past) idx = lattice_.accumulate(idx, p);
  return action_at(h, s, idx);
}

double AugmentedValueTable::initial_value() const { return value(0, initial_state_, {}); }

std::size_t AugmentedValueTable::augmented_states() const {
  if (windowed()) return windowed_.size();
  return static_cast<std::size_t>(horizon_) * num_states_ * lattice_.bins();
}

namespace {

struct WindowedSolver {
  const TerMdpSpec& spec;
  const CostLattice& lattice;
  const std::vector<std::int64_t>& q;
  PlanOptions options;
  std::map<std::vector<std::int64_t>, double>& cache_values;
  std::map<std::vector<std::int64_t>, int>& cache_actions;
  std::int64_t& backups;

  std::int64_t qidx(int h, int s, int a) const { return q[spec.index(h, s, a)]; }

  double solve(int h, int s, const std::vector<std::int64_t>& mem) {
    if (h == spec.horizon) return 0.0;
    std::vector<std::int64_t> key{h, s};
    key.insert(key.end(), mem.begin(), mem.end());
    if (auto it = cache_values.find(key); it != cache_values.end()) return it->second;
    if (cache_values.size() >= kMaxWindowedStates)
      throw InstanceTooLarge("plan: windowed augmented state space exceeds the cap");

    double best = -std::numeric_limits<double>::infinity();
    int best_action = 0;
    for (int a = 0; a < spec.num_actions; ++a) {
      std::int64_t sum = qidx(h, s, a);
      for (auto m : mem) sum += m;
      const double surv = 1.0 - logistic(lattice.value(sum) - spec.bias);
      double ev = 0.0;
      if (h + 1 < spec.horizon) {
        std::vector<std::int64_t> next = mem;
        next.push_back(qidx(h, s, a));
        if (static_cast<int>(next.size()) > spec.window - 1) next.erase(next.begin());
        const auto row = spec.transition_row(h, s, a);
        for (int s2 = 0; s2 < spec.num_states; ++s2) {
          if (row[s2] > 0.0) ev += row[s2] * solve(h + 1, s2, next);
        }
      }
      const double qv = spec.reward(h, s, a) + surv * ev;
      if (qv > best) {
        best = qv;
        best_action = a;
      }
    }
    if (options.clip_values_at_horizon) best = std::min(best, static_cast<double>(spec.horizon));
    ++backups;
    cache_values.emplace(key, best);
    cache_actions.emplace(std::move(key), best_action);
    return best;
  }
};

}  // namespace

AugmentedValueTable plan(const TerMdpSpec& spec, const CostLattice& lattice, PlanOptions options) {
  spec.validate(/*optimistic=*/true);
  if (lattice.is_clipped() && !spec.nonnegative_costs())
    throw InvalidArgument("plan: clipped lattice requires non-negative step costs");

  AugmentedValueTable t;
  t.lattice_ = lattice;
  t.options_ = options;
  t.horizon_ = spec.horizon;
  t.num_states_ = spec.num_states;
  t.num_actions_ = spec.num_actions;
  t.window_ = spec.window;
  t.stationary_ = spec.stationary;
  t.initial_state_ = spec.initial_state;
  t.cost_index_.reserve(spec.costs.size());
  for (double c : spec.costs) t.cost_index_.push_back(lattice.quantize(c));

  const int H = spec.horizon;
  const int S = spec.num_states;
  const int A = spec.num_actions;

  if (t.windowed()) {
    if (lattice.is_clipped())
      throw UnsupportedConfiguration("plan: clipping is defined for full-memory costs only");
    std::map<std::vector<std::int64_t>, double> values;
    std::map<std::vector<std::int64_t>, int> actions;
    WindowedSolver solver{spec, lattice, t.cost_index_, options, values, actions, t.backups_};
    solver.solve(0, spec.initial_state, {});
    for (const auto& [key, v] : values) t.windowed_[key] = {v, actions.at(key)};
    return t;
  }

  const std::size_t N = lattice.bins();
  if (static_cast<std::size_t>(H + 1) * S * N > kMaxDenseCells)
    throw InvalidArgument("plan: lattice too fine for this horizon and state count");
  if (!lattice.contains(0)) throw InvalidArgument("lattice overflow: zero cost not representable");

  // Forward pass: index ranges reachable before acting at each step.
  t.reachable_.assign(H + 1, {0, 0});
  for (int h = 0; h + 1 <= H; ++h) {
    std::int64_t qmin = std::numeric_limits<std::int64_t>::max();
    std::int64_t qmax = std::numeric_limits<std::int64_t>::min();
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        qmin = std::min(qmin, t.cost_index(h, s, a));
        qmax = std::max(qmax, t.cost_index(h, s, a));
      }
    }
    auto [lo, hi] = t.reachable_[h];
    if (h + 1 < H) {
      t.reachable_[h + 1] = {lattice.accumulate(lo, qmin), lattice.accumulate(hi, qmax)};
    } else {
      t.reachable_[h + 1] = {lo + qmin, hi + qmax};
    }
  }

  t.values_.assign(static_cast<std::size_t>(H) * S * N, 0.0);
  t.actions_.assign(static_cast<std::size_t>(H) * S * N, 0);
  for (int h = H - 1; h >= 0; --h) {
    const auto [lo, hi] = t.reachable_[h];
    for (int s = 0; s < S; ++s) {
      for (std::int64_t idx = lo; idx <= hi; ++idx) {
        double best = -std::numeric_limits<double>::infinity();
        int best_action = 0;
        for (int a = 0; a < A; ++a) {
          const std::int64_t step_idx = t.cost_index(h, s, a);
          const std::int64_t next = (h + 1 < H) ? lattice.accumulate(idx, step_idx)
                                                : (lattice.is_clipped()
                                                       ? std::min(idx + step_idx, lattice.max_index())
                                                       : idx + step_idx);
          const double surv = 1.0 - logistic(lattice.value(next) - spec.bias);
          double ev = 0.0;
          if (h + 1 < H) {
            const auto row = spec.transition_row(h, s, a);
            const double* vnext = &t.values_[t.dense_index(h + 1, 0, next)];
            for (int s2 = 0; s2 < S; ++s2) ev += row[s2] * vnext[static_cast<std::size_t>(s2) * N];
          }
          const double qv = spec.reward(h, s, a) + surv * ev;
          if (qv > best) {
            best = qv;
            best_action = a;
          }
        }
        if (options.clip_values_at_horizon) best = std::min(best, static_cast<double>(H));
        t.values_[t.dense_index(h, s, idx)] = best;
        t.actions_[t.dense_index(h, s, idx)] = best_action;
        ++t.backups_;
      }
    }
  }
  return t;
}

double bellman_residual(const TerMdpSpec& spec, const AugmentedValueTable& table) {
  const int H = spec.horizon;
  const double cap = table.options().clip_values_at_horizon ? static_cast<double>(H)
                                                            : std::numeric_limits<double>::infinity();
  double worst = 0.0;
  auto check = [&](double stored_value, int stored_action, double best, double q_of_action) {
    worst = std::max(worst, std::abs(stored_value - std::min(best, cap)));
    worst = std::max(worst, std::abs(best - q_of_action));
    (void)stored_action;
  };

  if (table.windowed()) {
    for (const auto& [key, entry] : table.windowed_) {
      const int h = static_cast<int>(key[0]);
      const int s = static_cast<int>(key[1]);
      const std::vector<std::int64_t> mem(key.begin() + 2, key.end());
      std::vector<double> q(spec.num_actions);
      for (int a = 0; a < spec.num_actions; ++a) {
        std::int64_t sum = table.cost_index(h, s, a);
        for (auto m : mem) sum += m;
        double ev = 0.0;
        if (h + 1 < H) {
          std::vector<std::int64_t> next = mem;
          next.push_back(table.cost_index(h, s, a));
          for (int s2 = 0; s2 < spec.num_states; ++s2) {
            const double p = spec.transition_row(h, s, a)[s2];
            if (p > 0.0) ev += p * table.value(h + 1, s2, next);
          }
        }
        q[a] = spec.reward(h, s, a) +
               (1.0 - termination_probability(table.lattice().value(sum), spec.bias)) * ev;
      }
      const double best = *std::max_element(q.begin(), q.end());
      check(entry.value, entry.action, best, q[entry.action]);
    }
    return worst;
  }

  const auto& lattice = table.lattice();
  for (int h = 0; h < H; ++h) {
    const auto [lo, hi] = table.reachable(h);
    for (int s = 0; s < spec.num_states; ++s) {
      for (std::int64_t idx = lo; idx <= hi; ++idx) {
        std::vector<double> q(spec.num_actions);
        for (int a = 0; a < spec.num_actions; ++a) {
          std::int64_t next = idx + table.cost_index(h, s, a);
          if (lattice.is_clipped()) next = std::min(next, lattice.max_index());
          double ev = 0.0;
          if (h + 1 < H) {
            for (int s2 = 0; s2 < spec.num_states; ++s2)
              ev += spec.transition_row(h, s, a)[s2] * table.value_at(h + 1, s2, next);
          }
          q[a] = spec.reward(h, s, a) +
                 (1.0 - termination_probability(lattice.value(next), spec.bias)) * ev;
        }
        const double best = *std::max_element(q.begin(), q.end());
        const int act = table.action_at(h, s, idx);
        check(table.value_at(h, s, idx), act, best, q[act]);
      }
    }
  }
  return worst;
}

Policy as_policy(const AugmentedValueTable& table) {
  return [&table](const StepContext& ctx, Rng&) {
    std::vector<std::int64_t> past;
    past.reserve(ctx.past_states.size());
    for (std::size_t j = 0; j < ctx.past_states.size(); ++j)
      past.push_back(table.cost_index(static_cast<int>(j), ctx.past_states[j], ctx.past_actions[j]));
    return table.action(ctx.step, ctx.state, past);
  };
}

namespace {

// Cost memory of the environment: the running sum when w >= H, otherwise the
// last w-1 step cost indices.
struct TrueCosts {
  const TerMdpSpec& spec;
  double resolution;
  std::vector<std::int64_t> index;

  static TrueCosts of(const TerMdpSpec& spec) {
    const auto r = grid_resolution(spec);
    if (!r)
      throw UnsupportedConfiguration(
          "exact evaluation needs grid-aligned costs; use Monte Carlo evaluation");
    TrueCosts tc{spec, *r, {}};
    for (double c : spec.costs) tc.index.push_back(std::llround(c / *r));
    return tc;
  }
  bool full_memory() const { return spec.window >= spec.horizon; }
  std::int64_t q(int h, int s, int a) const { return index[spec.index(h, s, a)]; }

  // Returns the accumulated cost after acting and writes the next memory.
  double after(std::span<const std::int64_t> mem, int h, int s, int a,
               std::vector<std::int64_t>& next) const {
    std::int64_t sum = q(h, s, a);
    for (auto m : mem) sum += m;
    next.clear();
    if (full_memory()) {
      next.push_back(sum);
    } else {
      next.assign(mem.begin(), mem.end());
      next.push_back(q(h, s, a));
      if (static_cast<int>(next.size()) > spec.window - 1) next.erase(next.begin());
    }
    return static_cast<double>(sum) * resolution;
  }
  std::vector<std::int64_t> initial() const {
    return full_memory() ? std::vector<std::int64_t>{0} : std::vector<std::int64_t>{};
  }
};

}  // namespace

ValueEstimate evaluate_policy_exact(const TerMdpSpec& spec, const AugmentedValueTable& table) {
  spec.validate(true);
  if (table.num_states() != spec.num_states || table.num_actions() != spec.num_actions ||
      table.horizon() != spec.horizon)
    throw InvalidArgument("evaluate_policy: table shape does not match the spec");
  const TrueCosts env = TrueCosts::of(spec);
  const bool policy_full = !table.windowed();
  const int policy_keep = table.window() - 1;

  // key = [s, |env memory|, env memory..., policy memory...]
  using Key = std::vector<std::int64_t>;
  std::map<Key, double> current;
  {
    Key k{spec.initial_state};
    const auto m = env.initial();
    k.push_back(static_cast<std::int64_t>(m.size()));
    k.insert(k.end(), m.begin(), m.end());
    if (policy_full) k.push_back(0);
    current[k] = 1.0;
  }
  double value = 0.0;
  std::vector<std::int64_t> env_next;
  for (int h = 0; h < spec.horizon; ++h) {
    std::map<Key, double> next;
    for (const auto& [key, mass] : current) {
      const int s = static_cast<int>(key[0]);
      const auto env_len = static_cast<std::size_t>(key[1]);
      std::span<const std::int64_t> env_mem(key.data() + 2, env_len);
      std::span<const std::int64_t> pol_mem(key.data() + 2 + env_len, key.size() - 2 - env_len);
      const int a = policy_full ? table.action_at(h, s, pol_mem[0]) : table.action(h, s, pol_mem);
      value += mass * spec.reward(h, s, a);
      const double cost = env.after(env_mem, h, s, a, env_next);
      const double surv = 1.0 - termination_probability(cost, spec.bias);
      if (h + 1 >= spec.horizon || surv <= 0.0) continue;
      Key base{0, static_cast<std::int64_t>(env_next.size())};
      base.insert(base.end(), env_next.begin(), env_next.end());
      if (policy_full) {
        base.push_back(table.advance(pol_mem[0], h, s, a));
      } else {
        base.insert(base.end(), pol_mem.begin(), pol_mem.end());
        base.push_back(table.cost_index(h, s, a));
        if (static_cast<int>(pol_mem.size()) + 1 > policy_keep)
          base.erase(base.begin() + 2 + static_cast<std::ptrdiff_t>(env_next.size()));
      }
      const auto row = spec.transition_row(h, s, a);
      for (int s2 = 0; s2 < spec.num_states; ++s2) {
        if (row[s2] <= 0.0) continue;
        base[0] = s2;
        next[base] += mass * surv * row[s2];
      }
    }
    current = std::move(next);
  }
  return {value, 0.0, true};
}

ValueEstimate evaluate_markov_policy_exact(const TerMdpSpec& spec,
                                           std::span<const double> probs) {
  spec.validate(true);
  const std::size_t per_layer = static_cast<std::size_t>(spec.num_states) * spec.num_actions;
  const bool shared = probs.size() == per_layer;
  if (!shared && probs.size() != per_layer * spec.horizon)
    throw InvalidArgument("evaluate_markov_policy_exact: probability table has the wrong size");
  const TerMdpSpec& sp = spec;
  const TrueCosts env = TrueCosts::of(sp);

  using Key = std::vector<std::int64_t>;
  std::map<Key, double> current;
  {
    Key k{sp.initial_state};
    const auto m = env.initial();
    k.insert(k.end(), m.begin(), m.end());
    current[k] = 1.0;
  }
  double value = 0.0;
  std::vector<std::int64_t> env_next;
  for (int h = 0; h < sp.horizon; ++h) {
    std::map<Key, double> next;
    for (const auto& [key, mass] : current) {
      const int s = static_cast<int>(key[0]);
      std::span<const std::int64_t> mem(key.data() + 1, key.size() - 1);
      const std::size_t base_idx = (shared ? 0 : static_cast<std::size_t>(h) * per_layer) +
                                   static_cast<std::size_t>(s) * sp.num_actions;
      for (int a = 0; a < sp.num_actions; ++a) {
        const double pa = probs[base_idx + a];
        if (pa <= 0.0) continue;
        value += mass * pa * sp.reward(h, s, a);
        const double cost = env.after(mem, h, s, a, env_next);
        const double surv = 1.0 - termination_probability(cost, sp.bias);
        if (h + 1 >= sp.horizon || surv <= 0.0) continue;
        Key k{0};
        k.insert(k.end(), env_next.begin(), env_next.end());
        const auto row = sp.transition_row(h, s, a);
        for (int s2 = 0; s2 < sp.num_states; ++s2) {
          if (row[s2] <= 0.0) continue;
          k[0] = s2;
          next[k] += mass * pa * surv * row[s2];
        }
      }
    }
    current = std::move(next);
  }
  return {value, 0.0, true};
}

ValueEstimate evaluate_policy_monte_carlo(const TerMdpSpec& spec, const Policy& policy,
                                          int episodes, Rng& rng) {
  if (episodes < 2) throw InvalidArgument("evaluate_policy_monte_carlo: need at least 2 episodes");
  double mean = 0.0;
  double m2 = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const double x = rollout(spec, policy, rng).total_reward();
    const double d = x - mean;
    mean += d / (i + 1);
    m2 += d * (x - mean);
  }
  const double var = m2 / (episodes - 1);
  return {mean, std::sqrt(var / episodes), false};
}

QuantizationGap quantization_gap(const TerMdpSpec& spec, double resolution,
                                 std::optional<double> clip_threshold) {
  const auto ref = grid_resolution(spec);
  if (!ref) throw UnsupportedConfiguration("quantization_gap: reference grid not available");
  const auto reference = plan(spec, CostLattice::for_spec(spec, *ref));
  const auto lattice = CostLattice::for_spec(spec, resolution, clip_threshold);
  const auto quantized = plan(spec, lattice);
  QuantizationGap g;
  g.exact_value = reference.initial_value();
  g.quantized_value = quantized.initial_value();
  g.policy_value = evaluate_policy_exact(spec, quantized).value;
  g.gap = g.exact_value - g.policy_value;
  const double H = spec.horizon;
  g.bound = H * H * H * resolution / 2.0;
  if (clip_threshold) g.bound += 2.0 * H * H * std::exp(-*clip_threshold);
  g.bins = lattice.bins();
  return g;
}

EpsilonLattice lattice_for_epsilon(int horizon, double epsilon, bool clipped) {
  if (!(epsilon > 0.0) || horizon <= 0)
    throw InvalidArgument("lattice_for_epsilon: epsilon and H must be positive");
  const double h3 = std::pow(static_cast<double>(horizon), 3);
  EpsilonLattice out;
  if (clipped) {
    out.resolution = epsilon / h3;
    out.clip_threshold = std::log(4.0 * horizon * horizon / epsilon);
  } else {
    out.resolution = 2.0 * epsilon / h3;
  }
  return out;
}

}  // namespace termdp
