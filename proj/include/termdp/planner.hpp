#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "termdp/model.hpp"

namespace termdp {

/// Grid for accumulated costs. Bins hold raw sums C (the bias is applied
/// only when evaluating rho(C - b)). Index i stands for the cost i * resolution.
class CostLattice {
 public:
  /// Bins cover [min_index, max_index].
  static CostLattice unclipped(double resolution, std::int64_t min_index, std::int64_t max_index);
  /// Non-negative costs only: every sum at or above the top bin maps to it.
  /// The top index is floor((C* + b) / resolution), so there are
  /// floor((C* + b) / resolution) + 1 bins and the logit at the top bin is
  /// within one resolution step of C*.
  static CostLattice clipped(double resolution, double clip_threshold, double bias);
  /// Range [-H kmax, H kmax] with kmax the largest |floor(c / resolution)|, or
  /// the clipped lattice when `clip_threshold` is set.
  static CostLattice for_spec(const TerMdpSpec& spec, double resolution,
                              std::optional<double> clip_threshold = std::nullopt);

  double resolution() const { return resolution_; }
  std::optional<double> clip_threshold() const { return clip_threshold_; }
  bool is_clipped() const { return clip_threshold_.has_value(); }
  std::int64_t min_index() const { return min_index_; }
  std::int64_t max_index() const { return max_index_; }
  std::size_t bins() const { return static_cast<std::size_t>(max_index_ - min_index_ + 1); }

  /// floor(cost / resolution), tolerant to representation error.
  std::int64_t quantize(double cost) const;
  double value(std::int64_t index) const { return static_cast<double>(index) * resolution_; }
  /// index + step, saturating at the top when clipped; throws InvalidArgument
  /// on overflow otherwise.
  std::int64_t accumulate(std::int64_t index, std::int64_t step) const;
  bool contains(std::int64_t index) const { return index >= min_index_ && index <= max_index_; }
  std::size_t bin(std::int64_t index) const { return static_cast<std::size_t>(index - min_index_); }

 private:
  double resolution_ = 1.0;
  std::optional<double> clip_threshold_;
  std::int64_t min_index_ = 0;
  std::int64_t max_index_ = 0;
};

/// floor(c / resolution) * resolution entrywise (toward -infinity).
std::vector<double> quantize_costs(std::span<const double> costs, double resolution);

/// Coarsest resolution from a fixed candidate list on which every cost of the
/// spec lies, if any.
std::optional<double> grid_resolution(const TerMdpSpec& spec);

struct PlanOptions {
  /// Clip values at H after each backup (optimistic planning).
  bool clip_values_at_horizon = false;
};

/// Optimal values and greedy actions on (step, state, accumulated-cost bin).
/// With a window shorter than the horizon the augmented state is instead the
/// list of the last w-1 quantized step costs, stored sparsely for the
/// reachable part of the space.
class AugmentedValueTable {
 public:
  const CostLattice& lattice() const { return lattice_; }
  int horizon() const { return horizon_; }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  int window() const { return window_; }
  bool windowed() const { return window_ < horizon_; }
  const PlanOptions& options() const { return options_; }
  /// Quantized cost index per (h, s, a), in the spec's table layout.
  std::int64_t cost_index(int h, int s, int a) const;

  /// Dense accessors (full-memory tables only); h ranges over [0, H].
  double value_at(int h, int s, std::int64_t index) const;
  int action_at(int h, int s, std::int64_t index) const;
  /// Bins reachable at step h: [lo, hi] in index space.
  std::pair<std::int64_t, std::int64_t> reachable(int h) const { return reachable_[h]; }

  /// Generic accessors keyed by the quantized cost indices of the steps
  /// before h (all of them; windowed tables keep the last w-1).
  double value(int h, int s, std::span<const std::int64_t> past) const;
  int action(int h, int s, std::span<const std::int64_t> past) const;

  double initial_value() const;
  int initial_state() const { return initial_state_; }
  std::size_t augmented_states() const;
  std::int64_t backups() const { return backups_; }

  /// Advances the policy-side memory after acting.
  std::int64_t advance(std::int64_t index, int h, int s, int a) const {
    return lattice_.accumulate(index, cost_index(h, s, a));
  }

 private:
  friend AugmentedValueTable plan(const TerMdpSpec&, const CostLattice&, PlanOptions);
  friend double bellman_residual(const TerMdpSpec&, const AugmentedValueTable&);

  std::vector<std::int64_t> memory_key(int h, int s, std::span<const std::int64_t> past) const;
  std::size_t dense_index(int h, int s, std::int64_t index) const;

  CostLattice lattice_ = CostLattice::unclipped(1.0, 0, 0);
  PlanOptions options_;
  int horizon_ = 0;
  int num_states_ = 0;
  int num_actions_ = 0;
  int window_ = 0;
  bool stationary_ = false;
  int initial_state_ = 0;
  std::vector<std::int64_t> cost_index_;
  std::vector<double> values_;
  std::vector<int> actions_;
  std::vector<std::pair<std::int64_t, std::int64_t>> reachable_;
  struct Entry {
    double value = 0.0;
    int action = 0;
  };
  std::map<std::vector<std::int64_t>, Entry> windowed_;
  std::int64_t backups_ = 0;
};

/// Backward induction on the Termination Bellman equations
///   V_h(s, C) = max_a r_h(s,a) + (1 - rho(C + c_h(s,a) - b)) E V_{h+1}(s', C + c_h(s,a))
/// with the spec's costs floored onto the lattice. Ties go to the lowest
/// action index.
AugmentedValueTable plan(const TerMdpSpec& spec, const CostLattice& lattice,
                         PlanOptions options = {});

/// Largest violation of the Termination Bellman equations over the reachable
/// augmented states, recomputed independently of plan().
double bellman_residual(const TerMdpSpec& spec, const AugmentedValueTable& table);

/// Greedy policy of a table as a history-dependent Policy. The policy tracks
/// its own (quantized) costs; it never sees the environment's.
Policy as_policy(const AugmentedValueTable& table);

struct ValueEstimate {
  double value = 0.0;
  double std_error = 0.0;
  bool exact = false;
};

/// Exact value of the table's greedy policy in `spec` by forward propagation
/// of the (state, true memory, policy memory) distribution. Requires the
/// spec's costs to lie on a grid; throws UnsupportedConfiguration otherwise.
ValueEstimate evaluate_policy_exact(const TerMdpSpec& spec, const AugmentedValueTable& table);

/// Exact value of a Markov policy given as probabilities [h][s][a] (stationary
/// specs may pass a single [s][a] layer).
ValueEstimate evaluate_markov_policy_exact(const TerMdpSpec& spec,
                                           std::span<const double> action_probabilities);

/// Mean and standard error of the total reward over `episodes` rollouts.
ValueEstimate evaluate_policy_monte_carlo(const TerMdpSpec& spec, const Policy& policy,
                                          int episodes, Rng& rng);

struct QuantizationGap {
  double exact_value = 0.0;       // V* from the reference grid
  double quantized_value = 0.0;   // optimal value in the quantized TerMDP
  double policy_value = 0.0;      // true value of the quantized plan's policy
  double gap = 0.0;               // exact_value - policy_value
  double bound = 0.0;             // H^3 dc / 2 (+ 2 H^2 exp(-C*) when clipped)
  std::size_t bins = 0;
};

QuantizationGap quantization_gap(const TerMdpSpec& spec, double resolution,
                                 std::optional<double> clip_threshold = std::nullopt);

/// Resolution and clip threshold giving an epsilon-optimal quantized plan:
/// dc = 2 eps / H^3 unclipped; dc = eps / H^3 and C* = log(4 H^2 / eps) clipped.
struct EpsilonLattice {
  double resolution = 0.0;
  std::optional<double> clip_threshold;
};
EpsilonLattice lattice_for_epsilon(int horizon, double epsilon, bool clipped);

}  // namespace termdp
