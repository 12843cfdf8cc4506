#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "termdp/model.hpp"

namespace termdp {

/// Maps (h, s, a) to a likelihood coordinate. Stationary layouts share one
/// coordinate per (s, a) across all steps.
struct DesignLayout {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int window = 0;
  bool stationary = false;

  static DesignLayout for_spec(const TerMdpSpec& spec);

  std::size_t dim() const {
    return static_cast<std::size_t>(stationary ? 1 : horizon) * num_states * num_actions;
  }
  int coord(int h, int s, int a) const {
    return ((stationary ? 0 : h) * num_states + s) * num_actions + a;
  }
};

/// Sparse design vector: sorted (coordinate, multiplicity) pairs. For
/// non-stationary layouts every multiplicity is 1.
struct VisitVector {
  std::vector<std::pair<int, int>> entries;

  static VisitVector from_coords(std::vector<int> coords);
  int ones() const;
};

/// One aggregated likelihood row: every example sharing this visit vector.
struct DesignRow {
  VisitVector visit;
  double positives = 0.0;
  double negatives = 0.0;
};

class TerminationDataset {
 public:
  explicit TerminationDataset(DesignLayout layout);

  const DesignLayout& layout() const { return layout_; }

  /// Appends the labelled prefixes of one episode: steps 1..min(t*, H-1),
  /// each labelled 1 iff it is the terminating step. Step H carries no
  /// signal and is skipped.
  void add_trajectory(const Trajectory& traj);
  void add_example(const VisitVector& visit, bool label);

  const std::vector<DesignRow>& rows() const { return rows_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  std::int64_t count(int h, int s, int a) const { return counts_[layout_.coord(h, s, a)]; }
  std::int64_t num_examples() const { return num_examples_; }
  std::int64_t num_positive() const { return num_positive_; }
  /// Number of examples each added episode contributed, in order.
  const std::vector<int>& episode_sizes() const { return episode_sizes_; }
  bool empty() const { return num_examples_ == 0; }

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<std::pair<int, int>>& v) const;
  };

  void add_row(const VisitVector& visit, bool label);

  DesignLayout layout_;
  std::vector<DesignRow> rows_;
  std::unordered_map<std::vector<std::pair<int, int>>, std::size_t, KeyHash> row_index_;
  std::vector<std::int64_t> counts_;
  std::int64_t num_examples_ = 0;
  std::int64_t num_positive_ = 0;
  std::vector<int> episode_sizes_;
};

TerminationDataset build_dataset(std::span<const Trajectory> trajectories,
                                 const DesignLayout& layout);

/// Regularized cross-entropy of termination labels:
///   sum label*log rho(<d,c> - b) + (1-label)*log(1 - rho(<d,c> - b))
///   - lambda*||c||^2 - bias_lambda*b^2.
double log_likelihood(const TerminationDataset& data, std::span<const double> costs, double bias,
                      double lambda, double bias_lambda = 0.0);

struct LikelihoodGradient {
  std::vector<double> costs;
  double bias = 0.0;  // derivative with respect to the bias
};

LikelihoodGradient gradient(const TerminationDataset& data, std::span<const double> costs,
                            double bias, double lambda, double bias_lambda = 0.0);

enum class BiasMode { Known, Estimate };

struct CostEstimate {
  DesignLayout layout;
  std::vector<double> c_hat;
  std::optional<double> bias_hat;  // set in estimate-bias mode
  std::vector<std::int64_t> counts;
  double lambda = 0.0;
  double objective_value = 0.0;
  int iterations = 0;
  double projected_gradient_norm = 0.0;
  bool projection_active = false;

  double cost(int h, int s, int a) const { return c_hat[layout.coord(h, s, a)]; }
};

struct FitOptions {
  double lambda = 1.0;
  double norm_bound = 1.0;  // radius L of the feasible ball
  BiasMode mode = BiasMode::Known;
  double known_bias = 0.0;  // used in known-bias mode; initial value otherwise
  double bias_lambda = 0.0;  // ridge on the free bias (estimate-bias mode)
  double tolerance = 1e-8;
  int max_iterations = 10000;
  const CostEstimate* warm_start = nullptr;
};

/// Projected gradient ascent on the concave likelihood over the L2 ball of
/// radius L, Barzilai-Borwein trial steps with Armijo backtracking.
/// Throws ConvergenceFailure when the projected gradient does not reach
/// `tolerance` within `max_iterations`.
CostEstimate fit_mle(const TerminationDataset& data, const FitOptions& options);

/// Regularization weight d / (L sqrt(H) + 0.5) with d = S*A*H.
double default_lambda(int num_states, int num_actions, int horizon, double norm_bound);

enum class RadiusMode { Theory, Practical };

struct RadiusParams {
  double kappa = 4.0;
  int num_states = 1;
  int num_actions = 1;
  int horizon = 1;
  double norm_bound = 1.0;
  double delta = 0.1;
  std::int64_t episode = 1;
  double scale = 1.0;
  RadiusMode mode = RadiusMode::Theory;
};

struct ConfidenceRadii {
  std::vector<double> radius;
  RadiusParams params;
};

/// Theory mode:
///   24 sqrt(kappa S A H^2.5) (L+1)^1.5 log^2(16/delta (1 + k(L+0.5)/(16 S^2 A^2 sqrt H)))
///     / sqrt(n + 4 S A H / (L sqrt H + 0.5))
/// Practical mode drops the constant prefactor and squares nothing:
///   log(16/delta (1 + ...)) / sqrt(n + 4 S A H / (L sqrt H + 0.5)).
/// Both are multiplied by `scale`.
double confidence_radius(double count, const RadiusParams& params);
ConfidenceRadii confidence_radii(std::span<const std::int64_t> counts, const RadiusParams& params);

}  // namespace termdp
