#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "termdp/estimator.hpp"
#include "termdp/model.hpp"

namespace termdp {

/// The (state, action) pairs of one window and its termination label.
struct WindowExample {
  std::vector<std::pair<int, int>> steps;
  bool label = false;
};

/// One example per prefix: a terminated trajectory of length t* gives t*-1
/// negatives and one positive, an unterminated one gives one negative per
/// step. Each example keeps the last min(w, prefix length) pairs.
std::vector<WindowExample> split_windows(const Trajectory& traj, int window);

/// FIFO of whole trajectories.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000);

  void push(Trajectory traj);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const std::deque<Trajectory>& trajectories() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Trajectory> items_;
};

enum class OptimismMode {
  Min,           // per-step minimum over members
  Mean,          // member mean (no optimism)
  MeanMinusStd,  // mean - alpha * std
};

struct CostMember {
  std::vector<double> costs;  // [s][a], shared across steps
  double bias = 0.0;
};

class CostEnsemble {
 public:
  CostEnsemble() = default;
  CostEnsemble(int num_states, int num_actions, std::vector<CostMember> members);
  /// `size` members with zero costs and the given bias.
  static CostEnsemble zeros(int num_states, int num_actions, int size, double bias = 0.0);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  std::size_t size() const { return members_.size(); }
  const CostMember& member(std::size_t m) const { return members_[m]; }
  double cost(std::size_t m, int s, int a) const { return members_[m].costs[s * num_actions_ + a]; }

  /// Aggregated per-step cost under the given optimism rule.
  double step_cost(int s, int a, OptimismMode mode = OptimismMode::Min, double alpha = 1.0) const;
  double mean_cost(int s, int a) const;
  double mean_bias() const;

 private:
  int num_states_ = 0;
  int num_actions_ = 0;
  std::vector<CostMember> members_;
};

/// Sum over the window of the per-step aggregated cost.
double optimistic_cost(std::span<const std::pair<int, int>> window, const CostEnsemble& ensemble,
                       OptimismMode mode = OptimismMode::Min, double alpha = 1.0);

/// 1 - rho(C - b).
double dynamic_discount(double accumulated_cost, double bias);

struct EnsembleOptions {
  int members = 3;
  int window = 1;
  double lambda = 1.0;
  double norm_bound = 1.0;
  double bias_lambda = 1e-3;
  double initial_bias = 0.0;
  double tolerance = 1e-6;
  int max_iterations = 10000;
};

/// Fits each member by estimate-bias MLE on the stationary layout, using an
/// independent bootstrap resample of whole trajectories. `warm` (same size)
/// seeds each member's optimizer. Failures name the member.
CostEnsemble train_ensemble(const ReplayBuffer& buffer, int num_states, int num_actions,
                            int horizon, const EnsembleOptions& options, Rng& rng,
                            const CostEnsemble* warm = nullptr);

/// Tabular softmax over (state, cost bucket). Bucket i covers
/// [i * width, (i + 1) * width); costs below 0 share bucket 0 and costs past
/// the last bucket share the last one.
class SoftmaxPolicy {
 public:
  SoftmaxPolicy(int num_states, int num_actions, int buckets, double bucket_width);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  int buckets() const { return buckets_; }
  double bucket_width() const { return bucket_width_; }
  int bucket(double accumulated_cost) const;

  std::span<double> logits(int s, int bucket);
  std::span<const double> logits(int s, int bucket) const;
  std::vector<double>& parameters() { return logits_; }
  const std::vector<double>& parameters() const { return logits_; }
  void probabilities(int s, int bucket, std::span<double> out) const;
  int sample(int s, int bucket, Rng& rng) const;

 private:
  int num_states_;
  int num_actions_;
  int buckets_;
  double bucket_width_;
  std::vector<double> logits_;
};

/// One step of policy-gradient data with its augmented state.
struct PgSample {
  int state = 0;
  int bucket = 0;
  int action = 0;
  double advantage = 0.0;
};

/// (1 / normalizer) sum advantage * log pi(action | state, bucket).
double surrogate_objective(const SoftmaxPolicy& policy, std::span<const PgSample> batch,
                           double normalizer);
std::vector<double> surrogate_gradient(const SoftmaxPolicy& policy,
                                       std::span<const PgSample> batch, double normalizer);

/// G_t = r_t + gamma_t G_{t+1}, with G past the end equal to `bootstrap`.
std::vector<double> discounted_returns(std::span<const double> rewards,
                                       std::span<const double> discounts, double bootstrap = 0.0);

/// Generalized advantage estimation with per-step discounts:
/// delta_t = r_t + gamma_t V_{t+1} - V_t, A_t = delta_t + gamma_t lambda A_{t+1}.
/// `values` has one entry per step; the value after the last step is 0.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        std::span<const double> discounts, double lambda);

/// Baselines and ablations as one parameterized family.
struct PgVariant {
  enum class Kind { Plain, RewardShaping, CostPenalty, Naive, NoOptimism, NoDynamicDiscount, MeanStd };
  Kind kind = Kind::Plain;
  double parameter = 0.0;  // p for rs, alpha for penalty and mean-std

  /// "plain", "rs:p", "penalty:alpha", "naive", "no-optimism",
  /// "no-dyn-discount", "mean-std[:alpha]".
  static PgVariant parse(const std::string& text);
  std::string name() const;
  bool uses_costs() const { return kind != Kind::Naive; }
  bool dynamic_discount() const { return kind != Kind::Naive && kind != Kind::NoDynamicDiscount; }
  OptimismMode optimism() const;
  double optimism_alpha() const { return kind == Kind::MeanStd ? parameter : 1.0; }
};

struct TermPgConfig {
  int iterations = 200;
  int rollouts = 32;
  double learning_rate = 0.5;
  std::size_t buffer = 1000;
  int members = 3;
  int window = 0;                // learner's window; 0 uses the environment's
  double bucket_width = 0.5;
  int buckets = 16;
  double gae_lambda = 1.0;
  double constant_discount = 0.99;  // used by variants without the dynamic discount
  double value_step = 0.1;       // step size of the tabular value baseline
  double mle_lambda = 1.0;
  double bias_lambda = 1e-3;
  double mle_tolerance = 1e-6;
  int mle_max_iterations = 10000;
  int refit_every = 5;           // iterations between ensemble refits
  PgVariant variant;
  std::uint64_t seed = 0;
  bool timing = false;
};

struct PgIterationRecord {
  int iter = 0;
  double mean_return = 0.0;  // environment reward, no penalties
  double term_rate = 0.0;
  double cost_l2_err = 0.0;  // ensemble mean vs truth on coordinates visited so far
  double wall_ms = 0.0;
};

struct PgTrace {
  std::vector<PgIterationRecord> records;
  SoftmaxPolicy policy{1, 1, 1, 1.0};

  void write_csv(std::ostream& out) const;
  static const char* csv_header();
  /// Mean of mean_return over the last n iterations.
  double tail_mean(std::size_t n) const;
};

PgTrace run_termpg(const TerMdpSpec& spec, const TermPgConfig& config);

}  // namespace termdp
