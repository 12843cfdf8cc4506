#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "termdp/estimator.hpp"
#include "termdp/model.hpp"
#include "termdp/planner.hpp"

namespace termdp {

/// Empirical rewards and transitions from the agent's own rollouts.
class EmpiricalModel {
 public:
  EmpiricalModel(int num_states, int num_actions, int horizon, bool stationary);

  void update(const Trajectory& traj);

  /// 0 when unvisited.
  double reward(int h, int s, int a) const;
  /// Uniform when no transition out of (h, s, a) was observed.
  double transition(int h, int s, int a, int next) const;
  std::int64_t visits(int h, int s, int a) const { return visits_[index(h, s, a)]; }
  std::int64_t transitions_observed(int h, int s, int a) const {
    return transition_totals_[index(h, s, a)];
  }
  std::int64_t episodes() const { return episodes_; }

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  int horizon() const { return horizon_; }
  bool stationary() const { return stationary_; }
  std::size_t table_size() const { return visits_.size(); }
  std::size_t index(int h, int s, int a) const {
    return (static_cast<std::size_t>(stationary_ ? 0 : h) * num_states_ + s) * num_actions_ + a;
  }

 private:
  int num_states_;
  int num_actions_;
  int horizon_;
  bool stationary_;
  std::vector<std::int64_t> visits_;
  std::vector<double> reward_sums_;
  std::vector<std::int64_t> transition_counts_;
  std::vector<std::int64_t> transition_totals_;
  std::int64_t episodes_ = 0;
};

/// Reward, transition and cost confidence widths per (h, s, a), already
/// multiplied by the shared scale.
struct BonusSet {
  std::vector<double> reward;
  std::vector<double> transition;
  std::vector<double> cost;
  double delta = 0.1;
  double scale = 1.0;
};

/// b_r = sqrt(2 log(8 S A H K / delta) / (n v 1)),
/// b_p = H sqrt(4 S log(12 S A H K / delta) / (n v 1)), b_c from the cost
/// confidence radius; all times `scale`.
BonusSet compute_bonuses(const EmpiricalModel& model, const ConfidenceRadii& radii,
                         std::int64_t total_episodes, double delta, double scale);

/// What the learner knows about the environment besides its samples.
struct KnownStructure {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int window = 0;
  bool stationary = false;
  double bias = 0.0;
  double norm_bound = 1.0;
  int initial_state = 0;

  static KnownStructure of(const TerMdpSpec& spec);
};

/// r_bar = r_hat + b_r + b_p and c_bar = c_hat - b_c. Optimistic costs are
/// clamped to [-L, L]; every true cost lies in that box, so the clamp keeps
/// c_bar <= c whenever c_hat - b_c <= c.
TerMdpSpec optimistic_model(const KnownStructure& known, const EmpiricalModel& model,
                            const CostEstimate& estimate, const BonusSet& bonuses,
                            std::optional<double> bias_override = std::nullopt);

enum class CrlVariant {
  Optimistic,  // the full algorithm
  Naive,       // costs fixed at zero, no cost bonus: ignores termination
};

struct TermCrlConfig {
  int episodes = 100;
  double delta = 0.1;
  double lambda = 0.0;        // 0 selects d / (L sqrt(H) + 0.5)
  double resolution = 0.1;    // planner lattice dc
  double bonus_scale = 1.0;
  RadiusMode radius_mode = RadiusMode::Theory;
  BiasMode bias_mode = BiasMode::Known;
  CrlVariant variant = CrlVariant::Optimistic;
  int refit_every_episode_up_to = 1000;
  double mle_tolerance = 1e-8;
  std::uint64_t seed = 0;
  bool timing = false;  // wall_ms stays 0 unless set, keeping output reproducible
};

struct EpisodeRecord {
  std::int64_t k = 0;
  double v_star = 0.0;
  double v_pik = 0.0;
  double regret = 0.0;
  double cum_regret = 0.0;
  double cost_l2_err = 0.0;   // over coordinates seen in some example
  double cost_max_err = 0.0;
  int mle_iters = 0;
  double wall_ms = 0.0;
  double optimistic_value = 0.0;  // V-bar_1 of the planned optimistic model
};

struct RegretTrace {
  std::vector<EpisodeRecord> records;

  void write_csv(std::ostream& out) const;
  static const char* csv_header();
};

/// Optimistic learning loop. `true_spec` is used only to simulate the
/// environment and to score each episode's policy.
RegretTrace run_termcrl(const TerMdpSpec& true_spec, const TermCrlConfig& config);

}  // namespace termdp
