#include "termdp/termcrl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "termdp/errors.hpp"

namespace termdp {

EmpiricalModel::EmpiricalModel(int num_states, int num_actions, int horizon, bool stationary)
    : num_states_(num_states),
      num_actions_(num_actions),
      horizon_(horizon),
      stationary_(stationary) {
  if (num_states < 1 || num_actions < 1 || horizon < 1)
    throw InvalidArgument("EmpiricalModel: dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(stationary ? 1 : horizon) * num_states * num_actions;
  visits_.assign(n, 0);
  reward_sums_.assign(n, 0.0);
  transition_counts_.assign(n * num_states, 0);
  transition_totals_.assign(n, 0);
}

void EmpiricalModel::update(const Trajectory& traj) {
  const int len = static_cast<int>(traj.length());
  if (len > horizon_) throw InvalidArgument("EmpiricalModel: trajectory longer than H");
  for (int h = 0; h < len; ++h) {
    const std::size_t i = index(h, traj.states[h], traj.actions[h]);
    ++visits_[i];
    reward_sums_[i] += traj.rewards[h];
    // A next state is observed only when the episode went on.
    if (h + 1 < len) {
      ++transition_counts_[i * num_states_ + traj.states[h + 1]];
      ++transition_totals_[i];
    }
  }
  ++episodes_;
}

double EmpiricalModel::reward(int h, int s, int a) const {
  const std::size_t i = index(h, s, a);
  return visits_[i] == 0 ? 0.0 : reward_sums_[i] / static_cast<double>(visits_[i]);
}

double EmpiricalModel::transition(int h, int s, int a, int next) const {
  const std::size_t i = index(h, s, a);
  if (transition_totals_[i] == 0) return 1.0 / num_states_;
  return static_cast<double>(transition_counts_[i * num_states_ + next]) /
         static_cast<double>(transition_totals_[i]);
}

BonusSet compute_bonuses(const EmpiricalModel& model, const ConfidenceRadii& radii,
                         std::int64_t total_episodes, double delta, double scale) {
  if (radii.radius.size() != model.table_size())
    throw InvalidArgument("compute_bonuses: radius table does not match the model");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("compute_bonuses: delta must be in (0,1)");
  const double S = model.num_states(), A = model.num_actions(), H = model.horizon();
  const double K = static_cast<double>(std::max<std::int64_t>(total_episodes, 1));
  const double log_r = std::log(8.0 * S * A * H * K / delta);
  const double log_p = std::log(12.0 * S * A * H * K / delta);

  BonusSet out;
  out.delta = delta;
  out.scale = scale;
  const std::size_t n = model.table_size();
  out.reward.resize(n);
  out.transition.resize(n);
  out.cost = radii.radius;  // already carries its own scale
  const int layers = model.stationary() ? 1 : model.horizon();
  for (int l = 0; l < layers; ++l)
    for (int s = 0; s < model.num_states(); ++s)
      for (int a = 0; a < model.num_actions(); ++a) {
        const std::size_t i = model.index(l, s, a);
        const double nv = static_cast<double>(std::max<std::int64_t>(model.visits(l, s, a), 1));
        const double nt =
            static_cast<double>(std::max<std::int64_t>(model.transitions_observed(l, s, a), 1));
        out.reward[i] = scale * std::sqrt(2.0 * log_r / nv);
        out.transition[i] = scale * H * std::sqrt(4.0 * S * log_p / nt);
      }
  return out;
}

KnownStructure KnownStructure::of(const TerMdpSpec& spec) {
  KnownStructure k;
  k.num_states = spec.num_states;
  k.num_actions = spec.num_actions;
  k.horizon = spec.horizon;
  k.window = spec.window;
  k.stationary = spec.stationary;
  k.bias = spec.bias;
  k.norm_bound = spec.norm_bound;
  k.initial_state = spec.initial_state;
  return k;
}

TerMdpSpec optimistic_model(const KnownStructure& known, const EmpiricalModel& model,
                            const CostEstimate& estimate, const BonusSet& bonuses,
                            std::optional<double> bias_override) {
  const int S = known.num_states, A = known.num_actions, H = known.horizon;
  if (model.num_states() != S || model.num_actions() != A || model.horizon() != H)
    throw InvalidArgument("optimistic_model: empirical model shape mismatch");
  if (estimate.c_hat.size() != estimate.layout.dim() || estimate.layout.num_states != S ||
      estimate.layout.num_actions != A)
    throw InvalidArgument("optimistic_model: cost estimate shape mismatch");
  if (bonuses.reward.size() != model.table_size() || bonuses.cost.size() != model.table_size())
    throw InvalidArgument("optimistic_model: bonus shape mismatch");

  // Always per-step: the transition bonus vanishes at the last step even
  // when the underlying tables are shared.
  auto spec = TerMdpSpec::zeros(S, A, H, false);
  spec.bias = bias_override.value_or(known.bias);
  spec.window = known.window;
  spec.norm_bound = known.norm_bound;
  spec.initial_state = known.initial_state;
  const double L = known.norm_bound;
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const std::size_t i = model.index(h, s, a);
        const std::size_t o = spec.index(h, s, a);
        const double bp = h + 1 < H ? bonuses.transition[i] : 0.0;
        spec.rewards[o] = model.reward(h, s, a) + bonuses.reward[i] + bp;
        spec.costs[o] = std::clamp(estimate.cost(h, s, a) - bonuses.cost[i], -L, L);
        auto row = spec.transition_row(h, s, a);
        for (int s2 = 0; s2 < S; ++s2) row[s2] = model.transition(h, s, a, s2);
      }
  return spec;
}

const char* RegretTrace::csv_header() {
  return "k,v_star,v_pik,regret,cum_regret,cost_l2_err,cost_max_err,mle_iters,wall_ms";
}

void RegretTrace::write_csv(std::ostream& out) const {
  out << csv_header() << '\n';
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%.3f\n",
                  static_cast<long long>(r.k), r.v_star, r.v_pik, r.regret, r.cum_regret,
                  r.cost_l2_err, r.cost_max_err, r.mle_iters, r.wall_ms);
    out << buf;
  }
}

namespace {

// Errors over the coordinates that appear in at least one example.
std::pair<double, double> cost_errors(const TerMdpSpec& truth, const CostEstimate& est,
                                      const TerminationDataset& data) {
  const int layers = truth.stationary ? 1 : truth.horizon;
  double sq = 0.0, mx = 0.0;
  for (int h = 0; h < layers; ++h)
    for (int s = 0; s < truth.num_states; ++s)
      for (int a = 0; a < truth.num_actions; ++a) {
        if (data.count(h, s, a) == 0) continue;
        const double e = std::abs(est.cost(h, s, a) - truth.cost(h, s, a));
        sq += e * e;
        mx = std::max(mx, e);
      }
  return {std::sqrt(sq), mx};
}

}  // namespace

RegretTrace run_termcrl(const TerMdpSpec& true_spec, const TermCrlConfig& config) {
  if (config.episodes < 1) throw InvalidArgument("termcrl: K must be at least 1");
  if (!(config.resolution > 0.0)) throw InvalidArgument("termcrl: dc must be positive");
  true_spec.validate();
  const auto ref_res = grid_resolution(true_spec);
  if (!ref_res)
    throw UnsupportedConfiguration("termcrl: exact regret needs grid-aligned true costs");

  const auto known = KnownStructure::of(true_spec);
  const int S = known.num_states, A = known.num_actions, H = known.horizon;
  const bool naive = config.variant == CrlVariant::Naive;
  const double lambda =
      config.lambda > 0.0 ? config.lambda : default_lambda(S, A, H, known.norm_bound);

  const auto v_star =
      plan(true_spec, CostLattice::for_spec(true_spec, *ref_res)).initial_value();

  EmpiricalModel model(S, A, H, known.stationary);
  const DesignLayout layout{S, A, H, known.window, known.stationary};
  TerminationDataset data(layout);

  CostEstimate estimate;
  estimate.layout = layout;
  estimate.c_hat.assign(layout.dim(), 0.0);
  estimate.counts.assign(layout.dim(), 0);
  estimate.lambda = lambda;
  std::vector<std::int64_t> counts_at_fit(layout.dim(), 0);

  RadiusParams rp;
  rp.kappa = kappa_bound(std::min(known.window, H), known.norm_bound, known.bias);
  rp.num_states = S;
  rp.num_actions = A;
  rp.horizon = H;
  rp.norm_bound = known.norm_bound;
  rp.delta = config.delta;
  rp.scale = config.bonus_scale;
  rp.mode = config.radius_mode;

  Rng env_rng = Rng::derive(config.seed, 1);
  RegretTrace trace;
  trace.records.reserve(config.episodes);
  double cum = 0.0;

  for (int k = 1; k <= config.episodes; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    int iters = 0;

    if (!naive && !data.empty()) {
      bool refit = config.episodes <= config.refit_every_episode_up_to;
      if (!refit) {
        const auto& c = data.counts();
        for (std::size_t i = 0; i < c.size() && !refit; ++i)
          refit = c[i] > 0 && c[i] >= 2 * counts_at_fit[i];
      }
      if (refit) {
        FitOptions fo;
        fo.lambda = lambda;
        fo.norm_bound = known.norm_bound;
        fo.mode = config.bias_mode;
        fo.known_bias = known.bias;
        fo.tolerance = config.mle_tolerance;
        fo.warm_start = &estimate;
        try {
          estimate = fit_mle(data, fo);
        } catch (const ConvergenceFailure& e) {
          throw ConvergenceFailure("termcrl episode " + std::to_string(k) + ": " + e.what(),
                                   e.last_iterate(), e.last_bias(), e.gradient_norm(),
                                   e.iterations());
        }
        iters = estimate.iterations;
        counts_at_fit = data.counts();
      }
    }

    rp.episode = k;
    auto radii = confidence_radii(data.counts(), rp);
    if (naive) std::fill(radii.radius.begin(), radii.radius.end(), 0.0);
    const auto bonuses = compute_bonuses(model, radii, config.episodes, config.delta,
                                         config.bonus_scale);
    const auto opt = optimistic_model(known, model, estimate, bonuses,
                                      config.bias_mode == BiasMode::Estimate ? estimate.bias_hat
                                                                             : std::nullopt);
    PlanOptions po;
    po.clip_values_at_horizon = true;
    const auto table = plan(opt, CostLattice::for_spec(opt, config.resolution), po);

    const auto traj = rollout(true_spec, as_policy(table), env_rng);
    model.update(traj);
    data.add_trajectory(traj);

    EpisodeRecord rec;
    rec.k = k;
    rec.v_star = v_star;
    rec.v_pik = evaluate_policy_exact(true_spec, table).value;
    rec.regret = v_star - rec.v_pik;
    cum += rec.regret;
    rec.cum_regret = cum;
    std::tie(rec.cost_l2_err, rec.cost_max_err) = cost_errors(true_spec, estimate, data);
    rec.mle_iters = iters;
    rec.optimistic_value = table.initial_value();
    if (config.timing)
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    trace.records.push_back(rec);
  }
  return trace;
}

}  // namespace termdp
