#include "termdp/termpg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "termdp/errors.hpp"

namespace termdp {

std::vector<WindowExample> split_windows(const Trajectory& traj, int window) {
  if (window < 1) throw InvalidArgument("split_windows: window must be at least 1");
  const int len = static_cast<int>(traj.length());
  if (len == 0) throw InvalidArgument("split_windows: empty trajectory");
  std::vector<WindowExample> out;
  out.reserve(len);
  for (int l = 1; l <= len; ++l) {
    WindowExample ex;
    for (int j = std::max(0, l - window); j < l; ++j) ex.steps.emplace_back(traj.states[j], traj.actions[j]);
    ex.label = traj.terminated() && l == *traj.termination_time;
    out.push_back(std::move(ex));
  }
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Trajectory traj) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(traj));
}

CostEnsemble::CostEnsemble(int num_states, int num_actions, std::vector<CostMember> members)
    : num_states_(num_states), num_actions_(num_actions), members_(std::move(members)) {
  if (members_.empty()) throw InvalidArgument("CostEnsemble: need at least one member");
  for (const auto& m : members_)
    if (m.costs.size() != static_cast<std::size_t>(num_states) * num_actions)
      throw InvalidArgument("CostEnsemble: member table has the wrong size");
}

CostEnsemble CostEnsemble::zeros(int num_states, int num_actions, int size, double bias) {
  if (size < 1) throw InvalidArgument("CostEnsemble: need at least one member");
  std::vector<CostMember> members(size);
  for (auto& m : members) {
    m.costs.assign(static_cast<std::size_t>(num_states) * num_actions, 0.0);
    m.bias = bias;
  }
  return CostEnsemble(num_states, num_actions, std::move(members));
}

double CostEnsemble::mean_cost(int s, int a) const {
  double sum = 0.0;
  for (std::size_t m = 0; m < members_.size(); ++m) sum += cost(m, s, a);
  return sum / static_cast<double>(members_.size());
}

double CostEnsemble::step_cost(int s, int a, OptimismMode mode, double alpha) const {
  switch (mode) {
    case OptimismMode::Min: {
      double best = cost(0, s, a);
      for (std::size_t m = 1; m < members_.size(); ++m) best = std::min(best, cost(m, s, a));
      return best;
    }
    case OptimismMode::Mean:
      return mean_cost(s, a);
    case OptimismMode::MeanMinusStd: {
      const double mean = mean_cost(s, a);
      double var = 0.0;
      for (std::size_t m = 0; m < members_.size(); ++m) var += (cost(m, s, a) - mean) * (cost(m, s, a) - mean);
      return mean - alpha * std::sqrt(var / static_cast<double>(members_.size()));
    }
  }
  return 0.0;
}

double CostEnsemble::mean_bias() const {
  double sum = 0.0;
  for (const auto& m : members_) sum += m.bias;
  return sum / static_cast<double>(members_.size());
}

double optimistic_cost(std::span<const std::pair<int, int>> window, const CostEnsemble& ensemble,
                       OptimismMode mode, double alpha) {
  if (window.empty()) throw InvalidArgument("optimistic_cost: empty window");
  double total = 0.0;
  for (const auto& [s, a] : window) total += ensemble.step_cost(s, a, mode, alpha);
  return total;
}

double dynamic_discount(double accumulated_cost, double bias) {
  return 1.0 - termination_probability(accumulated_cost, bias);
}

CostEnsemble train_ensemble(const ReplayBuffer& buffer, int num_states, int num_actions,
                            int horizon, const EnsembleOptions& options, Rng& rng,
                            const CostEnsemble* warm) {
  if (buffer.empty()) throw InvalidArgument("train_ensemble: empty buffer");
  if (options.members < 1) throw InvalidArgument("train_ensemble: need at least one member");
  const DesignLayout layout{num_states, num_actions, horizon, options.window, true};
  const auto& trajs = buffer.trajectories();
  const int n = static_cast<int>(trajs.size());

  // Windows of each buffered trajectory, computed once and shared by members.
  std::vector<std::vector<std::pair<VisitVector, bool>>> windows(n);
  for (int i = 0; i < n; ++i) {
    for (auto& ex : split_windows(trajs[i], options.window)) {
      std::vector<int> coords;
      coords.reserve(ex.steps.size());
      for (const auto& [s, a] : ex.steps) coords.push_back(layout.coord(0, s, a));
      windows[i].emplace_back(VisitVector::from_coords(std::move(coords)), ex.label);
    }
  }

  std::vector<CostMember> members;
  members.reserve(options.members);
  for (int m = 0; m < options.members; ++m) {
    std::vector<int> picks(n, 0);
    for (int i = 0; i < n; ++i) ++picks[rng.uniform_int(n)];
    TerminationDataset data(layout);
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < picks[i]; ++r)
        for (const auto& [visit, label] : windows[i]) data.add_example(visit, label);

    FitOptions fo;
    fo.lambda = options.lambda;
    fo.norm_bound = options.norm_bound;
    fo.mode = BiasMode::Estimate;
    fo.known_bias = options.initial_bias;
    fo.bias_lambda = options.bias_lambda;
    fo.tolerance = options.tolerance;
    fo.max_iterations = options.max_iterations;
    CostEstimate start;
    if (warm != nullptr && warm->size() == static_cast<std::size_t>(options.members) &&
        warm->num_states() == num_states && warm->num_actions() == num_actions) {
      start.layout = layout;
      start.c_hat = warm->member(m).costs;
      start.bias_hat = warm->member(m).bias;
      fo.warm_start = &start;
    }
    try {
      const auto est = fit_mle(data, fo);
      members.push_back({est.c_hat, est.bias_hat.value_or(options.initial_bias)});
    } catch (const ConvergenceFailure& e) {
      throw ConvergenceFailure("ensemble member " + std::to_string(m) + ": " + e.what(),
                               e.last_iterate(), e.last_bias(), e.gradient_norm(), e.iterations());
    }
  }
  return CostEnsemble(num_states, num_actions, std::move(members));
}

SoftmaxPolicy::SoftmaxPolicy(int num_states, int num_actions, int buckets, double bucket_width)
    : num_states_(num_states),
      num_actions_(num_actions),
      buckets_(buckets),
      bucket_width_(bucket_width) {
  if (num_states < 1 || num_actions < 1 || buckets < 1)
    throw InvalidArgument("SoftmaxPolicy: dimensions must be positive");
  if (!(bucket_width > 0.0)) throw InvalidArgument("SoftmaxPolicy: bucket width must be positive");
  logits_.assign(static_cast<std::size_t>(num_states) * buckets * num_actions, 0.0);
}

int SoftmaxPolicy::bucket(double accumulated_cost) const {
  const double k = std::floor(accumulated_cost / bucket_width_ + 1e-9);
  if (!(k >= 0.0)) return 0;
  return static_cast<int>(std::min<double>(k, buckets_ - 1));
}

std::span<double> SoftmaxPolicy::logits(int s, int b) {
  return {logits_.data() + (static_cast<std::size_t>(s) * buckets_ + b) * num_actions_,
          static_cast<std::size_t>(num_actions_)};
}

std::span<const double> SoftmaxPolicy::logits(int s, int b) const {
  return {logits_.data() + (static_cast<std::size_t>(s) * buckets_ + b) * num_actions_,
          static_cast<std::size_t>(num_actions_)};
}

void SoftmaxPolicy::probabilities(int s, int b, std::span<double> out) const {
  const auto z = logits(s, b);
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (int a = 0; a < num_actions_; ++a) total += out[a] = std::exp(z[a] - mx);
  for (int a = 0; a < num_actions_; ++a) out[a] /= total;
}

int SoftmaxPolicy::sample(int s, int b, Rng& rng) const {
  std::vector<double> p(num_actions_);
  probabilities(s, b, p);
  return rng.categorical(p);
}

double surrogate_objective(const SoftmaxPolicy& policy, std::span<const PgSample> batch,
                           double normalizer) {
  std::vector<double> p(policy.num_actions());
  double total = 0.0;
  for (const auto& x : batch) {
    policy.probabilities(x.state, x.bucket, p);
    total += x.advantage * std::log(p[x.action]);
  }
  return total / normalizer;
}

std::vector<double> surrogate_gradient(const SoftmaxPolicy& policy,
                                       std::span<const PgSample> batch, double normalizer) {
  const int A = policy.num_actions();
  std::vector<double> grad(policy.parameters().size(), 0.0);
  std::vector<double> p(A);
  for (const auto& x : batch) {
    if (!std::isfinite(x.advantage)) {
      std::ostringstream msg;
      msg << "policy update: non-finite advantage at state " << x.state << ", bucket "
          << x.bucket << ", action " << x.action;
      throw NumericFailure(msg.str());
    }
    if (x.advantage == 0.0) continue;
    policy.probabilities(x.state, x.bucket, p);
    double* g = grad.data() + (static_cast<std::size_t>(x.state) * policy.buckets() + x.bucket) * A;
    for (int a = 0; a < A; ++a) g[a] += x.advantage * ((a == x.action ? 1.0 : 0.0) - p[a]);
  }
  for (auto& g : grad) g /= normalizer;
  return grad;
}

std::vector<double> discounted_returns(std::span<const double> rewards,
                                       std::span<const double> discounts, double bootstrap) {
  if (rewards.size() != discounts.size())
    throw InvalidArgument("discounted_returns: rewards and discounts differ in length");
  std::vector<double> g(rewards.size());
  double next = bootstrap;
  for (std::size_t i = rewards.size(); i-- > 0;) next = g[i] = rewards[i] + discounts[i] * next;
  return g;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        std::span<const double> discounts, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || discounts.size() != n)
    throw InvalidArgument("gae: input lengths differ");
  std::vector<double> adv(n);
  double next_adv = 0.0, next_value = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + discounts[i] * next_value - values[i];
    next_adv = adv[i] = delta + discounts[i] * lambda * next_adv;
    next_value = values[i];
  }
  return adv;
}

PgVariant PgVariant::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const bool has_arg = colon != std::string::npos;
  double arg = 0.0;
  if (has_arg) {
    try {
      std::size_t used = 0;
      arg = std::stod(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InvalidArgument("variant: bad parameter in " + text);
    }
    if (!std::isfinite(arg) || arg < 0.0) throw InvalidArgument("variant: parameter must be >= 0");
  }
  PgVariant v;
  auto no_arg = [&](Kind k) {
    if (has_arg) throw InvalidArgument("variant: " + head + " takes no parameter");
    v.kind = k;
  };
  if (head == "plain") no_arg(Kind::Plain);
  else if (head == "naive") no_arg(Kind::Naive);
  else if (head == "no-optimism") no_arg(Kind::NoOptimism);
  else if (head == "no-dyn-discount") no_arg(Kind::NoDynamicDiscount);
  else if (head == "rs" || head == "penalty") {
    if (!has_arg) throw InvalidArgument("variant: " + head + " needs a parameter");
    v.kind = head == "rs" ? Kind::RewardShaping : Kind::CostPenalty;
    v.parameter = arg;
  } else if (head == "mean-std") {
    v.kind = Kind::MeanStd;
    v.parameter = has_arg ? arg : 1.0;
  } else {
    throw InvalidArgument("variant: unknown variant " + text);
  }
  return v;
}

std::string PgVariant::name() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::Plain: return "plain";
    case Kind::Naive: return "naive";
    case Kind::NoOptimism: return "no-optimism";
    case Kind::NoDynamicDiscount: return "no-dyn-discount";
    case Kind::RewardShaping: out << "rs:" << parameter; break;
    case Kind::CostPenalty: out << "penalty:" << parameter; break;
    case Kind::MeanStd: out << "mean-std:" << parameter; break;
  }
  return out.str();
}

OptimismMode PgVariant::optimism() const {
  if (kind == Kind::NoOptimism) return OptimismMode::Mean;
  if (kind == Kind::MeanStd) return OptimismMode::MeanMinusStd;
  return OptimismMode::Min;
}

const char* PgTrace::csv_header() { return "iter,mean_return,term_rate,cost_l2_err,wall_ms"; }

void PgTrace::write_csv(std::ostream& out) const {
  out << csv_header() << '\n';
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.3f\n", r.iter, r.mean_return,
                  r.term_rate, r.cost_l2_err, r.wall_ms);
    out << buf;
  }
}

double PgTrace::tail_mean(std::size_t n) const {
  if (records.empty()) return 0.0;
  n = std::min(n, records.size());
  double sum = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) sum += records[i].mean_return;
  return sum / static_cast<double>(n);
}

namespace {

struct Rollout {
  Trajectory traj;
  std::vector<int> buckets;  // policy input at acting time
};

// Sum of the last `count` entries.
double tail_sum(const std::vector<double>& xs, std::size_t count) {
  double total = 0.0;
  for (std::size_t i = xs.size() - std::min(count, xs.size()); i < xs.size(); ++i) total += xs[i];
  return total;
}

}  // namespace

PgTrace run_termpg(const TerMdpSpec& spec, const TermPgConfig& config) {
  spec.validate();
  if (config.iterations < 1 || config.rollouts < 1)
    throw InvalidArgument("termpg: iterations and rollouts must be positive");
  if (config.members < 1) throw InvalidArgument("termpg: ensemble needs at least one member");
  if (config.refit_every < 1) throw InvalidArgument("termpg: refit interval must be positive");
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("termpg: learning rate must be positive");
  if (config.gae_lambda < 0.0 || config.gae_lambda > 1.0)
    throw InvalidArgument("termpg: GAE lambda must lie in [0, 1]");
  if (!(config.constant_discount > 0.0 && config.constant_discount <= 1.0))
    throw InvalidArgument("termpg: constant discount must lie in (0, 1]");
  const int S = spec.num_states, A = spec.num_actions, H = spec.horizon;
  // The ensemble shares costs across steps; so must the environment.
  for (int h = 1; h < spec.layers(); ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        if (spec.cost(h, s, a) != spec.cost(0, s, a))
          throw UnsupportedConfiguration("termpg: costs must not depend on the step");
  const int w = config.window == 0 ? spec.window : config.window;
  if (w < 1) throw InvalidArgument("termpg: window must be at least 1");
  const auto& variant = config.variant;
  const bool uses_costs = variant.uses_costs();
  const auto mode = variant.optimism();
  const double alpha = variant.optimism_alpha();

  SoftmaxPolicy policy(S, A, uses_costs ? config.buckets : 1, config.bucket_width);
  std::vector<double> baseline(static_cast<std::size_t>(H) * S * policy.buckets(), 0.0);
  auto baseline_at = [&](int h, int s, int b) -> double& {
    return baseline[(static_cast<std::size_t>(h) * S + s) * policy.buckets() + b];
  };

  EnsembleOptions eo;
  eo.members = config.members;
  eo.window = std::min(w, H);
  eo.lambda = config.mle_lambda;
  eo.norm_bound = spec.norm_bound;
  eo.bias_lambda = config.bias_lambda;
  eo.tolerance = config.mle_tolerance;
  eo.max_iterations = config.mle_max_iterations;
  auto ensemble = CostEnsemble::zeros(S, A, config.members);

  Rng env_rng = Rng::derive(config.seed, 1);
  Rng boot_rng = Rng::derive(config.seed, 2);
  ReplayBuffer buffer(config.buffer);
  PgTrace trace;
  trace.records.reserve(config.iterations);
  std::vector<std::int64_t> seen(static_cast<std::size_t>(S) * A, 0);

  for (int it = 0; it < config.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();

    // Collect rollouts, augmenting states with the current ensemble.
    std::vector<Rollout> batch(config.rollouts);
    double total_return = 0.0;
    int terminated = 0;
    for (auto& ro : batch) {
      CostWindow env_window(spec.window);
      std::vector<double> opt_costs;
      int s = spec.initial_state;
      for (int h = 0; h < H; ++h) {
        const int b = uses_costs ? policy.bucket(tail_sum(opt_costs, static_cast<std::size_t>(w - 1))) : 0;
        const int a = policy.sample(s, b, env_rng);
        const auto out = step(spec, h, s, a, env_window, env_rng);
        ro.traj.states.push_back(s);
        ro.traj.actions.push_back(a);
        ro.traj.rewards.push_back(out.reward);
        ro.traj.accumulated_costs.push_back(out.accumulated_cost);
        ro.buckets.push_back(b);
        if (uses_costs) opt_costs.push_back(ensemble.step_cost(s, a, mode, alpha));
        ++seen[static_cast<std::size_t>(s) * A + a];
        if (out.terminated) {
          ro.traj.termination_time = h + 1;
          break;
        }
        if (h + 1 < H) s = out.next_state;
      }
      total_return += ro.traj.total_reward();
      terminated += ro.traj.terminated() ? 1 : 0;
      buffer.push(ro.traj);
    }

    if (uses_costs && (it % config.refit_every == 0 || it + 1 == config.iterations))
      ensemble = train_ensemble(buffer, S, A, H, eo, boot_rng, &ensemble);
    const double bias_bar = ensemble.mean_bias();

    // Advantages with discounts and penalties from the retrained ensemble.
    std::vector<PgSample> samples;
    for (const auto& ro : batch) {
      const int len = static_cast<int>(ro.traj.length());
      std::vector<double> rewards(ro.traj.rewards), discounts(len), values(len), c_after(len);
      std::vector<double> step_costs;
      for (int h = 0; h < len; ++h) {
        if (uses_costs) {
          step_costs.push_back(ensemble.step_cost(ro.traj.states[h], ro.traj.actions[h], mode, alpha));
          c_after[h] = tail_sum(step_costs, static_cast<std::size_t>(w));
        }
        discounts[h] = variant.dynamic_discount() ? dynamic_discount(c_after[h], bias_bar)
                                                  : config.constant_discount;
        values[h] = baseline_at(h, ro.traj.states[h], ro.buckets[h]);
        if (variant.kind == PgVariant::Kind::CostPenalty) rewards[h] -= variant.parameter * c_after[h];
      }
      if (variant.kind == PgVariant::Kind::RewardShaping && ro.traj.terminated())
        rewards[len - 1] -= variant.parameter;
      const auto adv = gae(rewards, values, discounts, config.gae_lambda);
      const auto ret = discounted_returns(rewards, discounts);
      for (int h = 0; h < len; ++h) {
        samples.push_back({ro.traj.states[h], ro.buckets[h], ro.traj.actions[h], adv[h]});
        double& v = baseline_at(h, ro.traj.states[h], ro.buckets[h]);
        v += config.value_step * (ret[h] - v);
      }
    }
    const auto grad = surrogate_gradient(policy, samples, static_cast<double>(config.rollouts));
    auto& theta = policy.parameters();
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += config.learning_rate * grad[i];

    PgIterationRecord rec;
    rec.iter = it;
    rec.mean_return = total_return / config.rollouts;
    rec.term_rate = static_cast<double>(terminated) / config.rollouts;
    double sq = 0.0;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        if (seen[static_cast<std::size_t>(s) * A + a] == 0) continue;
        const double e = (uses_costs ? ensemble.mean_cost(s, a) : 0.0) - spec.cost(0, s, a);
        sq += e * e;
      }
    rec.cost_l2_err = std::sqrt(sq);
    if (config.timing)
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    trace.records.push_back(rec);
  }
  trace.policy = policy;
  return trace;
}

}  // namespace termdp
