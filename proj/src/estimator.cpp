#include "termdp/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "termdp/errors.hpp"

namespace termdp {

DesignLayout DesignLayout::for_spec(const TerMdpSpec& spec) {
  return {spec.num_states, spec.num_actions, spec.horizon, spec.window, spec.stationary};
}

VisitVector VisitVector::from_coords(std::vector<int> coords) {
  std::sort(coords.begin(), coords.end());
  VisitVector v;
  for (int c : coords) {
    if (!v.entries.empty() && v.entries.back().first == c) {
      ++v.entries.back().second;
    } else {
      v.entries.emplace_back(c, 1);
    }
  }
  return v;
}

int VisitVector::ones() const {
  int n = 0;
  for (const auto& [coord, mult] : entries) n += mult;
  return n;
}

std::size_t TerminationDataset::KeyHash::operator()(
    const std::vector<std::pair<int, int>>& v) const {
  std::size_t h = 0xcbf29ce484222325ULL;
  for (const auto& [c, m] : v) {
    h ^= static_cast<std::size_t>(c) * 0x9e3779b97f4a7c15ULL + static_cast<std::size_t>(m);
    h *= 0x100000001b3ULL;
  }
  return h;
}

TerminationDataset::TerminationDataset(DesignLayout layout)
    : layout_(layout), counts_(layout.dim(), 0) {
  if (layout.num_states <= 0 || layout.num_actions <= 0 || layout.horizon <= 0)
    throw InvalidArgument("TerminationDataset: layout dimensions must be positive");
  if (layout.window < 1) throw InvalidArgument("TerminationDataset: window must be >= 1");
}

void TerminationDataset::add_row(const VisitVector& visit, bool label) {
  auto [it, inserted] = row_index_.try_emplace(visit.entries, rows_.size());
  if (inserted) rows_.push_back(DesignRow{visit, 0.0, 0.0});
  DesignRow& row = rows_[it->second];
  if (label) {
    row.positives += 1.0;
    ++num_positive_;
  } else {
    row.negatives += 1.0;
  }
  ++num_examples_;
}

void TerminationDataset::add_example(const VisitVector& visit, bool label) {
  for (const auto& [coord, mult] : visit.entries) {
    if (coord < 0 || static_cast<std::size_t>(coord) >= layout_.dim())
      throw InvalidArgument("add_example: coordinate out of range");
  }
  add_row(visit, label);
  episode_sizes_.push_back(1);
}

void TerminationDataset::add_trajectory(const Trajectory& traj) {
  const int len = static_cast<int>(traj.length());
  if (len > layout_.horizon)
    throw InvalidArgument("build_dataset: trajectory longer than the horizon");
  if (traj.actions.size() != traj.states.size())
    throw InvalidArgument("build_dataset: inconsistent trajectory");
  const int informative = std::min(len, layout_.horizon - 1);
  for (int l = 0; l < informative; ++l) {
    const int s = traj.states[l];
    const int a = traj.actions[l];
    if (s < 0 || s >= layout_.num_states || a < 0 || a >= layout_.num_actions)
      throw InvalidArgument("build_dataset: state or action out of range");
    ++counts_[layout_.coord(l, s, a)];
    std::vector<int> coords;
    for (int j = std::max(0, l - layout_.window + 1); j <= l; ++j)
      coords.push_back(layout_.coord(j, traj.states[j], traj.actions[j]));
    const bool label = traj.termination_time && *traj.termination_time == l + 1;
    add_row(VisitVector::from_coords(std::move(coords)), label);
  }
  episode_sizes_.push_back(informative);
}

TerminationDataset build_dataset(std::span<const Trajectory> trajectories,
                                 const DesignLayout& layout) {
  TerminationDataset data(layout);
  for (const auto& t : trajectories) data.add_trajectory(t);
  return data;
}

namespace {

double linear_predictor(const DesignRow& row, std::span<const double> costs, double bias) {
  double z = -bias;
  for (const auto& [coord, mult] : row.visit.entries) z += mult * costs[coord];
  return z;
}

void check_costs(const TerminationDataset& data, std::span<const double> costs) {
  if (costs.size() != data.layout().dim())
    throw InvalidArgument("likelihood: cost vector has the wrong dimension");
}

}  // namespace

double log_likelihood(const TerminationDataset& data, std::span<const double> costs, double bias,
                      double lambda, double bias_lambda) {
  check_costs(data, costs);
  double total = 0.0;
  for (const auto& row : data.rows()) {
    const double z = linear_predictor(row, costs, bias);
    if (row.positives > 0.0) total += row.positives * log_logistic(z);
    if (row.negatives > 0.0) total += row.negatives * log_logistic(-z);
  }
  const double sq = std::inner_product(costs.begin(), costs.end(), costs.begin(), 0.0);
  total -= lambda * sq + bias_lambda * bias * bias;
  if (!std::isfinite(total)) throw NumericFailure("log_likelihood: non-finite value");
  return total;
}

LikelihoodGradient gradient(const TerminationDataset& data, std::span<const double> costs,
                            double bias, double lambda, double bias_lambda) {
  check_costs(data, costs);
  LikelihoodGradient g;
  g.costs.assign(costs.size(), 0.0);
  for (const auto& row : data.rows()) {
    const double z = linear_predictor(row, costs, bias);
    const double residual = row.positives - (row.positives + row.negatives) * logistic(z);
    for (const auto& [coord, mult] : row.visit.entries) g.costs[coord] += residual * mult;
    g.bias -= residual;
  }
  for (std::size_t i = 0; i < costs.size(); ++i) g.costs[i] -= 2.0 * lambda * costs[i];
  g.bias -= 2.0 * bias_lambda * bias;
  return g;
}

namespace {

bool project_ball(std::vector<double>& c, double radius) {
  const double norm = std::sqrt(std::inner_product(c.begin(), c.end(), c.begin(), 0.0));
  if (norm <= radius) return false;
  const double f = radius / norm;
  for (double& x : c) x *= f;
  return true;
}

struct Iterate {
  std::vector<double> costs;
  double bias = 0.0;
};

}  // namespace

CostEstimate fit_mle(const TerminationDataset& data, const FitOptions& opt) {
  if (!(opt.lambda > 0.0)) throw InvalidArgument("fit_mle: lambda must be positive");
  if (!(opt.norm_bound > 0.0)) throw InvalidArgument("fit_mle: L must be positive");
  const std::size_t dim = data.layout().dim();
  const bool free_bias = opt.mode == BiasMode::Estimate;

  Iterate x;
  x.costs.assign(dim, 0.0);
  x.bias = opt.known_bias;
  if (opt.warm_start != nullptr && opt.warm_start->c_hat.size() == dim) {
    x.costs = opt.warm_start->c_hat;
    if (free_bias && opt.warm_start->bias_hat) x.bias = *opt.warm_start->bias_hat;
  }
  project_ball(x.costs, opt.norm_bound);

  auto objective = [&](const Iterate& it) {
    return log_likelihood(data, it.costs, it.bias, opt.lambda, free_bias ? opt.bias_lambda : 0.0);
  };
  auto grad = [&](const Iterate& it) {
    auto g = gradient(data, it.costs, it.bias, opt.lambda, free_bias ? opt.bias_lambda : 0.0);
    if (!free_bias) g.bias = 0.0;
    return g;
  };
  // Projected-gradient stationarity: || P(x + g) - x ||_inf.
  auto stationarity = [&](const Iterate& it, const LikelihoodGradient& g) {
    std::vector<double> moved(dim);
    for (std::size_t i = 0; i < dim; ++i) moved[i] = it.costs[i] + g.costs[i];
    project_ball(moved, opt.norm_bound);
    double m = std::abs(g.bias);
    for (std::size_t i = 0; i < dim; ++i) m = std::max(m, std::abs(moved[i] - it.costs[i]));
    return m;
  };

  double f = objective(x);
  LikelihoodGradient g = grad(x);

  double curvature = 2.0 * opt.lambda + 2.0 * opt.bias_lambda;
  for (const auto& row : data.rows()) {
    const double k = row.visit.ones() + (free_bias ? 1.0 : 0.0);
    curvature += 0.25 * (row.positives + row.negatives) * k * k;
  }
  double step = 1.0 / curvature;

  int iter = 0;
  double pg = stationarity(x, g);
  while (pg > opt.tolerance) {
    if (iter >= opt.max_iterations) {
      throw ConvergenceFailure("fit_mle: no convergence after " + std::to_string(iter) +
                                   " iterations (projected gradient " + std::to_string(pg) + ")",
                               x.costs, x.bias, pg, iter);
    }
    ++iter;
    const double slack = 1e-15 * (1.0 + std::abs(f)) * (1.0 + std::sqrt(data.rows().size()));
    Iterate next;
    double f_next = f;
    double directional = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 80; ++tries) {
      next.costs.resize(dim);
      for (std::size_t i = 0; i < dim; ++i) next.costs[i] = x.costs[i] + step * g.costs[i];
      project_ball(next.costs, opt.norm_bound);
      next.bias = x.bias + step * g.bias;
      directional = g.bias * (next.bias - x.bias);
      for (std::size_t i = 0; i < dim; ++i) directional += g.costs[i] * (next.costs[i] - x.costs[i]);
      f_next = objective(next);
      if (f_next >= f + 1e-4 * directional || (f_next >= f - slack && directional <= slack)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      throw ConvergenceFailure("fit_mle: line search failed (projected gradient " +
                                   std::to_string(pg) + ")",
                               x.costs, x.bias, pg, iter);
    }
    LikelihoodGradient g_next = grad(next);
    // Barzilai-Borwein step for the next trial: |s|^2 / -<s, y>.
    double ss = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double s = next.costs[i] - x.costs[i];
      ss += s * s;
      sy += s * (g_next.costs[i] - g.costs[i]);
    }
    {
      const double s = next.bias - x.bias;
      ss += s * s;
      sy += s * (g_next.bias - g.bias);
    }
    if (sy < 0.0 && ss > 0.0) {
      step = std::clamp(ss / -sy, 1e-12 / curvature, 1e12);
    } else {
      step = std::min(step * 4.0, 1e12);
    }
    x = std::move(next);
    f = f_next;
    g = std::move(g_next);
    pg = stationarity(x, g);
  }

  CostEstimate est;
  est.layout = data.layout();
  est.c_hat = x.costs;
  if (free_bias) est.bias_hat = x.bias;
  est.counts = data.counts();
  est.lambda = opt.lambda;
  est.objective_value = f;
  est.iterations = iter;
  est.projected_gradient_norm = pg;
  const double norm = std::sqrt(std::inner_product(x.costs.begin(), x.costs.end(),
                                                   x.costs.begin(), 0.0));
  est.projection_active = norm >= opt.norm_bound * (1.0 - 1e-12);
  return est;
}

double default_lambda(int num_states, int num_actions, int horizon, double norm_bound) {
  const double d = static_cast<double>(num_states) * num_actions * horizon;
  return d / (norm_bound * std::sqrt(static_cast<double>(horizon)) + 0.5);
}

double confidence_radius(double count, const RadiusParams& p) {
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw InvalidArgument("confidence_radius: delta in (0,1)");
  if (p.norm_bound < 0.0 || !(p.scale > 0.0) || p.kappa <= 0.0)
    throw InvalidArgument("confidence_radius: parameters must be positive");
  const double S = p.num_states;
  const double A = p.num_actions;
  const double H = p.horizon;
  const double L = p.norm_bound;
  const double k = static_cast<double>(p.episode);
  const double log_term =
      std::log(16.0 / p.delta * (1.0 + k * (L + 0.5) / (16.0 * S * S * A * A * std::sqrt(H))));
  const double ridge = 4.0 * S * A * H / (L * std::sqrt(H) + 0.5);
  const double denom = std::sqrt(std::max(count, 0.0) + ridge);
  if (p.mode == RadiusMode::Practical) return p.scale * log_term / denom;
  const double prefactor =
      24.0 * std::sqrt(p.kappa * S * A * std::pow(H, 2.5)) * std::pow(L + 1.0, 1.5);
  return p.scale * prefactor * log_term * log_term / denom;
}

ConfidenceRadii confidence_radii(std::span<const std::int64_t> counts, const RadiusParams& params) {
  ConfidenceRadii out;
  out.params = params;
  out.radius.reserve(counts.size());
  for (auto n : counts) out.radius.push_back(confidence_radius(static_cast<double>(n), params));
  return out;
}

}  // namespace termdp
