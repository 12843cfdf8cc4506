#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "termdp/errors.hpp"
#include "termdp/estimator.hpp"

using namespace termdp;

namespace {

Trajectory make_traj(std::vector<int> states, std::vector<int> actions, std::optional<int> tstar) {
  Trajectory t;
  t.states = std::move(states);
  t.actions = std::move(actions);
  t.rewards.assign(t.states.size(), 0.0);
  t.accumulated_costs.assign(t.states.size(), 0.0);
  t.termination_time = tstar;
  return t;
}

TerminationDataset random_dataset(Rng& rng, DesignLayout layout, int episodes) {
  TerminationDataset data(layout);
  for (int e = 0; e < episodes; ++e) {
    const int len = 1 + rng.uniform_int(layout.horizon);
    std::vector<int> s(len), a(len);
    for (int i = 0; i < len; ++i) {
      s[i] = rng.uniform_int(layout.num_states);
      a[i] = rng.uniform_int(layout.num_actions);
    }
    std::optional<int> tstar;
    if (len < layout.horizon || rng.bernoulli(0.5)) tstar = len;
    data.add_trajectory(make_traj(s, a, tstar));
  }
  return data;
}

TerMdpSpec planted(Rng& rng) {
  auto spec = TerMdpSpec::zeros(2, 2, 3, false);
  for (auto& c : spec.costs) c = 0.5 * rng.uniform_int(5);
  spec.bias = 1.5;
  spec.norm_bound = spec.cost_norm() + 1.0;
  for (int h = 0; h < 3; ++h)
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) {
        auto row = spec.transition_row(h, s, a);
        row[0] = a == 0 ? 0.8 : 0.3;
        row[1] = 1.0 - row[0];
      }
  return spec;
}

}  // namespace

TEST_CASE("dataset labels follow the indicator structure") {
  DesignLayout layout{3, 2, 6, 6, false};
  TerminationDataset data(layout);
  data.add_trajectory(make_traj({0, 1, 2, 0, 1}, {0, 1, 0, 1, 0}, 5));
  CHECK(data.num_examples() == 5);
  CHECK(data.num_positive() == 1);

  TerminationDataset full(layout);
  full.add_trajectory(make_traj({0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}, std::nullopt));
  CHECK(full.num_examples() == 5);
  CHECK(full.num_positive() == 0);
  CHECK(full.count(5, 0, 0) == 0);
  CHECK(full.count(4, 0, 0) == 1);

  TerminationDataset empty = build_dataset({}, layout);
  CHECK(empty.empty());
  CHECK(std::all_of(empty.counts().begin(), empty.counts().end(), [](auto n) { return n == 0; }));

  CHECK_THROWS_AS(data.add_trajectory(make_traj({0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0}, 7)),
                  InvalidArgument);
}

TEST_CASE("visit vectors are window truncated and binary") {
  DesignLayout layout{2, 1, 5, 2, false};
  TerminationDataset data(layout);
  data.add_trajectory(make_traj({0, 1, 0, 1}, {0, 0, 0, 0}, 4));
  for (const auto& row : data.rows()) {
    CHECK(row.visit.ones() <= 2);
    for (const auto& [coord, mult] : row.visit.entries) CHECK(mult == 1);
  }
  CHECK(data.rows().size() == 4);
  CHECK(data.rows()[3].visit.entries.front().first == layout.coord(2, 0, 0));

  DesignLayout shared{2, 1, 5, 5, true};
  TerminationDataset s(shared);
  s.add_trajectory(make_traj({0, 0, 0}, {0, 0, 0}, 3));
  CHECK(s.rows().back().visit.entries.size() == 1);
  CHECK(s.rows().back().visit.entries[0].second == 3);
  CHECK(s.counts()[0] == 3);
}

TEST_CASE("likelihood at zero costs") {
  Rng rng(3);
  DesignLayout layout{2, 2, 4, 4, false};
  auto data = random_dataset(rng, layout, 50);
  std::vector<double> zero(layout.dim(), 0.0);
  CHECK(log_likelihood(data, zero, 0.0, 0.7) ==
        doctest::Approx(static_cast<double>(data.num_examples()) * std::log(0.5)));
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    DesignLayout layout{2, 2, 3 + trial % 2, 2 + trial % 3, trial % 2 == 0};
    layout.window = std::min(layout.window, layout.horizon);
    auto data = random_dataset(rng, layout, 40);
    std::vector<double> c(layout.dim());
    for (auto& x : c) x = rng.uniform() * 2.0 - 1.0;
    const double b = rng.uniform() * 2.0;
    const double lambda = 0.3;
    const double bias_lambda = 0.1;
    auto g = gradient(data, c, b, lambda, bias_lambda);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto up = c, dn = c;
      up[i] += eps;
      dn[i] -= eps;
      const double fd = (log_likelihood(data, up, b, lambda, bias_lambda) -
                         log_likelihood(data, dn, b, lambda, bias_lambda)) / (2 * eps);
      worst = std::max(worst, std::abs(fd - g.costs[i]) / std::max(1.0, std::abs(fd)));
    }
    const double fdb = (log_likelihood(data, c, b + eps, lambda, bias_lambda) -
                        log_likelihood(data, c, b - eps, lambda, bias_lambda)) / (2 * eps);
    worst = std::max(worst, std::abs(fdb - g.bias) / std::max(1.0, std::abs(fdb)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("likelihood is concave along segments") {
  Rng rng(9);
  DesignLayout layout{2, 2, 4, 3, false};
  auto data = random_dataset(rng, layout, 60);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> c1(layout.dim()), c2(layout.dim()), mid(layout.dim());
    for (auto& x : c1) x = 4 * rng.uniform() - 2;
    for (auto& x : c2) x = 4 * rng.uniform() - 2;
    const double t = rng.uniform();
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = t * c1[i] + (1 - t) * c2[i];
    const double lhs = log_likelihood(data, mid, 1.0, 0.2);
    const double rhs = t * log_likelihood(data, c1, 1.0, 0.2) + (1 - t) * log_likelihood(data, c2, 1.0, 0.2);
    CHECK(lhs >= rhs - 1e-12 * (1 + std::abs(rhs)));
  }
}

TEST_CASE("empty dataset fits to zero exactly") {
  DesignLayout layout{3, 2, 4, 4, false};
  TerminationDataset data(layout);
  FitOptions opt;
  opt.lambda = 2.0;
  opt.norm_bound = 3.0;
  auto est = fit_mle(data, opt);
  for (double c : est.c_hat) CHECK(c == 0.0);
  CHECK(est.objective_value == 0.0);
}

TEST_CASE("single always-visited coordinate inverts the logit") {
  DesignLayout layout{1, 1, 2, 2, false};
  TerminationDataset data(layout);
  VisitVector v = VisitVector::from_coords({0});
  const int positives = 37, total = 200;
  for (int i = 0; i < total; ++i) data.add_example(v, i < positives);
  const double b = 1.3;
  FitOptions opt;
  opt.lambda = 1e-9;
  opt.norm_bound = 100.0;
  opt.known_bias = b;
  auto est = fit_mle(data, opt);
  const double p = static_cast<double>(positives) / total;
  CHECK(est.c_hat[0] == doctest::Approx(std::log(p / (1 - p)) + b).epsilon(1e-6));
  CHECK(est.c_hat[1] == 0.0);
  CHECK(est.projected_gradient_norm <= 1e-8);

  // Estimate-bias mode with only a bias: base rate recovered through the intercept.
  FitOptions free = opt;
  free.mode = BiasMode::Estimate;
  free.lambda = 1e6;
  auto est2 = fit_mle(data, free);
  CHECK(std::abs(est2.c_hat[0]) < 1e-3);
  CHECK(logistic(-*est2.bias_hat) == doctest::Approx(p).epsilon(1e-3));
}

TEST_CASE("unvisited coordinates stay at zero and counts match") {
  Rng rng(21);
  auto spec = planted(rng);
  auto layout = DesignLayout::for_spec(spec);
  std::vector<Trajectory> trajs;
  // Only action 0 is ever taken.
  for (int i = 0; i < 300; ++i)
    trajs.push_back(rollout(spec, [](const StepContext&, Rng&) { return 0; }, rng));
  auto data = build_dataset(trajs, layout);
  FitOptions opt;
  opt.lambda = 1.0;
  opt.norm_bound = spec.norm_bound;
  opt.known_bias = spec.bias;
  auto est = fit_mle(data, opt);
  for (int h = 0; h < 3; ++h)
    for (int s = 0; s < 2; ++s) CHECK(est.cost(h, s, 1) == 0.0);
  CHECK(est.counts == data.counts());
}

TEST_CASE("planted costs are recovered with enough data") {
  Rng rng(33);
  auto spec = planted(rng);
  auto layout = DesignLayout::for_spec(spec);
  TerminationDataset data(layout);
  for (int i = 0; i < 40000; ++i) data.add_trajectory(rollout(spec, uniform_policy(2), rng));
  FitOptions opt;
  opt.lambda = default_lambda(2, 2, 3, spec.norm_bound);
  opt.norm_bound = spec.norm_bound;
  opt.known_bias = spec.bias;
  auto est = fit_mle(data, opt);
  for (int h = 0; h < 2; ++h)
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a)
        if (data.count(h, s, a) >= 5000) CHECK(std::abs(est.cost(h, s, a) - spec.cost(h, s, a)) < 0.1);

  // Warm start from the optimum converges immediately.
  FitOptions warm = opt;
  warm.warm_start = &est;
  auto again = fit_mle(data, warm);
  CHECK(again.iterations <= 2);
}

TEST_CASE("projection onto the L2 ball is reported") {
  DesignLayout layout{1, 1, 2, 2, false};
  TerminationDataset data(layout);
  VisitVector v = VisitVector::from_coords({0});
  for (int i = 0; i < 100; ++i) data.add_example(v, i < 95);
  FitOptions opt;
  opt.lambda = 1e-3;
  opt.norm_bound = 0.5;
  auto est = fit_mle(data, opt);
  CHECK(est.projection_active);
  CHECK(est.c_hat[0] == doctest::Approx(0.5));
}

TEST_CASE("fit reports convergence failure with the last iterate") {
  Rng rng(1);
  DesignLayout layout{2, 2, 4, 4, false};
  auto data = random_dataset(rng, layout, 100);
  FitOptions opt;
  opt.lambda = 0.01;
  opt.norm_bound = 10.0;
  opt.max_iterations = 1;
  opt.tolerance = 1e-14;
  try {
    fit_mle(data, opt);
    FAIL("expected ConvergenceFailure");
  } catch (const ConvergenceFailure& e) {
    CHECK(e.last_iterate().size() == layout.dim());
    CHECK(e.gradient_norm() > 0.0);
  }
  CHECK_THROWS_AS(fit_mle(data, FitOptions{.lambda = 0.0}), InvalidArgument);
}

TEST_CASE("confidence radius formula") {
  RadiusParams p;
  p.kappa = 4.0;
  p.num_states = p.num_actions = p.horizon = 1;
  p.norm_bound = 0.0;
  p.delta = 0.5;
  p.episode = 0;
  const double log_sq = std::pow(std::log(16.0 / 0.5), 2);
  // 24 * sqrt(4) * 1 / sqrt(0 + 8)
  CHECK(confidence_radius(0.0, p) / log_sq == doctest::Approx(16.97).epsilon(1e-3));
  CHECK(std::isfinite(confidence_radius(0.0, p)));
  CHECK(confidence_radius(1e12, p) < 1e-3 * confidence_radius(0.0, p));

  p.norm_bound = 2.0;
  p.num_states = 3;
  p.num_actions = 2;
  p.horizon = 4;
  p.delta = 0.1;
  p.episode = 100;
  double prev = confidence_radius(0.0, p);
  for (double n : {1.0, 2.0, 10.0, 1000.0}) {
    const double r = confidence_radius(n, p);
    CHECK(r < prev);
    prev = r;
  }
  const double ratio = confidence_radius(2e6, p) / confidence_radius(1e6, p);
  CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));

  RadiusParams practical = p;
  practical.mode = RadiusMode::Practical;
  practical.scale = 0.05;
  CHECK(confidence_radius(10.0, practical) < confidence_radius(10.0, p));
  CHECK_THROWS_AS(confidence_radius(1.0, RadiusParams{.delta = 1.5}), InvalidArgument);

  std::vector<std::int64_t> counts{0, 5, 50};
  auto radii = confidence_radii(counts, p);
  CHECK(radii.radius.size() == 3);
  CHECK(radii.radius[0] > radii.radius[2]);
}
