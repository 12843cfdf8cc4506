#include <doctest.h>

#include <cmath>
#include <vector>

#include "termdp/errors.hpp"
#include "termdp/generators.hpp"
#include "termdp/oracle.hpp"
#include "termdp/planner.hpp"

using namespace termdp;

namespace {

TerMdpSpec tiny(std::uint64_t seed, int S, int A, int H, double res = 0.1, double cmax = 1.0,
                bool signed_costs = false, double bias = 1.0, int window = 0) {
  RandomTermdpParams p;
  p.num_states = S;
  p.num_actions = A;
  p.horizon = H;
  p.resolution = res;
  p.cost_max = cmax;
  p.signed_costs = signed_costs;
  p.bias = bias;
  p.window = window;
  return random_termdp(p, seed);
}

// Plain finite-horizon DP with a constant survival factor.
double constant_discount_value(const TerMdpSpec& spec, double gamma) {
  std::vector<double> next(spec.num_states, 0.0), cur(spec.num_states);
  for (int h = spec.horizon - 1; h >= 0; --h) {
    for (int s = 0; s < spec.num_states; ++s) {
      double best = -1e300;
      for (int a = 0; a < spec.num_actions; ++a) {
        double ev = 0.0;
        const auto row = spec.transition_row(h, s, a);
        for (int s2 = 0; s2 < spec.num_states; ++s2) ev += row[s2] * next[s2];
        best = std::max(best, spec.reward(h, s, a) + gamma * ev);
      }
      cur[s] = best;
    }
    next = cur;
  }
  return next[spec.initial_state];
}

}  // namespace

TEST_CASE("quantization floors onto the lattice") {
  const auto lat = CostLattice::unclipped(0.1, -10, 10);
  CHECK(lat.quantize(0.37) == 3);
  CHECK(lat.value(lat.quantize(0.37)) == doctest::Approx(0.3));
  CHECK(lat.quantize(0.3) == 3);
  CHECK(lat.quantize(-0.05) == -1);
  CHECK(lat.quantize(-0.3) == -3);
  const std::vector<double> raw{0.37, 0.3, -0.05, 1.0};
  const auto q = quantize_costs(raw, 0.1);
  CHECK(q[0] == doctest::Approx(0.3));
  CHECK(q[1] == doctest::Approx(0.3));
  CHECK(q[2] == doctest::Approx(-0.1));
  CHECK(q[3] == doctest::Approx(1.0));
  CHECK_THROWS_AS(lat.accumulate(8, 5), InvalidArgument);
  const auto clipped = CostLattice::clipped(0.1, 2.0, 1.0);
  CHECK(clipped.accumulate(28, 5) == clipped.max_index());
}

TEST_CASE("clipped lattice size") {
  for (double dc : {0.05, 0.1, 0.2})
    for (double cstar : {1.0, 2.5, 4.0})
      for (double b : {0.0, 1.0, 6.0}) {
        const auto lat = CostLattice::clipped(dc, cstar, b);
        CHECK(lat.bins() == static_cast<std::size_t>(std::floor((cstar + b) / dc + 1e-9)) + 1);
        CHECK(lat.value(lat.max_index()) - b <= cstar + 1e-12);
        CHECK(lat.value(lat.max_index()) - b > cstar - dc);
      }
  CHECK_THROWS_AS(CostLattice::clipped(0.1, 1.0, -3.0), InvalidArgument);
}

TEST_CASE("one-step and two-step values") {
  auto spec = TerMdpSpec::zeros(1, 2, 1, true);
  spec.rewards = {0.3, 0.8};
  auto table = plan(spec, CostLattice::for_spec(spec, 0.1));
  CHECK(table.initial_value() == doctest::Approx(0.8));
  CHECK(table.action(0, 0, {}) == 1);

  auto two = TerMdpSpec::zeros(1, 1, 2, true);
  two.rewards = {1.0};
  two.bias = 0.0;
  CHECK(plan(two, CostLattice::for_spec(two, 0.1)).initial_value() == doctest::Approx(1.5));
}

TEST_CASE("zero costs reduce to a constant discount") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto spec = tiny(seed, 3, 2, 5, 0.1, 0.0, false, 0.5 * static_cast<double>(seed % 5) - 1.0);
    const double gamma = 1.0 - logistic(-spec.bias);
    const auto table = plan(spec, CostLattice::for_spec(spec, 0.1));
    CHECK(std::abs(table.initial_value() - constant_discount_value(spec, gamma)) <= 1e-9);
  }
}

TEST_CASE("Bellman residual vanishes on dense and windowed tables") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = tiny(100 + seed, 3, 2, 5, 0.1, 1.0, seed % 2 == 1);
    auto table = plan(spec, CostLattice::for_spec(spec, 0.1));
    CHECK(bellman_residual(spec, table) <= 1e-10);
    CHECK(bellman_residual(spec, plan(spec, CostLattice::for_spec(spec, 0.1), {true})) <= 1e-10);
    spec.window = 2;
    auto windowed = plan(spec, CostLattice::for_spec(spec, 0.1));
    REQUIRE(windowed.windowed());
    CHECK(bellman_residual(spec, windowed) <= 1e-10);
  }
}

TEST_CASE("values are non-increasing in the accumulated cost") {
  auto spec = tiny(7, 3, 2, 4, 0.1, 1.0, true);
  const auto table = plan(spec, CostLattice::for_spec(spec, 0.1));
  for (int h = 0; h < spec.horizon; ++h)
    for (int s = 0; s < spec.num_states; ++s)
      for (auto i = table.reachable(h).first; i < table.reachable(h).second; ++i)
        CHECK(table.value_at(h, s, i) >= table.value_at(h, s, i + 1) - 1e-12);
}

TEST_CASE("flooring costs never lowers the planned value") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = tiny(200 + seed, 3, 2, 4, 0.01, 1.0);
    const double exact = plan(spec, CostLattice::for_spec(spec, 0.01)).initial_value();
    for (double dc : {0.05, 0.1, 0.2})
      CHECK(plan(spec, CostLattice::for_spec(spec, dc)).initial_value() >= exact - 1e-12);
  }
}

TEST_CASE("exact evaluation matches enumeration and Monte Carlo") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = tiny(300 + seed, 3, 2, 4, 0.05, 1.0, seed % 2 == 0, 0.5);
    if (seed % 3 == 0) spec.window = 2;
    for (double dc : {0.05, 0.2}) {
      const auto table = plan(spec, CostLattice::for_spec(spec, dc));
      const double exact = evaluate_policy_exact(spec, table).value;
      CHECK(std::abs(exact - brute_force_value(spec, deterministic(as_policy(table), 2))) <= 1e-9);
    }
  }
  auto spec = tiny(42, 3, 2, 5, 0.1);
  const auto table = plan(spec, CostLattice::for_spec(spec, 0.2));
  Rng rng(5);
  const auto mc = evaluate_policy_monte_carlo(spec, as_policy(table), 40000, rng);
  const double exact = evaluate_policy_exact(spec, table).value;
  CHECK(std::abs(mc.value - exact) <= 3.0 * mc.std_error);
}

TEST_CASE("the windowed planner is optimal") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto spec = tiny(400 + seed, 2, 2, 4, 0.1, 1.0, seed % 2 == 0, 0.3, 1 + static_cast<int>(seed % 3));
    const auto table = plan(spec, CostLattice::for_spec(spec, 0.1));
    CHECK(std::abs(table.initial_value() - brute_force_optimal(spec).value) <= 1e-9);
  }
}

TEST_CASE("quantization gap stays within its bound") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto spec = tiny(500 + seed, 3, 2, 4, 0.01, 1.0);
    for (double dc : {0.05, 0.1, 0.2}) {
      const auto g = quantization_gap(spec, dc);
      CHECK(g.gap >= -1e-12);
      CHECK(g.gap <= g.bound);
      CHECK(g.quantized_value >= g.exact_value - 1e-12);
      const auto gc = quantization_gap(spec, dc, 2.0);
      CHECK(gc.gap <= 64.0 * dc / 2.0 + 2.0 * 16.0 * std::exp(-2.0));
    }
  }
  const auto e = lattice_for_epsilon(4, 0.5, false);
  CHECK(e.resolution == doctest::Approx(2 * 0.5 / 64.0));
  const auto ec = lattice_for_epsilon(4, 0.5, true);
  CHECK(ec.resolution == doctest::Approx(0.5 / 64.0));
  CHECK(*ec.clip_threshold == doctest::Approx(std::log(4 * 16 / 0.5)));
}

TEST_CASE("off-grid true costs are refused by exact evaluation") {
  auto spec = tiny(9, 2, 2, 3);
  spec.costs[0] = 0.123456789;
  spec.norm_bound = spec.cost_norm();
  const auto table = plan(spec, CostLattice::for_spec(spec, 0.1));
  CHECK_THROWS_AS(evaluate_policy_exact(spec, table), UnsupportedConfiguration);
  CHECK_FALSE(grid_resolution(spec).has_value());
}
