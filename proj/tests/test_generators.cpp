#include <doctest.h>

#include <cmath>

#include "termdp/errors.hpp"
#include "termdp/generators.hpp"
#include "termdp/io.hpp"
#include "termdp/oracle.hpp"
#include "termdp/planner.hpp"

using namespace termdp;

TEST_CASE("generators are deterministic under a seed") {
  const auto a = spec_to_json(chain(ChainParams{}, 17)).dump();
  const auto b = spec_to_json(chain(ChainParams{}, 17)).dump();
  CHECK(a == b);
  nlohmann::json params{{"S", 4}, {"A", 3}, {"H", 5}, {"signed_costs", true}};
  CHECK(spec_to_json(generate("random-termdp", params, 3)).dump() ==
        spec_to_json(generate("random-termdp", params, 3)).dump());
  CHECK(spec_to_json(generate("random-termdp", params, 3)).dump() !=
        spec_to_json(generate("random-termdp", params, 4)).dump());
  CHECK(spec_to_json(generate("gridworld-coins", {}, 8)).dump() ==
        spec_to_json(generate("gridworld-coins", {}, 8)).dump());
}

TEST_CASE("random-termdp shrinks costs into the norm ball and keeps them on the grid") {
  RandomTermdpParams p;
  p.num_states = 4;
  p.num_actions = 3;
  p.horizon = 5;
  p.cost_max = 2.0;
  p.signed_costs = true;
  p.resolution = 0.05;
  for (double L : {0.5, 1.0, 3.0}) {
    p.norm_bound = L;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto spec = random_termdp(p, seed);
      CHECK(spec.cost_norm() <= L + 1e-12);
      CHECK(spec.norm_bound == L);
      for (double c : spec.costs) CHECK(std::abs(c / 0.05 - std::round(c / 0.05)) < 1e-6);
      CHECK(grid_resolution(spec).has_value());
    }
  }
}

TEST_CASE("gridworld-coins layout") {
  GridworldCoinsParams p;
  p.safe_lane = 2;
  const auto spec = gridworld_coins(p, 5);
  CHECK(spec.num_states == 25);
  CHECK(spec.num_actions == 3);
  CHECK(spec.initial_state == 2);
  // Staying in the safe lane never costs anything.
  for (int row = 0; row < 5; ++row) CHECK(spec.cost(0, row * 5 + 2, 1) == 0.0);
  // Lane changes clamp at the edges; the next row is uniform over the rows.
  for (int row = 0; row < 5; ++row) {
    CHECK(spec.transition_row(0, 0, 0)[row * 5] == doctest::Approx(0.2));
    CHECK(spec.transition_row(0, 4, 2)[row * 5 + 4] == doctest::Approx(0.2));
  }
  bool any_coin = false;
  for (double c : spec.costs) any_coin |= c > 0.0;
  CHECK(any_coin);

  p.random_rows = false;
  const auto loop = gridworld_coins(p, 5);
  CHECK(loop.transition_row(0, 0, 0)[5] == 1.0);
  CHECK(loop.transition_row(0, 4, 2)[9] == 1.0);
  CHECK(loop.transition_row(0, 24, 1)[4] == 1.0);
  // Rewards and costs belong to the cell the action drives through.
  CHECK(loop.cost(0, 1, 0) == loop.cost(0, 0, 1));
  CHECK(loop.reward(0, 3, 2) == loop.reward(0, 4, 1));
}

TEST_CASE("a coin-free path gives a positive optimal value") {
  nlohmann::json params{{"width", 3}, {"height", 3}, {"H", 4}, {"window", 4}, {"coin_density", 0.8}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto spec = generate("gridworld-coins", params, seed);
    const double v = brute_force_optimal(spec).value;
    CHECK(v > 0.0);
    const auto lat = CostLattice::for_spec(spec, *grid_resolution(spec));
    CHECK(std::abs(plan(spec, lat).initial_value() - v) <= 1e-9);
  }
}

TEST_CASE("generator parameter errors") {
  CHECK_THROWS_AS(generate("maze", {}, 0), InvalidArgument);
  CHECK_THROWS_AS(generate("chain", {{"S", 1}}, 0), InvalidArgument);
  CHECK_THROWS_AS(generate("chain", {{"bogus", 1}}, 0), InvalidArgument);
  CHECK_THROWS_AS(generate("random-termdp", {{"S", "three"}}, 0), InvalidArgument);
  CHECK_THROWS_AS(generate("gridworld-coins", {{"coin_density", 1.5}}, 0), InvalidArgument);
  CHECK(generator_resolution("gridworld-coins", {}) == 0.5);
}
