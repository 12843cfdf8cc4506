#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "termdp/errors.hpp"
#include "termdp/generators.hpp"
#include "termdp/oracle.hpp"
#include "termdp/termpg.hpp"

using namespace termdp;

namespace {

Trajectory make_traj(int length, std::optional<int> t_star) {
  Trajectory t;
  for (int h = 0; h < length; ++h) {
    t.states.push_back(h % 3);
    t.actions.push_back(h % 2);
    t.rewards.push_back(1.0);
    t.accumulated_costs.push_back(0.0);
  }
  t.termination_time = t_star;
  return t;
}

// One action, states visited in order, so every path is deterministic.
TerMdpSpec line_spec(const std::vector<double>& costs, double bias, int window) {
  const int H = static_cast<int>(costs.size());
  auto spec = TerMdpSpec::zeros(H, 1, H, true);
  spec.bias = bias;
  spec.window = window;
  for (int s = 0; s < H; ++s) {
    spec.rewards[spec.index(0, s, 0)] = 1.0;
    spec.costs[spec.index(0, s, 0)] = costs[s];
    auto row = spec.transition_row(0, s, 0);
    std::fill(row.begin(), row.end(), 0.0);
    row[std::min(s + 1, H - 1)] = 1.0;
  }
  spec.norm_bound = spec.cost_norm();
  spec.validate();
  return spec;
}

}  // namespace

TEST_CASE("split_windows on terminated and unterminated trajectories") {
  auto ex = split_windows(make_traj(5, 5), 3);
  REQUIRE(ex.size() == 5);
  for (int i = 0; i < 4; ++i) CHECK_FALSE(ex[i].label);
  CHECK(ex[4].label);
  CHECK(ex[4].steps.size() == 3);
  CHECK(ex[4].steps.front() == std::pair{2, 0});

  ex = split_windows(make_traj(6, std::nullopt), 10);
  REQUIRE(ex.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK_FALSE(ex[i].label);
    CHECK(ex[i].steps.size() == static_cast<std::size_t>(i + 1));
  }

  ex = split_windows(make_traj(1, 1), 4);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].label);

  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = 1 + rng.uniform_int(12);
    const int w = 1 + rng.uniform_int(6);
    const bool term = rng.uniform() < 0.5;
    const auto out = split_windows(make_traj(len, term ? std::optional<int>(len) : std::nullopt), w);
    CHECK(out.size() == static_cast<std::size_t>(len));
    const auto positives = std::count_if(out.begin(), out.end(), [](const auto& e) { return e.label; });
    CHECK(positives == (term ? 1 : 0));
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i].steps.size() == std::min<std::size_t>(i + 1, w));
  }

  CHECK_THROWS_AS(split_windows(make_traj(3, 3), 0), InvalidArgument);
  CHECK_THROWS_AS(split_windows(Trajectory{}, 2), InvalidArgument);
}

TEST_CASE("optimistic cost takes the per-step minimum") {
  // Two members on two (s, a) pairs: (1, 3) and (2, 0).
  CostEnsemble ens(2, 1, {CostMember{{1.0, 2.0}, 0.0}, CostMember{{3.0, 0.0}, 0.0}});
  const std::vector<std::pair<int, int>> window{{0, 0}, {1, 0}};
  CHECK(optimistic_cost(window, ens) == 1.0);
  CHECK(optimistic_cost(window, ens, OptimismMode::Mean) == 3.0);
  CHECK(optimistic_cost(window, ens, OptimismMode::MeanMinusStd, 1.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(optimistic_cost({}, ens), InvalidArgument);

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CostMember> members(3);
    for (auto& m : members)
      for (int i = 0; i < 6; ++i) m.costs.push_back(rng.uniform() * 4.0 - 2.0);
    CostEnsemble e(3, 2, members);
    std::vector<std::pair<int, int>> w;
    for (int i = 0; i < 4; ++i) w.emplace_back(rng.uniform_int(3), rng.uniform_int(2));
    const double opt = optimistic_cost(w, e);
    for (std::size_t m = 0; m < 3; ++m) {
      double member_total = 0.0;
      for (const auto& [s, a] : w) member_total += e.cost(m, s, a);
      CHECK(opt <= member_total + 1e-12);
    }
  }
}

TEST_CASE("dynamic discount values") {
  CHECK(dynamic_discount(2.0, 2.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(dynamic_discount(-1e6, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(dynamic_discount(1.0 + std::log(3.0), 1.0) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("discounts from true costs reproduce the survival-weighted value") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int H = 3 + rng.uniform_int(4);
    std::vector<double> costs(H);
    for (auto& c : costs) c = std::round((rng.uniform() * 3.0 - 1.0) * 10.0) / 10.0;
    const int w = 1 + rng.uniform_int(H);
    const double b = rng.uniform() * 2.0;
    const auto spec = line_spec(costs, b, w);

    std::vector<CostMember> members(1);
    members[0].costs = costs;
    const CostEnsemble truth(H, 1, members);
    std::vector<std::pair<int, int>> path;
    std::vector<double> rewards(H, 1.0), discounts(H);
    for (int h = 0; h < H; ++h) {
      path.emplace_back(h, 0);
      const std::size_t from = path.size() > static_cast<std::size_t>(w) ? path.size() - w : 0;
      const std::span<const std::pair<int, int>> win(path.data() + from, path.size() - from);
      discounts[h] = dynamic_discount(optimistic_cost(win, truth), b);
    }
    const double via_discounts = discounted_returns(rewards, discounts)[0];
    CHECK(std::abs(via_discounts - brute_force_optimal(spec).value) <= 1e-12);
  }
}

TEST_CASE("gae with lambda one and zero baseline equals discounted returns") {
  const std::vector<double> r{1.0, 0.5, -0.2, 2.0};
  const std::vector<double> g{0.9, 0.8, 0.7, 0.6};
  const std::vector<double> zero(4, 0.0);
  const auto adv = gae(r, zero, g, 1.0);
  const auto ret = discounted_returns(r, g);
  for (int i = 0; i < 4; ++i) CHECK(adv[i] == doctest::Approx(ret[i]).epsilon(1e-14));
  // lambda = 0 leaves one-step TD errors.
  const std::vector<double> v{0.3, 0.1, 0.4, 0.2};
  const auto td = gae(r, v, g, 0.0);
  CHECK(td[1] == doctest::Approx(0.5 + 0.8 * 0.4 - 0.1));
  CHECK(td[3] == doctest::Approx(2.0 - 0.2));
}

TEST_CASE("surrogate gradient matches finite differences") {
  Rng rng(2);
  SoftmaxPolicy policy(3, 3, 4, 0.5);
  for (auto& x : policy.parameters()) x = rng.uniform() * 2.0 - 1.0;
  std::vector<PgSample> batch;
  for (int i = 0; i < 40; ++i)
    batch.push_back({rng.uniform_int(3), rng.uniform_int(4), rng.uniform_int(3), rng.uniform() * 4.0 - 2.0});
  const auto grad = surrogate_gradient(policy, batch, 8.0);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    auto plus = policy, minus = policy;
    plus.parameters()[i] += eps;
    minus.parameters()[i] -= eps;
    const double fd =
        (surrogate_objective(plus, batch, 8.0) - surrogate_objective(minus, batch, 8.0)) / (2 * eps);
    CHECK(std::abs(fd - grad[i]) <= 1e-5);
  }
}

TEST_CASE("a positive advantage raises the chosen action's logit") {
  SoftmaxPolicy policy(1, 2, 1, 1.0);
  const std::vector<PgSample> batch{{0, 0, 1, 1.0}, {0, 0, 0, -0.5}};
  const auto g = surrogate_gradient(policy, batch, 1.0);
  CHECK(g[1] > 0.0);
  CHECK(g[0] < 0.0);

  const std::vector<PgSample> flat{{0, 0, 1, 0.0}, {0, 0, 0, 0.0}};
  for (double x : surrogate_gradient(policy, flat, 1.0)) CHECK(x == 0.0);

  const std::vector<PgSample> bad{{0, 0, 1, std::nan("")}};
  CHECK_THROWS_AS(surrogate_gradient(policy, bad, 1.0), NumericFailure);
}

TEST_CASE("policy buckets clamp at both ends") {
  SoftmaxPolicy policy(1, 2, 4, 0.5);
  CHECK(policy.bucket(-3.0) == 0);
  CHECK(policy.bucket(0.0) == 0);
  CHECK(policy.bucket(0.5) == 1);
  CHECK(policy.bucket(1.49) == 2);
  CHECK(policy.bucket(100.0) == 3);
}

TEST_CASE("replay buffer drops the oldest trajectory") {
  ReplayBuffer buf(2);
  for (int len = 1; len <= 3; ++len) buf.push(make_traj(len, std::nullopt));
  REQUIRE(buf.size() == 2);
  CHECK(buf.trajectories().front().length() == 2);
  CHECK(buf.trajectories().back().length() == 3);
  CHECK_THROWS_AS(ReplayBuffer(0), InvalidArgument);
}

TEST_CASE("ensemble training is deterministic and shrinks under heavy ridge") {
  const auto spec = line_spec({1.0, 0.0, 2.0, 0.5}, 1.0, 2);
  Rng env(5);
  ReplayBuffer buf(200);
  for (int e = 0; e < 200; ++e) {
    Trajectory t;
    CostWindow win(spec.window);
    int s = spec.initial_state;
    for (int h = 0; h < spec.horizon; ++h) {
      const auto out = step(spec, h, s, 0, win, env);
      t.states.push_back(s);
      t.actions.push_back(0);
      t.rewards.push_back(out.reward);
      t.accumulated_costs.push_back(out.accumulated_cost);
      if (out.terminated) {
        t.termination_time = h + 1;
        break;
      }
      s = out.next_state;
    }
    buf.push(t);
  }
  EnsembleOptions opts;
  opts.window = 2;
  opts.norm_bound = 5.0;
  Rng r1(3), r2(3);
  const auto a = train_ensemble(buf, 4, 1, 4, opts, r1);
  const auto b = train_ensemble(buf, 4, 1, 4, opts, r2);
  for (std::size_t m = 0; m < a.size(); ++m) {
    CHECK(a.member(m).costs == b.member(m).costs);
    CHECK(a.member(m).bias == b.member(m).bias);
  }
  opts.lambda = 1e9;
  Rng r3(3);
  const auto flat = train_ensemble(buf, 4, 1, 4, opts, r3);
  for (std::size_t m = 0; m < flat.size(); ++m)
    for (double c : flat.member(m).costs) CHECK(std::abs(c) < 1e-6);
}

TEST_CASE("variant parsing") {
  CHECK(PgVariant::parse("plain").kind == PgVariant::Kind::Plain);
  CHECK(PgVariant::parse("rs:0.5").parameter == 0.5);
  CHECK(PgVariant::parse("penalty:2").kind == PgVariant::Kind::CostPenalty);
  CHECK(PgVariant::parse("mean-std").parameter == 1.0);
  CHECK(PgVariant::parse("mean-std:0.5").name() == "mean-std:0.5");
  CHECK(PgVariant::parse("no-dyn-discount").dynamic_discount() == false);
  CHECK(PgVariant::parse("no-optimism").optimism() == OptimismMode::Mean);
  CHECK_FALSE(PgVariant::parse("naive").uses_costs());
  for (const char* bad : {"rs", "rs:x", "rs:-1", "plain:1", "naive:2", "ppo", "rs:1abc"})
    CHECK_THROWS_AS(PgVariant::parse(bad), InvalidArgument);
}

TEST_CASE("zero shaping and zero penalty reproduce plain TermPG exactly") {
  GridworldCoinsParams p;
  p.width = 3;
  p.height = 3;
  p.horizon = 8;
  p.window = 4;
  p.bias = 2.0;
  const auto spec = gridworld_coins(p, 1);
  TermPgConfig cfg;
  cfg.iterations = 4;
  cfg.rollouts = 8;
  cfg.refit_every = 1;
  cfg.seed = 7;
  auto csv = [&](const std::string& v) {
    cfg.variant = PgVariant::parse(v);
    std::ostringstream out;
    const auto trace = run_termpg(spec, cfg);
    trace.write_csv(out);
    for (double x : trace.policy.parameters()) out << x << ',';
    return out.str();
  };
  const auto plain = csv("plain");
  CHECK(csv("rs:0") == plain);
  CHECK(csv("penalty:0") == plain);
  CHECK(csv("plain") == plain);
}

TEST_CASE("TermPG rejects step-dependent costs and bad settings") {
  RandomTermdpParams rp;
  rp.stationary = false;
  const auto spec = random_termdp(rp, 1);
  CHECK_THROWS_AS(run_termpg(spec, TermPgConfig{}), UnsupportedConfiguration);

  const auto ok = line_spec({0.5, 0.5, 0.5}, 1.0, 2);
  TermPgConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(run_termpg(ok, cfg), InvalidArgument);
  cfg = TermPgConfig{};
  cfg.refit_every = 0;
  CHECK_THROWS_AS(run_termpg(ok, cfg), InvalidArgument);
  cfg = TermPgConfig{};
  cfg.gae_lambda = 1.5;
  CHECK_THROWS_AS(run_termpg(ok, cfg), InvalidArgument);
}
