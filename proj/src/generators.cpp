#include "termdp/generators.hpp"

#include <algorithm>
#include <cmath>

#include "termdp/errors.hpp"
#include "termdp/rng.hpp"

namespace termdp {

namespace {

double on_grid(double x, double res) { return static_cast<double>(std::llround(x / res)) * res; }

// Uniform grid point in [lo, hi].
double grid_draw(Rng& rng, double lo, double hi, double res) {
  const auto a = static_cast<std::int64_t>(std::ceil(lo / res - 1e-9));
  const auto b = static_cast<std::int64_t>(std::floor(hi / res + 1e-9));
  if (b < a) throw InvalidArgument("generator: empty grid range");
  return static_cast<double>(a + rng.uniform_int(static_cast<int>(b - a + 1))) * res;
}

void check_resolution(double res) {
  if (!(res > 0.0) || !std::isfinite(res)) throw InvalidArgument("generator: resolution must be positive");
}

int resolved_window(int window, int horizon) {
  if (window < 0 || window > horizon) throw InvalidArgument("generator: window must lie in [0, H]");
  return window == 0 ? horizon : window;
}

// Shrinks costs toward zero until the L2 norm fits, staying on the grid.
void fit_norm(TerMdpSpec& spec, double bound, double res) {
  const double norm = spec.cost_norm();
  if (bound <= 0.0) {
    spec.norm_bound = std::max(norm, 1e-12);
    return;
  }
  if (norm > bound) {
    const double f = bound / norm;
    for (auto& c : spec.costs) c = std::trunc(c * f / res + 1e-9) * res;
  }
  spec.norm_bound = bound;
}

}  // namespace

TerMdpSpec random_termdp(const RandomTermdpParams& p, std::uint64_t seed) {
  check_resolution(p.resolution);
  if (p.num_states < 1 || p.num_actions < 1 || p.horizon < 1)
    throw InvalidArgument("random-termdp: S, A, H must be positive");
  if (p.cost_max < 0.0) throw InvalidArgument("random-termdp: cost_max must be non-negative");
  if (p.support < 0 || p.support > p.num_states)
    throw InvalidArgument("random-termdp: support must lie in [0, S]");
  Rng rng(seed);
  auto spec = TerMdpSpec::zeros(p.num_states, p.num_actions, p.horizon, p.stationary);
  spec.bias = p.bias;
  spec.window = resolved_window(p.window, p.horizon);
  spec.reward_noise = p.reward_noise;
  const int support = p.support == 0 ? p.num_states : p.support;

  for (std::size_t i = 0; i < spec.table_size(); ++i) {
    spec.rewards[i] = on_grid(rng.uniform(), 0.01);
    spec.costs[i] = grid_draw(rng, p.signed_costs ? -p.cost_max : 0.0, p.cost_max, p.resolution);
    // Random support, then Dirichlet(1)-style weights via exponentials.
    std::vector<int> order(p.num_states);
    for (int s = 0; s < p.num_states; ++s) order[s] = s;
    for (int s = p.num_states - 1; s > 0; --s) std::swap(order[s], order[rng.uniform_int(s + 1)]);
    double* row = spec.transitions.data() + i * p.num_states;
    std::fill(row, row + p.num_states, 0.0);
    double total = 0.0;
    for (int j = 0; j < support; ++j) {
      const double w = -std::log(1.0 - rng.uniform());
      row[order[j]] = w;
      total += w;
    }
    for (int s = 0; s < p.num_states; ++s) row[s] /= total;
  }
  fit_norm(spec, p.norm_bound, p.resolution);
  spec.validate();
  return spec;
}

TerMdpSpec chain(const ChainParams& p, std::uint64_t seed) {
  check_resolution(p.resolution);
  if (p.num_states < 2 || p.horizon < 1) throw InvalidArgument("chain: need S >= 2 and H >= 1");
  if (p.advance < 0.0 || p.advance > 1.0) throw InvalidArgument("chain: advance must be in [0, 1]");
  Rng rng(seed);
  auto spec = TerMdpSpec::zeros(p.num_states, 2, p.horizon, true);
  spec.bias = p.bias;
  spec.window = resolved_window(p.window, p.horizon);
  const int S = p.num_states;
  for (int s = 0; s < S; ++s) {
    const double j_safe = p.jitter > 0.0 ? grid_draw(rng, -p.jitter, p.jitter, 0.05) : 0.0;
    const double j_risky = p.jitter > 0.0 ? grid_draw(rng, -p.jitter, p.jitter, 0.05) : 0.0;
    const double j_cost = p.jitter > 0.0 ? grid_draw(rng, -p.jitter, p.jitter, p.resolution) : 0.0;
    spec.rewards[spec.index(0, s, 0)] = std::clamp(p.safe_reward + j_safe, 0.0, 1.0);
    spec.rewards[spec.index(0, s, 1)] = std::clamp(p.risky_reward + j_risky, 0.0, 1.0);
    spec.costs[spec.index(0, s, 0)] = 0.0;
    spec.costs[spec.index(0, s, 1)] = std::max(0.0, on_grid(p.risky_cost + j_cost, p.resolution));
    for (int a = 0; a < 2; ++a) {
      auto row = spec.transition_row(0, s, a);
      std::fill(row.begin(), row.end(), 0.0);
      const int next = std::min(s + 1, S - 1);
      row[next] += p.advance;
      row[s] += 1.0 - p.advance;
    }
  }
  fit_norm(spec, 0.0, p.resolution);
  spec.validate();
  return spec;
}

TerMdpSpec gridworld_coins(const GridworldCoinsParams& p, std::uint64_t seed) {
  check_resolution(p.resolution);
  if (p.width < 1 || p.height < 1 || p.horizon < 1)
    throw InvalidArgument("gridworld-coins: width, height, H must be positive");
  if (p.safe_lane >= p.width) throw InvalidArgument("gridworld-coins: safe lane out of range");
  for (double d : {p.coin_density, p.overtake_density})
    if (d < 0.0 || d > 1.0) throw InvalidArgument("gridworld-coins: densities must be in [0, 1]");
  for (double r : {p.overtake_reward, p.base_reward})
    if (r < 0.0 || r > 1.0) throw InvalidArgument("gridworld-coins: rewards must be in [0, 1]");
  if (p.coin_cost < 0.0) throw InvalidArgument("gridworld-coins: coin cost must be non-negative");

  Rng rng(seed);
  const int W = p.width, R = p.height, S = W * R;
  const int safe = p.safe_lane >= 0 ? p.safe_lane : rng.uniform_int(W);
  std::vector<bool> coin(S, false);
  std::vector<bool> overtake(S, false);
  for (int row = 0; row < R; ++row)
    for (int col = 0; col < W; ++col) {
      const int cell = row * W + col;
      const bool is_coin = rng.uniform() < p.coin_density;
      const bool is_overtake = rng.uniform() < p.overtake_density;
      if (p.coupled) {
        // Coins sit on overtakes; the safe lane is plain road.
        overtake[cell] = col != safe && is_overtake;
        coin[cell] = overtake[cell] && is_coin;
      } else {
        coin[cell] = col != safe && is_coin;
        overtake[cell] = is_overtake;
      }
    }

  auto spec = TerMdpSpec::zeros(S, 3, p.horizon, true);
  spec.bias = p.bias;
  spec.window = resolved_window(p.window, p.horizon);
  spec.initial_state = safe;  // row 0
  const double coin_cost = on_grid(p.coin_cost, p.resolution);
  for (int row = 0; row < R; ++row)
    for (int col = 0; col < W; ++col) {
      const int s = row * W + col;
      for (int a = 0; a < 3; ++a) {
        // The row is the stretch of road ahead; the action picks the lane to
        // drive through it and collects whatever that cell holds.
        const int lane = std::clamp(col + a - 1, 0, W - 1);
        const int cell = row * W + lane;
        spec.rewards[spec.index(0, s, a)] = overtake[cell] ? p.overtake_reward : p.base_reward;
        spec.costs[spec.index(0, s, a)] = coin[cell] ? coin_cost : 0.0;
        auto tr = spec.transition_row(0, s, a);
        std::fill(tr.begin(), tr.end(), 0.0);
        if (p.random_rows) {
          for (int next = 0; next < R; ++next) tr[next * W + lane] = 1.0 / R;
        } else {
          tr[((row + 1) % R) * W + lane] = 1.0;
        }
      }
    }
  fit_norm(spec, 0.0, p.resolution);
  spec.validate();
  return spec;
}

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument(std::string("generator: bad value for ") + key);
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
      throw InvalidArgument("generator: unknown parameter " + it.key());
  }
}

RandomTermdpParams random_params(const nlohmann::json& j) {
  reject_unknown(j, {"S", "A", "H", "stationary", "resolution", "cost_max", "signed_costs",
                     "bias", "window", "norm_bound_L", "support", "reward_noise"});
  RandomTermdpParams p;
  read(j, "S", p.num_states);
  read(j, "A", p.num_actions);
  read(j, "H", p.horizon);
  read(j, "stationary", p.stationary);
  read(j, "resolution", p.resolution);
  read(j, "cost_max", p.cost_max);
  read(j, "signed_costs", p.signed_costs);
  read(j, "bias", p.bias);
  read(j, "window", p.window);
  read(j, "norm_bound_L", p.norm_bound);
  read(j, "support", p.support);
  std::string noise = "deterministic";
  read(j, "reward_noise", noise);
  if (noise == "bernoulli") p.reward_noise = RewardNoise::Bernoulli;
  else if (noise != "deterministic") throw InvalidArgument("generator: unknown reward_noise " + noise);
  return p;
}

ChainParams chain_params(const nlohmann::json& j) {
  reject_unknown(j, {"S", "H", "resolution", "bias", "safe_reward", "risky_reward", "risky_cost",
                     "jitter", "advance", "window"});
  ChainParams p;
  read(j, "S", p.num_states);
  read(j, "H", p.horizon);
  read(j, "resolution", p.resolution);
  read(j, "bias", p.bias);
  read(j, "safe_reward", p.safe_reward);
  read(j, "risky_reward", p.risky_reward);
  read(j, "risky_cost", p.risky_cost);
  read(j, "jitter", p.jitter);
  read(j, "advance", p.advance);
  read(j, "window", p.window);
  return p;
}

GridworldCoinsParams grid_params(const nlohmann::json& j) {
  reject_unknown(j, {"width", "height", "H", "window", "bias", "coin_cost", "coin_density",
                     "overtake_reward", "overtake_density", "base_reward", "resolution",
                     "safe_lane", "random_rows", "coupled"});
  GridworldCoinsParams p;
  read(j, "width", p.width);
  read(j, "height", p.height);
  read(j, "H", p.horizon);
  read(j, "window", p.window);
  read(j, "bias", p.bias);
  read(j, "coin_cost", p.coin_cost);
  read(j, "coin_density", p.coin_density);
  read(j, "overtake_reward", p.overtake_reward);
  read(j, "overtake_density", p.overtake_density);
  read(j, "base_reward", p.base_reward);
  read(j, "resolution", p.resolution);
  read(j, "safe_lane", p.safe_lane);
  read(j, "random_rows", p.random_rows);
  read(j, "coupled", p.coupled);
  return p;
}

}  // namespace

TerMdpSpec generate(const std::string& family, const nlohmann::json& params, std::uint64_t seed) {
  const auto& j = params.is_null() ? nlohmann::json::object() : params;
  if (!j.is_object()) throw InvalidArgument("generator: parameters must be an object");
  if (family == "random-termdp") return random_termdp(random_params(j), seed);
  if (family == "chain") return chain(chain_params(j), seed);
  if (family == "gridworld-coins") return gridworld_coins(grid_params(j), seed);
  throw InvalidArgument("generator: unknown family " + family);
}

double generator_resolution(const std::string& family, const nlohmann::json& params) {
  const auto& j = params.is_null() ? nlohmann::json::object() : params;
  if (family == "random-termdp") return random_params(j).resolution;
  if (family == "chain") return chain_params(j).resolution;
  if (family == "gridworld-coins") return grid_params(j).resolution;
  throw InvalidArgument("generator: unknown family " + family);
}

}  // namespace termdp
