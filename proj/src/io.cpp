#include "termdp/io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "termdp/errors.hpp"

namespace termdp {

using nlohmann::json;

namespace {

json table_to_json(const TerMdpSpec& spec, const std::vector<double>& table) {
  json layers = json::array();
  for (int l = 0; l < spec.layers(); ++l) {
    json rows = json::array();
    for (int s = 0; s < spec.num_states; ++s) {
      json row = json::array();
      for (int a = 0; a < spec.num_actions; ++a)
        row.push_back(table[(static_cast<std::size_t>(l) * spec.num_states + s) * spec.num_actions + a]);
      rows.push_back(std::move(row));
    }
    layers.push_back(std::move(rows));
  }
  return spec.stationary ? layers[0] : layers;
}

json transitions_to_json(const TerMdpSpec& spec) {
  json layers = json::array();
  for (int l = 0; l < spec.layers(); ++l) {
    json rows = json::array();
    for (int s = 0; s < spec.num_states; ++s) {
      json per_action = json::array();
      for (int a = 0; a < spec.num_actions; ++a) {
        const std::size_t base =
            ((static_cast<std::size_t>(l) * spec.num_states + s) * spec.num_actions + a) *
            spec.num_states;
        per_action.push_back(std::vector<double>(spec.transitions.begin() + base,
                                                 spec.transitions.begin() + base + spec.num_states));
      }
      rows.push_back(std::move(per_action));
    }
    layers.push_back(std::move(rows));
  }
  return spec.stationary ? layers[0] : layers;
}

void check_size(const json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n)
    throw InvalidArgument(std::string("spec json: wrong shape for ") + what);
}

std::vector<double> table_from_json(const json& j, const TerMdpSpec& spec, const char* what) {
  std::vector<double> out;
  out.reserve(spec.table_size());
  const json layers = spec.stationary ? json::array({j}) : j;
  check_size(layers, spec.layers(), what);
  for (const auto& rows : layers) {
    check_size(rows, spec.num_states, what);
    for (const auto& row : rows) {
      check_size(row, spec.num_actions, what);
      for (const auto& v : row) out.push_back(v.get<double>());
    }
  }
  return out;
}

std::vector<double> transitions_from_json(const json& j, const TerMdpSpec& spec) {
  std::vector<double> out;
  out.reserve(spec.table_size() * spec.num_states);
  const json layers = spec.stationary ? json::array({j}) : j;
  check_size(layers, spec.layers(), "transitions");
  for (const auto& rows : layers) {
    check_size(rows, spec.num_states, "transitions");
    for (const auto& per_action : rows) {
      check_size(per_action, spec.num_actions, "transitions");
      for (const auto& dist : per_action) {
        check_size(dist, spec.num_states, "transitions");
        for (const auto& p : dist) out.push_back(p.get<double>());
      }
    }
  }
  return out;
}

}  // namespace

json spec_to_json(const TerMdpSpec& spec) {
  json j;
  j["S"] = spec.num_states;
  j["A"] = spec.num_actions;
  j["H"] = spec.horizon;
  j["stationary"] = spec.stationary;
  j["transitions"] = transitions_to_json(spec);
  j["rewards"] = table_to_json(spec, spec.rewards);
  j["costs"] = table_to_json(spec, spec.costs);
  j["bias"] = spec.bias;
  j["window"] = spec.window;
  j["norm_bound_L"] = spec.norm_bound;
  j["reward_noise"] = spec.reward_noise == RewardNoise::Bernoulli ? "bernoulli" : "deterministic";
  j["initial_state"] = spec.initial_state;
  return j;
}

TerMdpSpec spec_from_json(const json& j) {
  try {
    TerMdpSpec spec = TerMdpSpec::zeros(j.at("S").get<int>(), j.at("A").get<int>(),
                                        j.at("H").get<int>(), j.value("stationary", false));
    spec.transitions = transitions_from_json(j.at("transitions"), spec);
    spec.rewards = table_from_json(j.at("rewards"), spec, "rewards");
    spec.costs = table_from_json(j.at("costs"), spec, "costs");
    spec.bias = j.at("bias").get<double>();
    spec.window = j.value("window", spec.horizon);
    spec.norm_bound = j.contains("norm_bound_L") ? j.at("norm_bound_L").get<double>()
                                                 : spec.cost_norm();
    const std::string noise = j.value("reward_noise", std::string("deterministic"));
    if (noise == "bernoulli") {
      spec.reward_noise = RewardNoise::Bernoulli;
    } else if (noise != "deterministic") {
      throw InvalidArgument("spec json: unknown reward_noise '" + noise + "'");
    }
    spec.initial_state = j.value("initial_state", 0);
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("spec json: ") + e.what());
  }
}

TerMdpSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open spec file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("spec file " + path + ": " + e.what());
  }
  return spec_from_json(j);
}

void save_spec(const TerMdpSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write spec file: " + path);
  out << spec_to_json(spec).dump(2) << "\n";
}

json trajectory_to_json(const Trajectory& traj) {
  json j;
  j["states"] = traj.states;
  j["actions"] = traj.actions;
  j["rewards"] = traj.rewards;
  j["accumulated_costs"] = traj.accumulated_costs;
  j["termination_time"] = traj.termination_time ? json(*traj.termination_time) : json(nullptr);
  return j;
}

Trajectory trajectory_from_json(const json& j) {
  try {
    Trajectory t;
    t.states = j.at("states").get<std::vector<int>>();
    t.actions = j.at("actions").get<std::vector<int>>();
    t.rewards = j.at("rewards").get<std::vector<double>>();
    if (j.contains("accumulated_costs"))
      t.accumulated_costs = j.at("accumulated_costs").get<std::vector<double>>();
    if (j.contains("termination_time") && !j.at("termination_time").is_null())
      t.termination_time = j.at("termination_time").get<int>();
    if (t.actions.size() != t.states.size() || t.rewards.size() != t.states.size())
      throw InvalidArgument("trajectory json: inconsistent lengths");
    if (t.termination_time && *t.termination_time != static_cast<int>(t.states.size()))
      throw InvalidArgument("trajectory json: termination_time must equal the length");
    return t;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("trajectory json: ") + e.what());
  }
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trajectory_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("trajectory log: ") + e.what());
    }
  }
  return out;
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajs) {
  for (const auto& t : trajs) out << trajectory_to_json(t).dump() << "\n";
}

}  // namespace termdp
