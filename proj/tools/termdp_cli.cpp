// Command-line front end: environment generation, estimation, planning,
// evaluation, oracles, and the two learners.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "termdp/errors.hpp"
#include "termdp/estimator.hpp"
#include "termdp/generators.hpp"
#include "termdp/harness.hpp"
#include "termdp/io.hpp"
#include "termdp/oracle.hpp"
#include "termdp/planner.hpp"

using namespace termdp;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kNumericError = 3, kOracleGuard = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out_dir;
  std::string format = "csv";
};

// Main output goes to stdout, or to <out-dir>/<name>.<ext> when --out-dir is set.
void emit(const Globals& g, const std::string& name, const std::string& text) {
  if (g.out_dir.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(g.out_dir);
  const auto path = fs::path(g.out_dir) / (name + (g.format == "json" ? ".json" : ".csv"));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

// One header line and one row, or a flat JSON object with the same keys.
std::string record(const Globals& g, const std::vector<std::pair<std::string, nlohmann::json>>& kv) {
  if (g.format == "json") {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : kv) j[k] = v;
    return j.dump(2) + "\n";
  }
  std::string head, row;
  for (std::size_t i = 0; i < kv.size(); ++i) {
    head += (i ? "," : "") + kv[i].first;
    const auto& v = kv[i].second;
    row += (i ? "," : "") + (v.is_number_float() ? fmt(v.get<double>()) : v.is_string() ? v.get<std::string>() : v.dump());
  }
  return head + "\n" + row + "\n";
}

double resolution_for(const TerMdpSpec& spec, std::optional<double> requested) {
  if (requested) return *requested;
  if (auto r = grid_resolution(spec)) return *r;
  return 0.1;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string family;
  std::string params = "{}";
};

int cmd_gen(const Globals& g, const GenArgs& a) {
  nlohmann::json params;
  try {
    params = nlohmann::json::parse(a.params);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("--params is not valid JSON: ") + e.what());
  }
  const auto spec = generate(a.family, params, g.seed.value_or(0));
  Globals jg = g;
  jg.format = "json";
  emit(jg, "spec", spec_to_json(spec).dump(2) + "\n");
  return kOk;
}

struct EstimateArgs {
  std::string spec;
  std::string trajectories;
  int episodes = 0;
  double lambda = 0.0;
  std::string bias_mode = "known";
  std::string radius_mode = "theory";
  double delta = 0.1;
  double radius_scale = 1.0;
  double tolerance = 1e-8;
};

int cmd_estimate(const Globals& g, const EstimateArgs& a) {
  const auto spec = load_spec(a.spec);
  std::vector<Trajectory> trajs;
  if (!a.trajectories.empty()) {
    std::ifstream in(a.trajectories);
    if (!in) throw InvalidArgument("cannot open " + a.trajectories);
    trajs = read_trajectories(in);
  } else {
    if (a.episodes < 1) throw InvalidArgument("estimate: give --trajectories or --episodes");
    Rng rng(g.seed.value_or(0));
    const auto policy = uniform_policy(spec.num_actions);
    for (int e = 0; e < a.episodes; ++e) trajs.push_back(rollout(spec, policy, rng));
  }
  const auto layout = DesignLayout::for_spec(spec);
  const auto data = build_dataset(trajs, layout);
  FitOptions fo;
  fo.norm_bound = spec.norm_bound;
  fo.lambda = a.lambda > 0.0 ? a.lambda
                             : default_lambda(spec.num_states, spec.num_actions, spec.horizon, spec.norm_bound);
  fo.mode = a.bias_mode == "estimate" ? BiasMode::Estimate : BiasMode::Known;
  fo.known_bias = spec.bias;
  fo.tolerance = a.tolerance;
  const auto est = fit_mle(data, fo);

  RadiusParams rp;
  rp.kappa = kappa(spec);
  rp.num_states = spec.num_states;
  rp.num_actions = spec.num_actions;
  rp.horizon = spec.horizon;
  rp.norm_bound = spec.norm_bound;
  rp.delta = a.delta;
  rp.episode = static_cast<std::int64_t>(trajs.size());
  rp.scale = a.radius_scale;
  rp.mode = a.radius_mode == "practical" ? RadiusMode::Practical : RadiusMode::Theory;
  const auto radii = confidence_radii(data.counts(), rp);

  const int layers = layout.stationary ? 1 : spec.horizon;
  if (g.format == "json") {
    nlohmann::ordered_json j;
    j["episodes"] = trajs.size();
    j["examples"] = data.num_examples();
    j["lambda"] = est.lambda;
    j["iterations"] = est.iterations;
    j["objective"] = est.objective_value;
    j["bias_hat"] = est.bias_hat ? nlohmann::json(*est.bias_hat) : nlohmann::json(nullptr);
    j["c_hat"] = est.c_hat;
    j["counts"] = data.counts();
    j["radius"] = radii.radius;
    emit(g, "estimate", j.dump(2) + "\n");
    return kOk;
  }
  std::ostringstream out;
  out << "h,s,a,count,c_hat,radius,c_true\n";
  for (int h = 0; h < layers; ++h)
    for (int s = 0; s < spec.num_states; ++s)
      for (int act = 0; act < spec.num_actions; ++act) {
        const int i = layout.coord(h, s, act);
        out << h << ',' << s << ',' << act << ',' << data.counts()[i] << ',' << fmt(est.c_hat[i])
            << ',' << fmt(radii.radius[i]) << ',' << fmt(spec.cost(h, s, act)) << '\n';
      }
  emit(g, "estimate", out.str());
  return kOk;
}

struct PlanArgs {
  std::string spec;
  std::optional<double> resolution;
  std::optional<double> clip;
  bool table = false;
};

int cmd_plan(const Globals& g, const PlanArgs& a) {
  const auto spec = load_spec(a.spec);
  const double dc = resolution_for(spec, a.resolution);
  const auto lattice = CostLattice::for_spec(spec, dc, a.clip);
  const auto t = plan(spec, lattice);
  if (a.table) {
    if (t.windowed()) throw UnsupportedConfiguration("plan --table needs a window of at least H");
    std::ostringstream out;
    out << "h,s,cost_index,cost,value,action\n";
    for (int h = 0; h < spec.horizon; ++h) {
      const auto [lo, hi] = t.reachable(h);
      for (int s = 0; s < spec.num_states; ++s)
        for (auto i = lo; i <= hi; ++i)
          out << h << ',' << s << ',' << i << ',' << fmt(lattice.value(i)) << ','
              << fmt(t.value_at(h, s, i)) << ',' << t.action_at(h, s, i) << '\n';
    }
    emit(g, "plan", out.str());
    return kOk;
  }
  emit(g, "plan",
       record(g, {{"initial_value", t.initial_value()},
                  {"resolution", dc},
                  {"bins", lattice.bins()},
                  {"augmented_states", t.augmented_states()},
                  {"backups", t.backups()},
                  {"bellman_residual", bellman_residual(spec, t)}}));
  return kOk;
}

struct EvalArgs {
  std::string spec;
  std::optional<double> resolution;
  std::string policy = "planned";
  int episodes = 10000;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const auto spec = load_spec(a.spec);
  Rng rng(g.seed.value_or(0));
  double planned = 0.0, exact = 0.0;
  bool has_exact = false;
  ValueEstimate mc;
  if (a.policy == "uniform") {
    std::vector<double> probs(static_cast<std::size_t>(spec.layers()) * spec.num_states * spec.num_actions,
                              1.0 / spec.num_actions);
    exact = evaluate_markov_policy_exact(spec, probs).value;
    has_exact = true;
    mc = evaluate_policy_monte_carlo(spec, uniform_policy(spec.num_actions), a.episodes, rng);
  } else {
    const double dc = resolution_for(spec, a.resolution);
    const auto t = plan(spec, CostLattice::for_spec(spec, dc));
    planned = t.initial_value();
    if (grid_resolution(spec)) {
      exact = evaluate_policy_exact(spec, t).value;
      has_exact = true;
    }
    mc = evaluate_policy_monte_carlo(spec, as_policy(t), a.episodes, rng);
  }
  emit(g, "eval",
       record(g, {{"policy", a.policy},
                  {"planned_value", planned},
                  {"exact_value", has_exact ? nlohmann::json(exact) : nlohmann::json("nan")},
                  {"mc_mean", mc.value},
                  {"mc_std_error", mc.std_error},
                  {"episodes", a.episodes}}));
  return kOk;
}

int cmd_oracle(const Globals& g, const std::string& spec_path) {
  const auto spec = load_spec(spec_path);
  const auto best = brute_force_optimal(spec);
  nlohmann::json planner = "nan", diff = "nan";
  if (auto dc = grid_resolution(spec)) {
    const double v = plan(spec, CostLattice::for_spec(spec, *dc)).initial_value();
    planner = v;
    diff = std::abs(v - best.value);
  }
  emit(g, "oracle", record(g, {{"oracle_value", best.value}, {"planner_value", planner}, {"abs_diff", diff}}));
  return kOk;
}

// Learner runs go through the experiment harness; flags override the file.
struct LearnArgs {
  std::string config;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::string spec;
  std::string family;
  std::string params;
  std::optional<std::uint64_t> env_seed;
  std::optional<int> budget;  // episodes or iterations
  std::vector<std::string> set;  // key=value overrides for [algorithm]
  bool timing = false;
};

int cmd_learn(const Globals& g, const LearnArgs& a, const std::string& algorithm) {
  nlohmann::json sections = a.config.empty() ? nlohmann::json::object() : load_config(a.config);
  auto& alg = sections["algorithm"];
  if (alg.contains("name") && alg["name"] != algorithm)
    throw InvalidArgument("config names algorithm " + alg["name"].dump() + ", not " + algorithm);
  alg["name"] = algorithm;
  if (!a.variants.empty()) alg["variants"] = a.variants;
  if (!a.seeds.empty()) alg["seeds"] = a.seeds;
  else if (g.seed) alg["seeds"] = std::vector<std::uint64_t>{*g.seed};
  alg["jobs"] = g.jobs;
  if (a.budget) alg[algorithm == "termcrl" ? "episodes" : "iterations"] = *a.budget;
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got " + kv);
    std::istringstream line(kv.substr(0, eq) + " = " + kv.substr(eq + 1));
    for (const auto& [k, v] : parse_config(line)[""].items()) alg[k] = v;
  }

  auto& env = sections["env"];
  if (!a.spec.empty() || !a.family.empty()) env = nlohmann::json::object();
  if (!a.spec.empty()) env["spec"] = a.spec;
  if (!a.family.empty()) {
    env["family"] = a.family;
    if (!a.params.empty()) {
      nlohmann::json params;
      try {
        params = nlohmann::json::parse(a.params);
      } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("--params is not valid JSON: ") + e.what());
      }
      for (const auto& [k, v] : params.items()) env[k] = v;
    }
  }
  if (a.env_seed) env["seed"] = *a.env_seed;

  auto& out = sections["output"];
  if (!g.out_dir.empty()) out["dir"] = g.out_dir;
  if (a.timing) out["timing"] = true;

  const auto cfg = ExperimentConfig::from_json(sections);
  const auto result = run_experiment(cfg);

  if (g.format == "json") {
    std::ifstream mf(result.manifest_path);
    std::cout << mf.rdbuf();
  } else {
    std::cout << "variant,seed,ok,csv\n";
    for (const auto& r : result.runs)
      std::cout << r.variant << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ',' << r.csv_path << '\n';
  }
  for (const auto& r : result.runs)
    if (!r.ok) std::cerr << "error: " << r.variant << " seed " << r.seed << ": " << r.error << '\n';
  return result.all_ok() ? kOk : kNumericError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Termination MDP toolkit: generation, estimation, planning and learning"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--jobs", g.jobs, "Worker threads for multi-seed runs")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Directory for output files (default: stdout / current dir)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate an environment spec as JSON");
  c_gen->add_option("--family", gen.family, "random-termdp | chain | gridworld-coins")->required();
  c_gen->add_option("--params", gen.params, "Generator parameters as a JSON object");

  EstimateArgs est;
  auto* c_est = app.add_subcommand("estimate", "Fit termination costs by maximum likelihood");
  c_est->add_option("--spec", est.spec, "Spec JSON file")->required()->check(CLI::ExistingFile);
  auto* traj_opt = c_est->add_option("--trajectories", est.trajectories, "JSON-lines trajectories")
                       ->check(CLI::ExistingFile);
  c_est->add_option("--episodes", est.episodes, "Simulate this many uniform-policy episodes")
      ->excludes(traj_opt);
  c_est->add_option("--lambda", est.lambda, "Ridge weight (0 picks the default)");
  c_est->add_option("--bias-mode", est.bias_mode)->check(CLI::IsMember({"known", "estimate"}));
  c_est->add_option("--radius-mode", est.radius_mode)->check(CLI::IsMember({"theory", "practical"}));
  c_est->add_option("--delta", est.delta)->check(CLI::Range(1e-12, 1.0 - 1e-12));
  c_est->add_option("--radius-scale", est.radius_scale)->check(CLI::NonNegativeNumber);
  c_est->add_option("--tolerance", est.tolerance)->check(CLI::PositiveNumber);

  PlanArgs pl;
  auto* c_plan = app.add_subcommand("plan", "Solve the augmented Bellman equations");
  c_plan->add_option("--spec", pl.spec)->required()->check(CLI::ExistingFile);
  c_plan->add_option("--resolution", pl.resolution, "Cost lattice step (default: the spec's grid)")
      ->check(CLI::PositiveNumber);
  c_plan->add_option("--clip", pl.clip, "Clip accumulated costs at this threshold")
      ->check(CLI::NonNegativeNumber);
  c_plan->add_flag("--table", pl.table, "Dump the value table instead of a summary");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate the planned or uniform policy");
  c_eval->add_option("--spec", ev.spec)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--resolution", ev.resolution)->check(CLI::PositiveNumber);
  c_eval->add_option("--policy", ev.policy)->check(CLI::IsMember({"planned", "uniform"}));
  c_eval->add_option("--episodes", ev.episodes, "Monte Carlo episodes")->check(CLI::PositiveNumber);

  std::string oracle_spec;
  auto* c_oracle = app.add_subcommand("oracle", "Brute-force optimal value over history policies");
  c_oracle->add_option("--spec", oracle_spec)->required()->check(CLI::ExistingFile);

  LearnArgs crl, pg;
  auto add_learn = [&](const char* name, const char* help, LearnArgs& a, const char* budget) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--config", a.config, "Experiment file with [algorithm], [env], [output]")
        ->check(CLI::ExistingFile);
    c->add_option("--variant", a.variants, "Variant(s); repeatable");
    c->add_option("--seeds", a.seeds, "Seed list (overrides --seed)");
    c->add_option("--spec", a.spec, "Spec JSON file")->check(CLI::ExistingFile);
    c->add_option("--family", a.family, "Generator family");
    c->add_option("--params", a.params, "Generator parameters as a JSON object");
    c->add_option("--env-seed", a.env_seed, "Generator seed");
    c->add_option(budget, a.budget, "Training budget")->check(CLI::PositiveNumber);
    c->add_option("--set", a.set, "Hyperparameter override key=value; repeatable");
    c->add_flag("--timing", a.timing, "Record wall-clock time per row");
    return c;
  };
  auto* c_crl = add_learn("termcrl", "Run the optimistic TermCRL learner", crl, "--episodes");
  auto* c_pg = add_learn("termpg", "Run tabular TermPG and its baselines", pg, "--iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (c_gen->parsed()) return cmd_gen(g, gen);
    if (c_est->parsed()) return cmd_estimate(g, est);
    if (c_plan->parsed()) return cmd_plan(g, pl);
    if (c_eval->parsed()) return cmd_eval(g, ev);
    if (c_oracle->parsed()) return cmd_oracle(g, oracle_spec);
    if (c_crl->parsed()) return cmd_learn(g, crl, "termcrl");
    if (c_pg->parsed()) return cmd_learn(g, pg, "termpg");
  } catch (const InstanceTooLarge& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOracleGuard;
  } catch (const ConvergenceFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericError;
  } catch (const NumericFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericError;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const UnsupportedConfiguration& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
