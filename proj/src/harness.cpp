#include "termdp/harness.hpp"

#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <thread>

#include "termdp/errors.hpp"
#include "termdp/generators.hpp"
#include "termdp/io.hpp"

#ifndef TERMDP_VERSION
#define TERMDP_VERSION "unknown"
#endif

namespace termdp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config text

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void config_error(int line, const std::string& what) {
  throw InvalidArgument("config line " + std::to_string(line) + ": " + what);
}

// Drops a trailing comment that is not inside a string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

nlohmann::json parse_scalar(const std::string& text, int line) {
  if (text.empty()) config_error(line, "missing value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') config_error(line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) {
        const char c = text[++i];
        out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
      } else {
        out += text[i];
      }
    }
    return out;
  }
  if (text == "true") return true;
  if (text == "false") return false;
  std::string digits;
  for (char c : text)
    if (c != '_') digits += c;
  const bool integral = digits.find_first_of(".eEn") == std::string::npos;
  try {
    std::size_t used = 0;
    if (integral) {
      const long long v = std::stoll(digits, &used);
      if (used == digits.size()) return v;
    } else {
      const double v = std::stod(digits, &used);
      if (used == digits.size() && std::isfinite(v)) return v;
    }
  } catch (const std::exception&) {
  }
  config_error(line, "cannot parse value '" + text + "'");
}

nlohmann::json parse_value(const std::string& text, int line) {
  if (text.empty() || text.front() != '[') return parse_scalar(text, line);
  if (text.back() != ']') config_error(line, "unterminated array");
  nlohmann::json arr = nlohmann::json::array();
  std::string item;
  bool quoted = false;
  const std::string body = text.substr(1, text.size() - 2);
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || (body[i] == ',' && !quoted)) {
      const auto t = trim(item);
      if (!t.empty()) arr.push_back(parse_scalar(t, line));
      else if (i != body.size()) config_error(line, "empty array element");
      item.clear();
      continue;
    }
    if (body[i] == '"' && (i == 0 || body[i - 1] != '\\')) quoted = !quoted;
    if (body[i] == '[' && !quoted) config_error(line, "nested arrays are not supported");
    item += body[i];
  }
  return arr;
}

}  // namespace

nlohmann::json parse_config(std::istream& in) {
  nlohmann::json out = nlohmann::json::object();
  std::string section;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto text = trim(strip_comment(raw));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') config_error(line, "malformed section header");
      section = trim(text.substr(1, text.size() - 2));
      if (section.empty()) config_error(line, "empty section name");
      if (out.contains(section)) config_error(line, "section [" + section + "] repeats");
      out[section] = nlohmann::json::object();
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) config_error(line, "expected key = value");
    const auto key = trim(text.substr(0, eq));
    if (key.empty()) config_error(line, "empty key");
    auto& table = out[section];
    if (table.contains(key)) config_error(line, "key '" + key + "' repeats");
    table[key] = parse_value(trim(text.substr(eq + 1)), line);
  }
  return out;
}

nlohmann::json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file " + path);
  return parse_config(in);
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* code_version() { return TERMDP_VERSION; }

// ---------------------------------------------------------------------------
// Experiment configuration

VariantSpec VariantSpec::parse(const std::string& text) {
  VariantSpec v;
  const auto at = text.find('@');
  v.name = text.substr(0, at);
  if (at != std::string::npos) {
    const auto factor = text.substr(at + 1);
    if (factor.size() < 2 || factor[0] != 'x')
      throw InvalidArgument("variant " + text + ": window factor must look like @x0.5");
    try {
      std::size_t used = 0;
      v.window_factor = std::stod(factor.substr(1), &used);
      if (used != factor.size() - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InvalidArgument("variant " + text + ": bad window factor");
    }
    if (!(v.window_factor > 0.0) || !std::isfinite(v.window_factor))
      throw InvalidArgument("variant " + text + ": window factor must be positive");
  }
  if (v.name.empty()) throw InvalidArgument("variant: empty name");
  return v;
}

std::string VariantSpec::label() const {
  if (window_factor == 1.0) return name;
  std::ostringstream out;
  out << name << "@x" << window_factor;
  return out.str();
}

namespace {

class KeyReader {
 public:
  KeyReader(const nlohmann::json& table, std::string where) : table_(table), where_(std::move(where)) {
    if (!table_.is_object()) throw InvalidArgument(where_ + ": expected a table");
  }

  template <class T>
  bool read(const std::string& key, T& out) {
    used_.insert(key);
    if (!table_.contains(key)) return false;
    try {
      out = table_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw InvalidArgument(where_ + "." + key + ": wrong type");
    }
    return true;
  }

  void mark(const std::string& key) { used_.insert(key); }

  nlohmann::json unused() const {
    nlohmann::json rest = nlohmann::json::object();
    for (const auto& [k, v] : table_.items())
      if (!used_.count(k)) rest[k] = v;
    return rest;
  }

  void reject_unused() const {
    for (const auto& [k, v] : table_.items())
      if (!used_.count(k)) throw InvalidArgument(where_ + ": unknown key '" + k + "'");
  }

 private:
  const nlohmann::json& table_;
  std::string where_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

void read_termcrl(KeyReader& r, TermCrlConfig& c) {
  r.read("episodes", c.episodes);
  r.read("delta", c.delta);
  r.read("lambda", c.lambda);
  r.read("resolution", c.resolution);
  r.read("bonus_scale", c.bonus_scale);
  r.read("refit_every_episode_up_to", c.refit_every_episode_up_to);
  r.read("mle_tolerance", c.mle_tolerance);
  std::string mode;
  if (r.read("radius_mode", mode)) {
    require(mode == "theory" || mode == "practical", "algorithm.radius_mode: theory or practical");
    c.radius_mode = mode == "theory" ? RadiusMode::Theory : RadiusMode::Practical;
  }
  if (r.read("bias_mode", mode)) {
    require(mode == "known" || mode == "estimate", "algorithm.bias_mode: known or estimate");
    c.bias_mode = mode == "known" ? BiasMode::Known : BiasMode::Estimate;
  }
  require(c.episodes >= 1, "algorithm.episodes must be positive");
  require(c.delta > 0.0 && c.delta < 1.0, "algorithm.delta must lie in (0, 1)");
  require(c.lambda >= 0.0, "algorithm.lambda must be non-negative");
  require(c.resolution > 0.0, "algorithm.resolution must be positive");
  require(c.bonus_scale >= 0.0, "algorithm.bonus_scale must be non-negative");
  require(c.mle_tolerance > 0.0, "algorithm.mle_tolerance must be positive");
}

nlohmann::json termcrl_json(const TermCrlConfig& c) {
  return {{"episodes", c.episodes},
          {"delta", c.delta},
          {"lambda", c.lambda},
          {"resolution", c.resolution},
          {"bonus_scale", c.bonus_scale},
          {"radius_mode", c.radius_mode == RadiusMode::Theory ? "theory" : "practical"},
          {"bias_mode", c.bias_mode == BiasMode::Known ? "known" : "estimate"},
          {"refit_every_episode_up_to", c.refit_every_episode_up_to},
          {"mle_tolerance", c.mle_tolerance}};
}

void read_termpg(KeyReader& r, TermPgConfig& c) {
  r.read("iterations", c.iterations);
  r.read("rollouts", c.rollouts);
  r.read("learning_rate", c.learning_rate);
  r.read("buffer", c.buffer);
  r.read("members", c.members);
  r.read("window", c.window);
  r.read("bucket_width", c.bucket_width);
  r.read("buckets", c.buckets);
  r.read("gae_lambda", c.gae_lambda);
  r.read("constant_discount", c.constant_discount);
  r.read("value_step", c.value_step);
  r.read("mle_lambda", c.mle_lambda);
  r.read("bias_lambda", c.bias_lambda);
  r.read("mle_tolerance", c.mle_tolerance);
  r.read("mle_max_iterations", c.mle_max_iterations);
  r.read("refit_every", c.refit_every);
  require(c.iterations >= 1 && c.rollouts >= 1, "algorithm.iterations and rollouts must be positive");
  require(c.learning_rate > 0.0, "algorithm.learning_rate must be positive");
  require(c.buffer >= 1, "algorithm.buffer must be positive");
  require(c.members >= 1, "algorithm.members must be positive");
  require(c.window >= 0, "algorithm.window must be non-negative");
  require(c.bucket_width > 0.0 && c.buckets >= 1, "algorithm.bucket_width and buckets must be positive");
  require(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0, "algorithm.gae_lambda must lie in [0, 1]");
  require(c.constant_discount > 0.0 && c.constant_discount <= 1.0,
          "algorithm.constant_discount must lie in (0, 1]");
  require(c.value_step > 0.0 && c.value_step <= 1.0, "algorithm.value_step must lie in (0, 1]");
  require(c.mle_lambda > 0.0, "algorithm.mle_lambda must be positive");
  require(c.bias_lambda >= 0.0, "algorithm.bias_lambda must be non-negative");
  require(c.mle_tolerance > 0.0 && c.mle_max_iterations >= 1, "algorithm.mle settings must be positive");
  require(c.refit_every >= 1, "algorithm.refit_every must be positive");
}

nlohmann::json termpg_json(const TermPgConfig& c) {
  return {{"iterations", c.iterations},       {"rollouts", c.rollouts},
          {"learning_rate", c.learning_rate}, {"buffer", c.buffer},
          {"members", c.members},             {"window", c.window},
          {"bucket_width", c.bucket_width},   {"buckets", c.buckets},
          {"gae_lambda", c.gae_lambda},       {"constant_discount", c.constant_discount},
          {"value_step", c.value_step},       {"mle_lambda", c.mle_lambda},
          {"bias_lambda", c.bias_lambda},     {"mle_tolerance", c.mle_tolerance},
          {"mle_max_iterations", c.mle_max_iterations}, {"refit_every", c.refit_every}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& sections) {
  require(sections.is_object(), "config: expected sections");
  for (const auto& [name, v] : sections.items())
    require(name == "algorithm" || name == "env" || name == "output",
            "config: unknown section [" + name + "]");
  require(sections.contains("algorithm"), "config: missing [algorithm]");
  require(sections.contains("env"), "config: missing [env]");

  ExperimentConfig cfg;
  KeyReader alg(sections.at("algorithm"), "algorithm");
  std::string name;
  require(alg.read("name", name), "algorithm.name is required");
  require(name == "termcrl" || name == "termpg", "algorithm.name: termcrl or termpg");
  cfg.algorithm = name == "termcrl" ? Algorithm::TermCrl : Algorithm::TermPg;

  std::vector<std::string> variant_names;
  const auto& alg_table = sections.at("algorithm");
  if (alg_table.contains("variants") && alg_table.at("variants").is_string())
    variant_names.push_back(alg_table.at("variants").get<std::string>());
  else
    alg.read("variants", variant_names);
  alg.mark("variants");
  if (variant_names.empty()) variant_names.push_back(name == "termcrl" ? "optimistic" : "plain");
  std::set<std::string> labels;
  for (const auto& text : variant_names) {
    auto v = VariantSpec::parse(text);
    if (cfg.algorithm == Algorithm::TermCrl) {
      require(v.name == "optimistic" || v.name == "naive",
              "algorithm.variants: termcrl accepts optimistic or naive");
      require(v.window_factor == 1.0, "algorithm.variants: termcrl takes no window factor");
    } else {
      PgVariant::parse(v.name);
    }
    require(labels.insert(v.label()).second, "algorithm.variants: duplicate " + v.label());
    cfg.variants.push_back(v);
  }

  std::vector<long long> seeds;
  if (alg.read("seeds", seeds)) {
    require(!seeds.empty(), "algorithm.seeds must not be empty");
    std::set<long long> distinct(seeds.begin(), seeds.end());
    require(distinct.size() == seeds.size(), "algorithm.seeds must be distinct");
    cfg.seeds.clear();
    for (long long s : seeds) {
      require(s >= 0, "algorithm.seeds must be non-negative");
      cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  alg.read("jobs", cfg.jobs);
  require(cfg.jobs >= 1, "algorithm.jobs must be positive");
  if (cfg.algorithm == Algorithm::TermCrl) read_termcrl(alg, cfg.termcrl);
  else read_termpg(alg, cfg.termpg);
  alg.reject_unused();

  KeyReader env(sections.at("env"), "env");
  env.read("spec", cfg.spec_path);
  env.read("family", cfg.family);
  long long env_seed = 0;
  if (env.read("seed", env_seed)) {
    require(env_seed >= 0, "env.seed must be non-negative");
    cfg.env_seed = static_cast<std::uint64_t>(env_seed);
  }
  require(cfg.spec_path.empty() != cfg.family.empty(), "env: give exactly one of spec or family");
  cfg.env_params = env.unused();
  nlohmann::json env_canon;
  if (!cfg.spec_path.empty()) {
    require(cfg.env_params.empty(), "env: generator parameters given together with a spec file");
    require(fs::exists(cfg.spec_path), "env.spec: no such file " + cfg.spec_path);
    env_canon = {{"spec_hash", config_hash(spec_to_json(load_spec(cfg.spec_path)))}};
  } else {
    generate(cfg.family, cfg.env_params, cfg.env_seed);  // validates the parameters
    env_canon = {{"family", cfg.family}, {"params", cfg.env_params}, {"seed", cfg.env_seed}};
  }

  bool timing = false;
  if (sections.contains("output")) {
    KeyReader out(sections.at("output"), "output");
    out.read("dir", cfg.out_dir);
    out.read("prefix", cfg.prefix);
    out.read("timing", timing);
    out.reject_unused();
  }
  if (cfg.prefix.empty()) cfg.prefix = name;
  cfg.termcrl.timing = cfg.termpg.timing = timing;

  nlohmann::json labels_json = nlohmann::json::array();
  for (const auto& v : cfg.variants) labels_json.push_back(v.label());
  cfg.canonical = {{"algorithm",
                    {{"name", name},
                     {"variants", labels_json},
                     {"seeds", cfg.seeds},
                     {"hyper", cfg.algorithm == Algorithm::TermCrl ? termcrl_json(cfg.termcrl)
                                                                  : termpg_json(cfg.termpg)}}},
                   {"env", env_canon},
                   {"timing", timing}};
  return cfg;
}

TerMdpSpec ExperimentConfig::environment() const {
  if (!spec_path.empty()) return load_spec(spec_path);
  return generate(family, env_params, env_seed);
}

// ---------------------------------------------------------------------------
// Running

bool ExperimentResult::all_ok() const {
  for (const auto& r : runs)
    if (!r.ok) return false;
  return true;
}

const char* aggregate_header(Algorithm algorithm) {
  return algorithm == Algorithm::TermCrl
             ? "variant,k,seeds,regret_mean,regret_std,cum_regret_mean,cum_regret_std,"
               "cost_l2_err_mean,cost_l2_err_std"
             : "variant,iter,seeds,mean_return_mean,mean_return_std,term_rate_mean,term_rate_std,"
               "cost_l2_err_mean,cost_l2_err_std";
}

namespace {

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

// Per-row metrics kept for aggregation: three columns per algorithm.
using Series = std::vector<std::array<double, 3>>;

struct Task {
  std::size_t variant = 0;
  std::uint64_t seed = 0;
  SeedOutcome outcome;
  Series series;
};

void run_task(const ExperimentConfig& cfg, const TerMdpSpec& spec, Task& task) {
  const auto& v = cfg.variants[task.variant];
  std::ostringstream csv;
  if (cfg.algorithm == Algorithm::TermCrl) {
    auto c = cfg.termcrl;
    c.seed = task.seed;
    c.variant = v.name == "naive" ? CrlVariant::Naive : CrlVariant::Optimistic;
    const auto trace = run_termcrl(spec, c);
    trace.write_csv(csv);
    for (const auto& r : trace.records) task.series.push_back({r.regret, r.cum_regret, r.cost_l2_err});
  } else {
    auto c = cfg.termpg;
    c.seed = task.seed;
    c.variant = PgVariant::parse(v.name);
    if (v.window_factor != 1.0) {
      const int base = c.window == 0 ? spec.window : c.window;
      c.window = std::max(1, static_cast<int>(std::lround(base * v.window_factor)));
    }
    const auto trace = run_termpg(spec, c);
    trace.write_csv(csv);
    for (const auto& r : trace.records) task.series.push_back({r.mean_return, r.term_rate, r.cost_l2_err});
  }
  std::ofstream out(task.outcome.csv_path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + task.outcome.csv_path);
  out << csv.str();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  require(!cfg.variants.empty(), "run_experiment: no variants");
  fs::create_directories(cfg.out_dir);
  const auto spec = cfg.environment();

  std::vector<Task> tasks;
  for (std::size_t v = 0; v < cfg.variants.size(); ++v)
    for (auto seed : cfg.seeds) {
      Task t;
      t.variant = v;
      t.seed = seed;
      t.outcome.variant = cfg.variants[v].label();
      t.outcome.seed = seed;
      t.outcome.csv_path = (fs::path(cfg.out_dir) /
                            (cfg.prefix + "_" + file_safe(t.outcome.variant) + "_seed" +
                             std::to_string(seed) + ".csv"))
                               .string();
      tasks.push_back(std::move(t));
    }

  // Workers claim tasks by index; each task owns its slot, so no locking.
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      auto& t = tasks[i];
      try {
        run_task(cfg, spec, t);
        t.outcome.ok = true;
      } catch (const std::exception& e) {
        t.outcome.error = e.what();
        t.series.clear();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  ExperimentResult result;
  for (const auto& t : tasks) result.runs.push_back(t.outcome);

  // Aggregate: rows ordered by index, then variant.
  result.aggregate_path = (fs::path(cfg.out_dir) / (cfg.prefix + "_aggregate.csv")).string();
  std::ofstream agg(result.aggregate_path, std::ios::binary);
  if (!agg) throw InvalidArgument("cannot write " + result.aggregate_path);
  agg << aggregate_header(cfg.algorithm) << '\n';
  std::size_t rows = 0;
  for (const auto& t : tasks) rows = std::max(rows, t.series.size());
  const int first_index = cfg.algorithm == Algorithm::TermCrl ? 1 : 0;
  char buf[512];
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
      std::vector<const Series*> runs;
      for (const auto& t : tasks)
        if (t.variant == v && t.outcome.ok && i < t.series.size()) runs.push_back(&t.series);
      if (runs.empty()) continue;
      const double n = static_cast<double>(runs.size());
      std::snprintf(buf, sizeof buf, "%s,%zu,%zu", cfg.variants[v].label().c_str(), i + first_index,
                    runs.size());
      agg << buf;
      for (int m = 0; m < 3; ++m) {
        double mean = 0.0, sq = 0.0;
        for (const auto* s : runs) mean += (*s)[i][m];
        mean /= n;
        for (const auto* s : runs) sq += ((*s)[i][m] - mean) * ((*s)[i][m] - mean);
        const double sd = runs.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
        std::snprintf(buf, sizeof buf, ",%.12g,%.12g", mean, sd);
        agg << buf;
      }
      agg << '\n';
    }
  agg.close();

  result.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json manifest = {{"config_hash", config_hash(cfg.canonical)},
                             {"code_version", code_version()},
                             {"wall_ms", result.wall_ms},
                             {"config", cfg.canonical},
                             {"aggregate", result.aggregate_path},
                             {"runs", nlohmann::json::array()}};
  for (const auto& r : result.runs) {
    nlohmann::json run = {{"variant", r.variant}, {"seed", r.seed}, {"ok", r.ok}, {"csv", r.csv_path}};
    if (!r.ok) run["error"] = r.error;
    manifest["runs"].push_back(run);
  }
  result.manifest_path = (fs::path(cfg.out_dir) / (cfg.prefix + "_manifest.json")).string();
  std::ofstream mf(result.manifest_path);
  if (!mf) throw InvalidArgument("cannot write " + result.manifest_path);
  mf << manifest.dump(2) << '\n';
  return result;
}

}  // namespace termdp
