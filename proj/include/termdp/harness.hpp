#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "termdp/model.hpp"
#include "termdp/termcrl.hpp"
#include "termdp/termpg.hpp"

namespace termdp {

// Experiment files are a TOML subset: [section] headers, `key = value` lines
// and `#` comments. Values are strings in double quotes, integers, floats,
// booleans, or flat arrays of those. Parsed into {section: {key: value}};
// keys before any header land in "".
nlohmann::json parse_config(std::istream& in);
nlohmann::json load_config(const std::string& path);

/// FNV-1a over the canonical (sorted-key) JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Version string baked in at configure time.
const char* code_version();

enum class Algorithm { TermCrl, TermPg };

/// A learner variant plus an optional learner-window multiplier, written
/// "name" or "name@x<factor>" (e.g. "plain@x0.5").
struct VariantSpec {
  std::string name;
  double window_factor = 1.0;

  static VariantSpec parse(const std::string& text);
  std::string label() const;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::TermPg;
  std::vector<VariantSpec> variants;
  std::vector<std::uint64_t> seeds{0};

  // Environment: a spec file, or a generator family with parameters.
  std::string spec_path;
  std::string family;
  nlohmann::json env_params = nlohmann::json::object();
  std::uint64_t env_seed = 0;

  TermCrlConfig termcrl;
  TermPgConfig termpg;

  std::string out_dir = ".";
  std::string prefix;  // defaults to the algorithm name
  int jobs = 1;

  /// The normalized configuration the hash is taken over.
  nlohmann::json canonical;

  /// Reads {"algorithm": {...}, "env": {...}, "output": {...}}. Unknown keys
  /// and out-of-range values throw InvalidArgument.
  static ExperimentConfig from_json(const nlohmann::json& sections);

  TerMdpSpec environment() const;
};

struct SeedOutcome {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string csv_path;
};

struct ExperimentResult {
  std::vector<SeedOutcome> runs;
  std::string aggregate_path;
  std::string manifest_path;
  double wall_ms = 0.0;
  bool all_ok() const;
};

/// Runs every (variant, seed) pair on `config.jobs` worker threads, then
/// writes the aggregate CSV and the manifest once all workers have joined.
/// Per-seed failures are recorded, not thrown.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Aggregate CSV column sets, one per algorithm.
const char* aggregate_header(Algorithm algorithm);

}  // namespace termdp
