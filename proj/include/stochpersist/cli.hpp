#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stochpersist/engine.hpp"
#include "stochpersist/env.hpp"
#include "stochpersist/models.hpp"

namespace stochpersist::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

struct RunOptions {
  std::string config_path;
  /// "dotted.path=value"; the value is parsed as JSON, falling back to a string.
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  /// Speed only; never part of the results.
  unsigned threads = 1;
  /// Append raw simulation statistics (occupations, hit probabilities) with
  /// no verdicts attached.
  bool explore = false;
};

/// Parsed and validated experiment. Inline distributions in the model are
/// appended to `env` in the order they appear.
struct Experiment {
  /// Absent only for the gamma task, which builds its own model.
  std::optional<ModelSpec> model;
  EnvSpec env;
  SimConfig sim;
  std::string task;
  nlohmann::json task_params;
  /// Config after overrides with every default filled in.
  nlohmann::json resolved;
};

/// Throws ConfigError on any schema violation, including unknown keys.
Experiment parse_experiment(const nlohmann::json& config);

/// Applies one "key=value" override in place.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// 64-bit FNV-1a of the string, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

struct TaskOutput {
  nlohmann::json results;
  std::string csv;
  /// Extra files (name, contents) written next to the results.
  std::vector<std::pair<std::string, std::string>> extra_files;
};

/// Runs the task; nothing touches the filesystem.
TaskOutput execute(const Experiment& exp, unsigned threads, bool explore = false);

/// Full command: read config, run, write results atomically. Returns the
/// exit code; diagnostics go to `err`.
int run(const RunOptions& options, std::ostream& err);

/// One tab-separated line per model: name, parameters, env wiring, state space.
std::string list_models();

}  // namespace stochpersist::cli
