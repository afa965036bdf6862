#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "env_fetchthekey.hpp"
#include "ppo.hpp"

namespace temple {

struct LoggingConfig {
  std::string run_dir;  // empty: derive from timestamp + config hash
  int eval_episodes = 100;
  std::uint64_t eval_seed = 10000;
  bool greedy_eval = false;
  int checkpoint_interval = 200;  // updates between periodic checkpoints
  bool replay_log = false;        // JSON-lines episode replays during eval
};

struct RunConfig {
  EnvConfig env;
  int num_envs = 8;
  PolicyConfig policy;
  TrainConfig train;
  long total_episodes = 0;  // 0: difficulty default
  LoggingConfig logging;

  long episode_budget() const;
  void validate() const;
};

RunConfig default_run_config();

// JSON layout: {"env": {...}, "policy": {...}, "train": {...}, "logging": {...}}.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& dotted_overrides);

// "train.gamma=0.995" style override into the JSON tree; the path must exist
// and the value is coerced to the field's type.
void apply_override(std::string& json_text, const std::string& dotted);

// Stable 64-bit hash of the canonical JSON, hex-encoded (run naming).
std::string config_hash(const RunConfig& cfg);

}  // namespace temple
