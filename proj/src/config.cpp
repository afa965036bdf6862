#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace temple {

using nlohmann::json;

long RunConfig::episode_budget() const {
  if (total_episodes > 0) return total_episodes;
  static constexpr long kDefaults[4] = {3000, 8000, 20000, 40000};
  return kDefaults[env.num_keys - 1];
}

void RunConfig::validate() const {
  env.validate();
  policy.validate();
  train.validate();
  if (num_envs < 1) throw std::invalid_argument("num_envs must be >= 1");
  if (train.rollout_steps % num_envs != 0) {
    throw std::invalid_argument("rollout_steps must be divisible by num_envs");
  }
  if (logging.eval_episodes < 0) {
    throw std::invalid_argument("eval_episodes must be >= 0");
  }
  if (logging.checkpoint_interval < 1) {
    throw std::invalid_argument("checkpoint_interval must be >= 1");
  }
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

json to_json_tree(const RunConfig& c) {
  return json{
      {"env",
       {{"num_keys", c.env.num_keys},
        {"max_episode_steps", c.env.max_episode_steps},
        {"num_envs", c.num_envs}}},
      {"policy",
       {{"kind", policy_kind_name(c.policy.kind)},
        {"skill_dim", c.policy.skill_dim},
        {"hidden_dim", c.policy.hidden_dim},
        {"flat_hidden_dim", c.policy.flat_hidden_dim},
        {"switch_interval", c.policy.switch_interval}}},
      {"train",
       {{"gamma", c.train.gamma},
        {"lambda", c.train.lambda},
        {"clip_epsilon", c.train.clip_epsilon},
        {"learning_rate", c.train.learning_rate},
        {"epochs_per_update", c.train.epochs_per_update},
        {"minibatch_size", c.train.minibatch_size},
        {"unroll_length", c.train.unroll_length},
        {"rollout_steps", c.train.rollout_steps},
        {"value_coef", c.train.value_coef},
        {"entropy_coef", c.train.entropy_coef},
        {"seed", c.train.seed},
        {"total_episodes", c.total_episodes}}},
      {"logging",
       {{"run_dir", c.logging.run_dir},
        {"eval_episodes", c.logging.eval_episodes},
        {"eval_seed", c.logging.eval_seed},
        {"greedy_eval", c.logging.greedy_eval},
        {"checkpoint_interval", c.logging.checkpoint_interval},
        {"replay_log", c.logging.replay_log}}}};
}

template <typename T>
void maybe_get(const json& node, const char* key, T& out) {
  if (node.contains(key)) out = node.at(key).get<T>();
}

RunConfig from_json_tree(const json& j) {
  RunConfig c;
  if (j.contains("env")) {
    const json& e = j.at("env");
    maybe_get(e, "num_keys", c.env.num_keys);
    maybe_get(e, "max_episode_steps", c.env.max_episode_steps);
    maybe_get(e, "num_envs", c.num_envs);
  }
  if (j.contains("policy")) {
    const json& p = j.at("policy");
    if (p.contains("kind")) {
      c.policy.kind = policy_kind_from_name(p.at("kind").get<std::string>());
    }
    maybe_get(p, "skill_dim", c.policy.skill_dim);
    maybe_get(p, "hidden_dim", c.policy.hidden_dim);
    maybe_get(p, "flat_hidden_dim", c.policy.flat_hidden_dim);
    maybe_get(p, "switch_interval", c.policy.switch_interval);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    maybe_get(t, "gamma", c.train.gamma);
    maybe_get(t, "lambda", c.train.lambda);
    maybe_get(t, "clip_epsilon", c.train.clip_epsilon);
    maybe_get(t, "learning_rate", c.train.learning_rate);
    maybe_get(t, "epochs_per_update", c.train.epochs_per_update);
    maybe_get(t, "minibatch_size", c.train.minibatch_size);
    maybe_get(t, "unroll_length", c.train.unroll_length);
    maybe_get(t, "rollout_steps", c.train.rollout_steps);
    maybe_get(t, "value_coef", c.train.value_coef);
    maybe_get(t, "entropy_coef", c.train.entropy_coef);
    maybe_get(t, "seed", c.train.seed);
    maybe_get(t, "total_episodes", c.total_episodes);
  }
  if (j.contains("logging")) {
    const json& l = j.at("logging");
    maybe_get(l, "run_dir", c.logging.run_dir);
    maybe_get(l, "eval_episodes", c.logging.eval_episodes);
    maybe_get(l, "eval_seed", c.logging.eval_seed);
    maybe_get(l, "greedy_eval", c.logging.greedy_eval);
    maybe_get(l, "checkpoint_interval", c.logging.checkpoint_interval);
    maybe_get(l, "replay_log", c.logging.replay_log);
  }
  return c;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  return to_json_tree(cfg).dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  return from_json_tree(j);
}

void apply_override(std::string& json_text, const std::string& dotted) {
  const auto eq = dotted.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like section.key=value: " + dotted);
  }
  const std::string path = dotted.substr(0, eq);
  const std::string value = dotted.substr(eq + 1);

  json root = json::parse(json_text);
  json* node = &root;
  std::istringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw std::invalid_argument("empty override path");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) {
      throw std::invalid_argument("unknown config section: " + parts[i]);
    }
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->contains(leaf)) {
    throw std::invalid_argument("unknown config key: " + path);
  }
  json& field = (*node)[leaf];
  try {
    if (field.is_string()) {
      field = value;
    } else if (field.is_boolean()) {
      if (value == "true" || value == "1") field = true;
      else if (value == "false" || value == "0") field = false;
      else throw std::invalid_argument("expected boolean");
    } else if (field.is_number_integer() || field.is_number_unsigned()) {
      field = json::parse(value);
      if (!field.is_number()) throw std::invalid_argument("expected number");
    } else if (field.is_number_float()) {
      field = std::stod(value);
    } else {
      field = json::parse(value);
    }
  } catch (const std::exception& e) {
    throw std::invalid_argument("bad value for " + path + ": " + e.what());
  }
  json_text = root.dump(2);
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& dotted_overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  // Normalize through the full schema so overrides can target any field.
  RunConfig base = run_config_from_json(buf.str());
  std::string text = run_config_to_json(base);
  for (const std::string& o : dotted_overrides) apply_override(text, o);
  RunConfig cfg = run_config_from_json(text);
  cfg.validate();
  return cfg;
}

std::string config_hash(const RunConfig& cfg) {
  const std::string s = run_config_to_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 8);  // first 8 hex chars are plenty for run naming
}

}  // namespace temple
