#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "env_oracle.hpp"
#include "ppo.hpp"

namespace temple {

// Pool of independent environments stepped in lockstep so the policy forward
// runs batched. Single-threaded and fully deterministic for a given seed.
class EnvPool {
 public:
  EnvPool(const EnvConfig& cfg, int num_envs, std::uint64_t run_seed);

  int size() const { return static_cast<int>(envs_.size()); }
  const EnvConfig& env_config() const { return cfg_; }

  // Environments needing a reset get a fresh episode seed first.
  void ensure_reset(int skill_dim);

  FetchTheKeyEnv& env(int i) { return envs_[static_cast<std::size_t>(i)]; }
  const Eigen::VectorXd& obs(int i) const { return obs_[static_cast<std::size_t>(i)]; }
  Carry& carry(int i) { return carries_[static_cast<std::size_t>(i)]; }

  void record_step(int i, const Eigen::VectorXd& next_obs, double reward, bool done);
  double episode_return(int i) const { return ep_return_[static_cast<std::size_t>(i)]; }
  int episode_length(int i) const { return ep_len_[static_cast<std::size_t>(i)]; }
  bool needs_reset(int i) const { return needs_reset_[static_cast<std::size_t>(i)]; }

 private:
  EnvConfig cfg_;
  std::uint64_t run_seed_;
  std::vector<FetchTheKeyEnv> envs_;
  std::vector<Eigen::VectorXd> obs_;
  std::vector<Carry> carries_;
  std::vector<double> ep_return_;
  std::vector<int> ep_len_;
  std::vector<std::uint64_t> ep_counter_;
  std::vector<bool> needs_reset_;
};

struct CollectResult {
  TrajectoryBatch batch;
};

// Exactly steps_per_env transitions per environment; the recurrent carry is
// threaded within episodes and reset to (uniform, 0) at each episode start.
CollectResult collect_rollout(const PolicyConfig& pcfg, const ParameterVector& params,
                              EnvPool& pool, int steps_per_env, Rng& rng);

struct MetricsRow {
  long update = 0;
  long env_steps = 0;
  long episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double grad_norm = 0.0;
  double wall_time_s = 0.0;
};

extern const char* const kMetricsHeader;
std::string metrics_row_csv(const MetricsRow& row);

// Per-step actor interface for evaluation: fills in whatever the policy kind
// provides (the oracle reference actor only sets the action).
struct ActorStep {
  int action = 0;
  double c_in = 0.0;   // gate consumed by this step's switch
  double c_out = 0.0;  // gate emitted this step
  double value = 0.0;
  double log_prob = 0.0;
  Eigen::VectorXd h_used;
  Eigen::VectorXd h_hat;
};
using ActorFn = std::function<ActorStep(const FetchTheKeyEnv&, const Eigen::VectorXd&, Rng&)>;

struct TraceStep {
  int t = 0;
  Eigen::VectorXd h;      // internal action used at t
  double c = 0.0;         // gate signal consumed at t (c_{t-1}; 0 at t = 0)
  double c_out = 0.0;     // gate emitted at t
  Eigen::VectorXd h_hat;  // high-level proposal at t
  int row = 0;
  int col = 0;
  int action = 0;
  double reward = 0.0;
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;
  double episode_return = 0.0;
  int skill_dim = 0;
  int length() const { return static_cast<int>(steps.size()); }
};

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> returns;
  std::vector<EpisodeTrace> traces;
};

// Runs n sequential episodes on a fresh environment. Fails on n <= 0.
EvalResult evaluate_actor(const EnvConfig& env_cfg, const ActorFn& actor,
                          int n_episodes, std::uint64_t seed, bool want_traces,
                          const std::string& replay_jsonl_path = {});

ActorFn make_policy_actor(const PolicyConfig& pcfg, const ParameterVector& params,
                          bool greedy);
ActorFn make_oracle_actor();

EvalResult evaluate(const PolicyConfig& pcfg, const ParameterVector& params,
                    const EnvConfig& env_cfg, int n_episodes, std::uint64_t seed,
                    bool greedy = false, bool want_traces = false,
                    const std::string& replay_jsonl_path = {});

struct TrainOutcome {
  long updates = 0;
  long env_steps = 0;
  long episodes = 0;
  double final_eval_mean = 0.0;
  double final_eval_std = 0.0;
  std::string final_checkpoint;  // path prefix
  std::string metrics_path;
};

// Orchestrates rollout collection, PPO updates, metrics, checkpoints and the
// final evaluation. All artifacts land under run_dir.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::string run_dir);
  TrainOutcome train();

  const RunConfig& config() const { return cfg_; }

 private:
  void write_checkpoint(const ParameterVector& params, const std::string& name) const;

  RunConfig cfg_;
  std::string run_dir_;
};

// Checkpoint helpers shared by trainer, analysis and the C API.
struct LoadedRun {
  RunConfig config;
  ParameterVector params;
};
LoadedRun load_run_checkpoint(const std::string& path_prefix);
void save_run_checkpoint(const RunConfig& cfg, const ParameterVector& params,
                         const std::string& path_prefix);

}  // namespace temple
