#pragma once

#include <cstdint>
#include <vector>

#include "policy.hpp"

namespace temple {

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_epsilon = 0.2;
  double learning_rate = 3e-4;
  int epochs_per_update = 4;
  int minibatch_size = 64;   // unroll windows per minibatch
  int unroll_length = 4;     // l, steps gradients flow through the switch
  int rollout_steps = 2048;  // transitions per update, summed over the pool
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

// One environment's consecutive transitions from a rollout. Episodes may
// span stream boundaries; init_* carry the recurrent state into step 0.
struct Stream {
  Mat obs;  // obs_dim x T
  std::vector<int> actions;
  Eigen::VectorXd rewards;
  Eigen::VectorXd log_prob_old;
  Eigen::VectorXd value_old;
  std::vector<std::uint8_t> dones;
  std::vector<int> t_in_ep;        // steps since episode start
  Mat h_used;                      // d x T, recurrent kinds only
  Eigen::RowVectorXd c_emitted;    // gate emitted at t (consumed at t+1)
  Eigen::VectorXd value_high_old;  // TEMPLE-fix critic at each step

  Eigen::VectorXd init_h;
  double init_c = 0.0;
  int init_t = 0;

  Eigen::VectorXd final_obs;
  double bootstrap_value = 0.0;       // 0 when the last step ended an episode
  double bootstrap_value_high = 0.0;  // TEMPLE-fix

  int length() const { return static_cast<int>(actions.size()); }
};

struct TrajectoryBatch {
  std::vector<Stream> streams;
  std::vector<double> completed_returns;  // episodes finished while collecting
  std::vector<int> completed_lengths;

  int total_steps() const {
    int n = 0;
    for (const auto& s : streams) n += s.length();
    return n;
  }
};

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

// delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t
// A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
// returns = advantages + values. bootstrap_value stands in for v_T when the
// final step did not terminate.
GaeResult compute_gae(const Eigen::VectorXd& rewards,
                      const Eigen::VectorXd& values,
                      const std::vector<std::uint8_t>& dones,
                      double bootstrap_value, double gamma, double lambda);

// Variable per-step discounts; used at interval granularity by TEMPLE-fix
// where step i spans gamma^{len_i} of environment time.
GaeResult compute_gae_discounted(const Eigen::VectorXd& rewards,
                                 const Eigen::VectorXd& values,
                                 const std::vector<std::uint8_t>& dones,
                                 double bootstrap_value,
                                 const Eigen::VectorXd& step_discounts,
                                 double lambda);

// min(r * A, clip(r, 1 - eps, 1 + eps) * A), r = exp(lp_new - lp_old).
double clipped_objective(double log_prob_new, double log_prob_old,
                         double advantage, double clip_epsilon);

// A contiguous run of steps within one stream and one episode.
struct Span {
  int stream = 0;
  int start = 0;
  int len = 0;
};

// Length <= max_len, never crossing an episode boundary (or stream end).
std::vector<Span> segment_windows(const TrajectoryBatch& batch, int max_len);
// TEMPLE-fix decision intervals: a new span begins whenever t_in_ep hits a
// multiple of k, or an episode starts.
std::vector<Span> segment_intervals(const TrajectoryBatch& batch, int k);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  std::vector<double> value_loss_per_epoch;
  int minibatches = 0;
  int windows = 0;
};

class Adam {
 public:
  explicit Adam(Eigen::Index size)
      : m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);

 private:
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
};

// Clipped-surrogate updates; owns optimizer state across updates.
// TEMPLE: one joint loss, gradients flowing through the switch across each
// unroll window (carry into a window is treated as constant).
// Flat: the same loss without recurrence.
// TEMPLE-fix: sub-policy and high-level trained separately; the high level's
// reward is the environment reward summed over each decision interval.
class PpoUpdater {
 public:
  PpoUpdater(const PolicyConfig& policy_cfg, const TrainConfig& train_cfg,
             const ParameterVector& params);

  UpdateStats update(const TrajectoryBatch& batch, ParameterVector& params,
                     Rng& rng);

 private:
  UpdateStats update_temple(const TrajectoryBatch& batch, ParameterVector& params,
                            Rng& rng);
  UpdateStats update_flat_like(const TrajectoryBatch& batch,
                               ParameterVector& params, Rng& rng);
  UpdateStats update_fix(const TrajectoryBatch& batch, ParameterVector& params,
                         Rng& rng);
  void check_fresh(const TrajectoryBatch& batch, const ParameterVector& params) const;

  PolicyConfig pcfg_;
  TrainConfig tcfg_;
  Adam adam_;       // joint (temple, flat) or sub-policy side (fix)
  Adam adam_high_;  // high-level side (fix only)
};

// Max |recomputed - stored| log-probability over a batch under the given
// parameters; the freshness check for update().
double replay_log_prob_gap(const TrajectoryBatch& batch, const PolicyConfig& cfg,
                           const ParameterVector& params);

}  // namespace temple
