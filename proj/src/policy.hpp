#pragma once

#include <vector>

#include "env_fetchthekey.hpp"
#include "nets.hpp"

namespace temple {

// Recurrent pair threaded between timesteps: the internal action used last
// step and the gate signal it emitted. t counts steps since episode start.
struct Carry {
  Eigen::VectorXd h;
  double c = 0.0;
  int t = 0;
};

Carry initial_carry(int skill_dim);

struct PolicyOutput {
  Eigen::VectorXd action_logits;  // 4
  double gate = 0.0;              // c_t emitted this step
  double value = 0.0;
  Eigen::VectorXd h_used;         // h_t fed to the sub-policy
  Eigen::VectorXd h_hat;          // high-level proposal at this step
  double log_prob = 0.0;
  int action = 0;
};

// h_t = c_prev * h_hat + (1 - c_prev) * h_prev, a scalar convex combination,
// so h_t stays on the simplex.
Eigen::VectorXd temporal_switch(double c_prev, const Eigen::VectorXd& h_prev,
                                const Eigen::VectorXd& h_hat);

Eigen::VectorXd high_level_forward(const ParameterVector& params,
                                   const Eigen::VectorXd& obs);

struct SubPolicyOut {
  Eigen::VectorXd action_logits;
  double gate = 0.0;
  double value = 0.0;
};
SubPolicyOut sub_policy_forward(const ParameterVector& params,
                                const Eigen::VectorXd& obs,
                                const Eigen::VectorXd& h);

PolicyOutput temple_act(const ParameterVector& params, const Eigen::VectorXd& obs,
                        Carry& carry, Rng& rng, bool greedy = false);

// TEMPLE-fix: refresh h from the high level every k steps, ignore the gate.
PolicyOutput fixed_interval_act(const ParameterVector& params,
                                const Eigen::VectorXd& obs, Carry& carry, int k,
                                Rng& rng, bool greedy = false);

struct FlatOutput {
  Eigen::VectorXd action_logits;
  double value = 0.0;
  double log_prob = 0.0;
  int action = 0;
};
FlatOutput flat_act(const ParameterVector& params, const Eigen::VectorXd& obs,
                    Rng& rng, bool greedy = false);

// Batched versions over column-stacked inputs; these are what the rollout
// and evaluation loops use. Sampling consumes one rng draw per column in
// column order.
struct BatchAct {
  std::vector<int> actions;
  Eigen::RowVectorXd log_probs;
  Eigen::RowVectorXd values;
  Eigen::RowVectorXd gates;       // c_t per column (recurrent kinds)
  Eigen::RowVectorXd values_high; // TEMPLE-fix only
  Mat h_used;                     // d x N
  Mat h_hat;                      // d x N
  Mat logits;                     // 4 x N
};

BatchAct temple_act_batch(const ParameterVector& params, const Mat& obs,
                          const Mat& h_prev, const Eigen::RowVectorXd& c_prev,
                          Rng& rng, bool greedy = false);

BatchAct fix_act_batch(const ParameterVector& params, const Mat& obs,
                       const Mat& h_prev, const std::vector<int>& t_in_episode,
                       int k, Rng& rng, bool greedy = false);

BatchAct flat_act_batch(const ParameterVector& params, const Mat& obs, Rng& rng,
                        bool greedy = false);

// Dispatch on policy kind; h_prev/c_prev/t as applicable.
BatchAct policy_act_batch(const PolicyConfig& cfg, const ParameterVector& params,
                          const Mat& obs, const Mat& h_prev,
                          const Eigen::RowVectorXd& c_prev,
                          const std::vector<int>& t_in_episode, Rng& rng,
                          bool greedy = false);

int sample_column(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng,
                  bool greedy);

}  // namespace temple
