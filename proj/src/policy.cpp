#include "policy.hpp"

namespace temple {

const char* policy_kind_name(PolicyConfig::Kind kind) {
  switch (kind) {
    case PolicyConfig::Kind::kTemple: return "temple";
    case PolicyConfig::Kind::kTempleFix: return "temple-fix";
    case PolicyConfig::Kind::kFlat: return "flat";
  }
  return "?";
}

PolicyConfig::Kind policy_kind_from_name(const std::string& name) {
  if (name == "temple") return PolicyConfig::Kind::kTemple;
  if (name == "temple-fix") return PolicyConfig::Kind::kTempleFix;
  if (name == "flat") return PolicyConfig::Kind::kFlat;
  throw std::invalid_argument("unknown policy kind: " + name +
                              " (expected temple, temple-fix or flat)");
}

ParameterVector build_params(const PolicyConfig& cfg, int obs_dim, Rng& rng) {
  cfg.validate();
  ParameterVector pv;
  auto dense = [&](const std::string& name, Partition part, int out, int in) {
    pv.add(name + ".W", part, glorot_init(out, in, rng));
    pv.add(name + ".b", part, Mat::Zero(out, 1));
  };

  if (cfg.kind == PolicyConfig::Kind::kFlat) {
    const int H = cfg.flat_hidden_dim;
    dense("flat.l1", Partition::kSubPolicy, H, obs_dim);
    dense("flat.l2", Partition::kSubPolicy, H, H);
    dense("flat.act", Partition::kSubPolicy, kNumActions, H);
    dense("flat.value", Partition::kValueHead, 1, H);
    return pv;
  }

  const int h = cfg.hidden_dim;
  const int d = cfg.skill_dim;
  dense("high.l1", Partition::kHighLevel, h, obs_dim);
  dense("high.l2", Partition::kHighLevel, h, h);
  dense("high.out", Partition::kHighLevel, d, h);
  dense("sub.l1", Partition::kSubPolicy, h, obs_dim + d);
  dense("sub.l2", Partition::kSubPolicy, h, h);
  dense("sub.act", Partition::kSubPolicy, kNumActions, h);
  dense("sub.gate", Partition::kSubPolicy, 1, h);
  dense("sub.value", Partition::kValueHead, 1, h);
  if (cfg.kind == PolicyConfig::Kind::kTempleFix) {
    dense("high.value", Partition::kValueHead, 1, h);
  }
  return pv;
}

Carry initial_carry(int skill_dim) {
  Carry c;
  c.h = Eigen::VectorXd::Constant(skill_dim, 1.0 / static_cast<double>(skill_dim));
  c.c = 0.0;
  c.t = 0;
  return c;
}

Eigen::VectorXd temporal_switch(double c_prev, const Eigen::VectorXd& h_prev,
                                const Eigen::VectorXd& h_hat) {
  if (h_prev.size() != h_hat.size()) {
    throw std::invalid_argument("temporal_switch: dimension mismatch");
  }
  Mat c(1, 1);
  c(0, 0) = c_prev;
  return blend_columns(Mat(h_hat), Mat(h_prev), c);
}

int sample_column(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng,
                  bool greedy) {
  if (greedy) {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return static_cast<int>(best);
  }
  return rng.categorical(probs);
}

namespace {

// Shared tail: sample actions from logits, fill log-probs.
void finish_actions(const PlainCtx& cx, Mat logits, Rng& rng, bool greedy,
                    BatchAct& out) {
  const Mat probs = cx.softmax_cols(logits);
  const Mat logp = cx.log_softmax_cols(logits);
  const auto n = logits.cols();
  out.logits = std::move(logits);
  out.actions.resize(static_cast<std::size_t>(n));
  out.log_probs.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = sample_column(probs.col(j), rng, greedy);
    out.actions[static_cast<std::size_t>(j)] = a;
    out.log_probs[j] = logp(a, j);
  }
}

}  // namespace

BatchAct temple_act_batch(const ParameterVector& params, const Mat& obs,
                          const Mat& h_prev, const Eigen::RowVectorXd& c_prev,
                          Rng& rng, bool greedy) {
  PlainCtx cx{params};
  BatchAct out;
  out.h_hat = high_forward(cx, obs);
  out.h_used = cx.blend(out.h_hat, h_prev, c_prev);
  const auto sub = sub_forward(cx, obs, out.h_used);
  out.gates = sub.gate.row(0);
  out.values = sub.value.row(0);
  finish_actions(cx, sub.logits, rng, greedy, out);
  return out;
}

BatchAct fix_act_batch(const ParameterVector& params, const Mat& obs,
                       const Mat& h_prev, const std::vector<int>& t_in_episode,
                       int k, Rng& rng, bool greedy) {
  if (k < 1) throw std::invalid_argument("fixed interval must be >= 1");
  PlainCtx cx{params};
  BatchAct out;
  out.h_hat = high_forward(cx, obs);
  out.h_used = h_prev;
  for (Eigen::Index j = 0; j < obs.cols(); ++j) {
    if (t_in_episode[static_cast<std::size_t>(j)] % k == 0) {
      out.h_used.col(j) = out.h_hat.col(j);
    }
  }
  const auto sub = sub_forward(cx, obs, out.h_used);
  out.gates = sub.gate.row(0);  // emitted but ignored by the switch
  out.values = sub.value.row(0);
  out.values_high = high_value(cx, obs).row(0);
  finish_actions(cx, sub.logits, rng, greedy, out);
  return out;
}

BatchAct flat_act_batch(const ParameterVector& params, const Mat& obs, Rng& rng,
                        bool greedy) {
  PlainCtx cx{params};
  BatchAct out;
  const auto flat = flat_forward(cx, obs);
  out.values = flat.value.row(0);
  finish_actions(cx, flat.logits, rng, greedy, out);
  return out;
}

BatchAct policy_act_batch(const PolicyConfig& cfg, const ParameterVector& params,
                          const Mat& obs, const Mat& h_prev,
                          const Eigen::RowVectorXd& c_prev,
                          const std::vector<int>& t_in_episode, Rng& rng,
                          bool greedy) {
  switch (cfg.kind) {
    case PolicyConfig::Kind::kTemple:
      return temple_act_batch(params, obs, h_prev, c_prev, rng, greedy);
    case PolicyConfig::Kind::kTempleFix:
      return fix_act_batch(params, obs, h_prev, t_in_episode,
                           cfg.switch_interval, rng, greedy);
    case PolicyConfig::Kind::kFlat:
      return flat_act_batch(params, obs, rng, greedy);
  }
  throw std::logic_error("unreachable policy kind");
}

Eigen::VectorXd high_level_forward(const ParameterVector& params,
                                   const Eigen::VectorXd& obs) {
  PlainCtx cx{params};
  return high_forward(cx, Mat(obs));
}

SubPolicyOut sub_policy_forward(const ParameterVector& params,
                                const Eigen::VectorXd& obs,
                                const Eigen::VectorXd& h) {
  PlainCtx cx{params};
  const auto sub = sub_forward(cx, Mat(obs), Mat(h));
  return SubPolicyOut{sub.logits.col(0), sub.gate(0, 0), sub.value(0, 0)};
}

namespace {

PolicyOutput single_from_batch(const BatchAct& b) {
  PolicyOutput out;
  out.h_used = b.h_used.col(0);
  out.h_hat = b.h_hat.col(0);
  out.gate = b.gates[0];
  out.value = b.values[0];
  out.log_prob = b.log_probs[0];
  out.action = b.actions[0];
  out.action_logits = b.logits.col(0);
  return out;
}

}  // namespace

PolicyOutput temple_act(const ParameterVector& params, const Eigen::VectorXd& obs,
                        Carry& carry, Rng& rng, bool greedy) {
  Eigen::RowVectorXd c_prev(1);
  c_prev[0] = carry.c;
  const BatchAct b =
      temple_act_batch(params, Mat(obs), Mat(carry.h), c_prev, rng, greedy);
  PolicyOutput out = single_from_batch(b);
  carry.h = out.h_used;
  carry.c = out.gate;
  carry.t += 1;
  return out;
}

PolicyOutput fixed_interval_act(const ParameterVector& params,
                                const Eigen::VectorXd& obs, Carry& carry, int k,
                                Rng& rng, bool greedy) {
  const BatchAct b = fix_act_batch(params, Mat(obs), Mat(carry.h), {carry.t}, k,
                                   rng, greedy);
  PolicyOutput out = single_from_batch(b);
  carry.h = out.h_used;
  carry.c = out.gate;
  carry.t += 1;
  return out;
}

FlatOutput flat_act(const ParameterVector& params, const Eigen::VectorXd& obs,
                    Rng& rng, bool greedy) {
  PlainCtx cx{params};
  const auto flat = flat_forward(cx, Mat(obs));
  FlatOutput out;
  out.action_logits = flat.logits.col(0);
  out.value = flat.value(0, 0);
  const Mat probs = cx.softmax_cols(flat.logits);
  const Mat logp = cx.log_softmax_cols(flat.logits);
  out.action = sample_column(probs.col(0), rng, greedy);
  out.log_prob = logp(out.action, 0);
  return out;
}

}  // namespace temple
