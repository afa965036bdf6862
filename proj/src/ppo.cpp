#include "ppo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace temple {

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0,1]");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must be in [0,1]");
  if (clip_epsilon <= 0.0) throw std::invalid_argument("clip_epsilon must be positive");
  if (unroll_length < 1) throw std::invalid_argument("unroll_length must be >= 1");
  if (epochs_per_update < 1) throw std::invalid_argument("epochs_per_update must be >= 1");
  if (minibatch_size < 1) throw std::invalid_argument("minibatch_size must be >= 1");
  if (rollout_steps < 1) throw std::invalid_argument("rollout_steps must be >= 1");
  if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
}

GaeResult compute_gae_discounted(const Eigen::VectorXd& rewards,
                                 const Eigen::VectorXd& values,
                                 const std::vector<std::uint8_t>& dones,
                                 double bootstrap_value,
                                 const Eigen::VectorXd& step_discounts,
                                 double lambda) {
  const auto n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n ||
      step_discounts.size() != n) {
    throw std::invalid_argument("compute_gae: arrays must be aligned");
  }
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double next_adv = 0.0;
  double next_value = bootstrap_value;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double nonterminal = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double g = step_discounts[t];
    const double delta = rewards[t] + g * next_value * nonterminal - values[t];
    next_adv = delta + g * lambda * nonterminal * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
    next_value = values[t];
  }
  return out;
}

GaeResult compute_gae(const Eigen::VectorXd& rewards,
                      const Eigen::VectorXd& values,
                      const std::vector<std::uint8_t>& dones,
                      double bootstrap_value, double gamma, double lambda) {
  return compute_gae_discounted(rewards, values, dones, bootstrap_value,
                                Eigen::VectorXd::Constant(rewards.size(), gamma),
                                lambda);
}

double clipped_objective(double log_prob_new, double log_prob_old,
                         double advantage, double clip_epsilon) {
  const double r = std::exp(log_prob_new - log_prob_old);
  const double clipped = std::clamp(r, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(r * advantage, clipped * advantage);
}

std::vector<Span> segment_windows(const TrajectoryBatch& batch, int max_len) {
  if (max_len < 1) throw std::invalid_argument("window length must be >= 1");
  std::vector<Span> spans;
  for (int s = 0; s < static_cast<int>(batch.streams.size()); ++s) {
    const Stream& st = batch.streams[static_cast<std::size_t>(s)];
    const int T = st.length();
    int t = 0;
    while (t < T) {
      int end = t + 1;  // extend while inside the same episode
      while (end < T && st.t_in_ep[static_cast<std::size_t>(end)] != 0 &&
             end - t < max_len) {
        ++end;
      }
      spans.push_back(Span{s, t, end - t});
      t = end;
    }
  }
  return spans;
}

std::vector<Span> segment_intervals(const TrajectoryBatch& batch, int k) {
  if (k < 1) throw std::invalid_argument("interval length must be >= 1");
  std::vector<Span> spans;
  for (int s = 0; s < static_cast<int>(batch.streams.size()); ++s) {
    const Stream& st = batch.streams[static_cast<std::size_t>(s)];
    const int T = st.length();
    int t = 0;
    while (t < T) {
      int end = t + 1;
      while (end < T && st.t_in_ep[static_cast<std::size_t>(end)] % k != 0) {
        ++end;
      }
      spans.push_back(Span{s, t, end - t});
      t = end;
    }
  }
  return spans;
}

namespace {

// Recurrent state feeding step t of a stream.
void carry_into(const Stream& st, int t, Eigen::VectorXd& h, double& c) {
  if (st.t_in_ep[static_cast<std::size_t>(t)] == 0) {
    h = Eigen::VectorXd::Constant(st.init_h.size(), 1.0 / static_cast<double>(st.init_h.size()));
    c = 0.0;
  } else if (t == 0) {
    h = st.init_h;
    c = st.init_c;
  } else {
    h = st.h_used.col(t - 1);
    c = st.c_emitted[t - 1];
  }
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(i + 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
}

struct AdvData {
  // Indexed like [stream][t].
  std::vector<Eigen::VectorXd> adv;
  std::vector<Eigen::VectorXd> ret;
};

AdvData step_advantages(const TrajectoryBatch& batch, double gamma, double lambda) {
  AdvData out;
  for (const Stream& st : batch.streams) {
    const GaeResult g = compute_gae(st.rewards, st.value_old, st.dones,
                                    st.bootstrap_value, gamma, lambda);
    out.adv.push_back(g.advantages);
    out.ret.push_back(g.returns);
  }
  return out;
}

void normalize_advantages(AdvData& data) {
  double sum = 0.0;
  long n = 0;
  for (const auto& a : data.adv) {
    sum += a.sum();
    n += a.size();
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& a : data.adv) sq += (a.array() - mean).square().sum();
  const double stddev = std::sqrt(sq / static_cast<double>(n));
  for (auto& a : data.adv) a = (a.array() - mean) / (stddev + 1e-8);
}

// Per-minibatch running statistics.
struct MbStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_count = 0.0;
  double masked_steps = 0.0;
  double grad_norm = 0.0;
};

ad::Value dot_const(TapeCtx& cx, ad::Value row, const Eigen::RowVectorXd& weights) {
  return cx.tape.sum_all(cx.tape.hadamard(row, cx.tape.constant(weights)));
}

// Entropy row (1 x N) from column log-probabilities.
ad::Value entropy_row(TapeCtx& cx, ad::Value log_probs) {
  ad::Value p = cx.tape.exp(log_probs);
  ad::Value pl = cx.tape.hadamard(p, log_probs);
  return cx.tape.affine_scalar(cx.tape.colsum(pl), -1.0, 0.0);
}

double finite_or_throw(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw std::runtime_error(std::string("non-finite ") + what +
                             " in PPO update");
  }
  return x;
}

}  // namespace

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("Adam: size mismatch");
  }
  ++t_;
  m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
  v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  params.array() -=
      lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + kEps);
}

PpoUpdater::PpoUpdater(const PolicyConfig& policy_cfg, const TrainConfig& train_cfg,
                       const ParameterVector& params)
    : pcfg_(policy_cfg),
      tcfg_(train_cfg),
      adam_(params.total_values()),
      adam_high_(params.total_values()) {
  tcfg_.validate();
  pcfg_.validate();
}

double replay_log_prob_gap(const TrajectoryBatch& batch, const PolicyConfig& cfg,
                           const ParameterVector& params) {
  PlainCtx cx{params};
  double gap = 0.0;
  const int E = static_cast<int>(batch.streams.size());
  if (E == 0) return 0.0;
  const int T = batch.streams[0].length();
  const auto obs_dim = batch.streams[0].obs.rows();
  const int d = cfg.skill_dim;

  Mat obs(obs_dim, E);
  Mat h_prev(d, E);
  Mat c_prev(1, E);
  for (int t = 0; t < T; ++t) {
    for (int e = 0; e < E; ++e) {
      const Stream& st = batch.streams[static_cast<std::size_t>(e)];
      obs.col(e) = st.obs.col(t);
      if (cfg.recurrent()) {
        Eigen::VectorXd h;
        double c = 0.0;
        carry_into(st, t, h, c);
        h_prev.col(e) = h;
        c_prev(0, e) = c;
      }
    }
    Mat logits;
    if (cfg.kind == PolicyConfig::Kind::kTemple) {
      const Mat h_hat = high_forward(cx, obs);
      const Mat h = cx.blend(h_hat, h_prev, c_prev);
      logits = sub_forward(cx, obs, h).logits;
    } else if (cfg.kind == PolicyConfig::Kind::kTempleFix) {
      const Mat h_hat = high_forward(cx, obs);
      Mat h = h_prev;
      for (int e = 0; e < E; ++e) {
        const Stream& st = batch.streams[static_cast<std::size_t>(e)];
        if (st.t_in_ep[static_cast<std::size_t>(t)] % cfg.switch_interval == 0) {
          h.col(e) = h_hat.col(e);
        }
      }
      logits = sub_forward(cx, obs, h).logits;
    } else {
      logits = flat_forward(cx, obs).logits;
    }
    const Mat logp = cx.log_softmax_cols(logits);
    for (int e = 0; e < E; ++e) {
      const Stream& st = batch.streams[static_cast<std::size_t>(e)];
      const double lp = logp(st.actions[static_cast<std::size_t>(t)], e);
      gap = std::max(gap, std::abs(lp - st.log_prob_old[t]));
    }
  }
  return gap;
}

void PpoUpdater::check_fresh(const TrajectoryBatch& batch,
                             const ParameterVector& params) const {
  const double gap = replay_log_prob_gap(batch, pcfg_, params);
  if (gap > 1e-6) {
    throw std::runtime_error(
        "stale trajectory batch: stored log-probabilities differ from the "
        "current parameters (max gap " +
        std::to_string(gap) + ")");
  }
}

UpdateStats PpoUpdater::update(const TrajectoryBatch& batch,
                               ParameterVector& params, Rng& rng) {
  if (batch.streams.empty() || batch.total_steps() == 0) {
    throw std::invalid_argument("update: empty batch");
  }
  check_fresh(batch, params);
  switch (pcfg_.kind) {
    case PolicyConfig::Kind::kTemple:
      return update_temple(batch, params, rng);
    case PolicyConfig::Kind::kFlat:
      return update_flat_like(batch, params, rng);
    case PolicyConfig::Kind::kTempleFix:
      return update_fix(batch, params, rng);
  }
  throw std::logic_error("unreachable policy kind");
}

UpdateStats PpoUpdater::update_temple(const TrajectoryBatch& batch,
                                      ParameterVector& params, Rng& rng) {
  AdvData adv = step_advantages(batch, tcfg_.gamma, tcfg_.lambda);
  normalize_advantages(adv);
  const std::vector<Span> windows = segment_windows(batch, tcfg_.unroll_length);
  const int d = pcfg_.skill_dim;
  const double eps = tcfg_.clip_epsilon;

  UpdateStats stats;
  stats.windows = static_cast<int>(windows.size());
  std::vector<MbStats> mb_all;

  std::vector<int> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < tcfg_.epochs_per_update; ++epoch) {
    shuffle_indices(order, rng);
    double epoch_vloss = 0.0;
    int epoch_mbs = 0;
    for (std::size_t mb_start = 0; mb_start < order.size();
         mb_start += static_cast<std::size_t>(tcfg_.minibatch_size)) {
      const std::size_t mb_end =
          std::min(order.size(), mb_start + static_cast<std::size_t>(tcfg_.minibatch_size));
      const int B = static_cast<int>(mb_end - mb_start);
      int max_len = 1;
      for (std::size_t i = mb_start; i < mb_end; ++i) {
        max_len = std::max(max_len, windows[static_cast<std::size_t>(order[i])].len);
      }

      ad::Tape tape;
      TapeCtx cx(tape, params);

      // Window carries are constants: truncated BPTT at window boundaries.
      Mat h0(d, B), c0(1, B);
      for (int b = 0; b < B; ++b) {
        const Span& w = windows[static_cast<std::size_t>(order[mb_start + static_cast<std::size_t>(b)])];
        const Stream& st = batch.streams[static_cast<std::size_t>(w.stream)];
        Eigen::VectorXd h;
        double c = 0.0;
        carry_into(st, w.start, h, c);
        h0.col(b) = h;
        c0(0, b) = c;
      }
      ad::Value h_prev = tape.constant(h0);
      ad::Value c_prev = tape.constant(c0);

      ad::Value psum, vsum, esum;
      double total_mask = 0.0;
      MbStats mb;

      for (int j = 0; j < max_len; ++j) {
        Mat obs(batch.streams[0].obs.rows(), B);
        std::vector<int> acts(static_cast<std::size_t>(B), 0);
        Eigen::RowVectorXd mask(B), lp_old(B), a_row(B), r_row(B);
        for (int b = 0; b < B; ++b) {
          const Span& w = windows[static_cast<std::size_t>(order[mb_start + static_cast<std::size_t>(b)])];
          const Stream& st = batch.streams[static_cast<std::size_t>(w.stream)];
          const bool live = j < w.len;
          const int t = w.start + (live ? j : w.len - 1);
          obs.col(b) = st.obs.col(t);
          acts[static_cast<std::size_t>(b)] = live ? st.actions[static_cast<std::size_t>(t)] : 0;
          mask[b] = live ? 1.0 : 0.0;
          lp_old[b] = live ? st.log_prob_old[t] : 0.0;
          a_row[b] = live ? adv.adv[static_cast<std::size_t>(w.stream)][t] : 0.0;
          r_row[b] = live ? adv.ret[static_cast<std::size_t>(w.stream)][t] : 0.0;
        }
        ad::Value obs_v = tape.constant(obs);
        ad::Value h_hat = high_forward(cx, obs_v);
        ad::Value h_cur = cx.blend(h_hat, h_prev, c_prev);
        SubOut<ad::Value> sub = sub_forward(cx, obs_v, h_cur);

        ad::Value logp_all = tape.log_softmax_cols(sub.logits);
        ad::Value lp = tape.gather_rows(logp_all, acts);
        ad::Value ratio = tape.exp(tape.sub(lp, tape.constant(lp_old)));
        ad::Value adv_c = tape.constant(a_row);
        ad::Value surr = tape.min_elem(
            tape.hadamard(ratio, adv_c),
            tape.hadamard(tape.clamp(ratio, 1.0 - eps, 1.0 + eps), adv_c));
        ad::Value p_term = dot_const(cx, surr, mask);
        psum = psum.valid() ? tape.add(psum, p_term) : p_term;

        ad::Value vdiff = tape.sub(sub.value, tape.constant(r_row));
        ad::Value v_term = dot_const(cx, tape.hadamard(vdiff, vdiff), mask);
        vsum = vsum.valid() ? tape.add(vsum, v_term) : v_term;

        ad::Value e_term = dot_const(cx, entropy_row(cx, logp_all), mask);
        esum = esum.valid() ? tape.add(esum, e_term) : e_term;

        const Mat& rv = tape.val(ratio);
        for (int b = 0; b < B; ++b) {
          if (mask[b] > 0.0 && std::abs(rv(0, b) - 1.0) > eps) mb.clip_count += 1.0;
        }
        total_mask += mask.sum();

        h_prev = h_cur;
        c_prev = sub.gate;
      }

      const double inv = 1.0 / total_mask;
      ad::Value loss =
          tape.add(tape.affine_scalar(psum, -inv, 0.0),
                   tape.add(tape.affine_scalar(vsum, tcfg_.value_coef * inv, 0.0),
                            tape.affine_scalar(esum, -tcfg_.entropy_coef * inv, 0.0)));
      finite_or_throw(tape.val(loss)(0, 0), "loss");
      tape.backward(loss);

      const Eigen::VectorXd grad =
          ParameterVector::flatten_mats(cx.collect_grads());
      mb.grad_norm = grad.norm();
      finite_or_throw(mb.grad_norm, "gradient");
      Eigen::VectorXd flat = params.flatten();
      adam_.step(flat, grad, tcfg_.learning_rate);
      params.set_from_flat(flat);

      mb.policy_loss = -tape.val(psum)(0, 0) * inv;
      mb.value_loss = tape.val(vsum)(0, 0) * inv;
      mb.entropy = tape.val(esum)(0, 0) * inv;
      mb.masked_steps = total_mask;
      mb_all.push_back(mb);
      epoch_vloss += mb.value_loss;
      ++epoch_mbs;
    }
    stats.value_loss_per_epoch.push_back(epoch_vloss / std::max(1, epoch_mbs));
  }

  stats.minibatches = static_cast<int>(mb_all.size());
  double steps_total = 0.0;
  for (const MbStats& m : mb_all) {
    stats.policy_loss += m.policy_loss;
    stats.value_loss += m.value_loss;
    stats.entropy += m.entropy;
    stats.grad_norm += m.grad_norm;
    stats.clip_fraction += m.clip_count;
    steps_total += m.masked_steps;
  }
  const double nmb = std::max(1, stats.minibatches);
  stats.policy_loss /= nmb;
  stats.value_loss /= nmb;
  stats.entropy /= nmb;
  stats.grad_norm /= nmb;
  stats.clip_fraction /= std::max(1.0, steps_total);
  return stats;
}

UpdateStats PpoUpdater::update_flat_like(const TrajectoryBatch& batch,
                                         ParameterVector& params, Rng& rng) {
  AdvData adv = step_advantages(batch, tcfg_.gamma, tcfg_.lambda);
  normalize_advantages(adv);

  // One step is one sample; minibatches hold the same number of transitions
  // as the recurrent variant (windows x unroll length).
  std::vector<std::pair<int, int>> steps;
  for (int s = 0; s < static_cast<int>(batch.streams.size()); ++s) {
    for (int t = 0; t < batch.streams[static_cast<std::size_t>(s)].length(); ++t) {
      steps.emplace_back(s, t);
    }
  }
  const int mb_steps = tcfg_.minibatch_size * tcfg_.unroll_length;
  const double eps = tcfg_.clip_epsilon;

  UpdateStats stats;
  stats.windows = static_cast<int>(steps.size());
  std::vector<MbStats> mb_all;
  std::vector<int> order(steps.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < tcfg_.epochs_per_update; ++epoch) {
    shuffle_indices(order, rng);
    double epoch_vloss = 0.0;
    int epoch_mbs = 0;
    for (std::size_t mb_start = 0; mb_start < order.size();
         mb_start += static_cast<std::size_t>(mb_steps)) {
      const std::size_t mb_end =
          std::min(order.size(), mb_start + static_cast<std::size_t>(mb_steps));
      const int B = static_cast<int>(mb_end - mb_start);

      Mat obs(batch.streams[0].obs.rows(), B);
      std::vector<int> acts(static_cast<std::size_t>(B));
      Eigen::RowVectorXd lp_old(B), a_row(B), r_row(B), ones(B);
      for (int b = 0; b < B; ++b) {
        const auto [s, t] = steps[static_cast<std::size_t>(order[mb_start + static_cast<std::size_t>(b)])];
        const Stream& st = batch.streams[static_cast<std::size_t>(s)];
        obs.col(b) = st.obs.col(t);
        acts[static_cast<std::size_t>(b)] = st.actions[static_cast<std::size_t>(t)];
        lp_old[b] = st.log_prob_old[t];
        a_row[b] = adv.adv[static_cast<std::size_t>(s)][t];
        r_row[b] = adv.ret[static_cast<std::size_t>(s)][t];
        ones[b] = 1.0;
      }

      ad::Tape tape;
      TapeCtx cx(tape, params);
      ad::Value obs_v = tape.constant(obs);
      FlatOut<ad::Value> net = flat_forward(cx, obs_v);

      ad::Value logp_all = tape.log_softmax_cols(net.logits);
      ad::Value lp = tape.gather_rows(logp_all, acts);
      ad::Value ratio = tape.exp(tape.sub(lp, tape.constant(lp_old)));
      ad::Value adv_c = tape.constant(a_row);
      ad::Value surr = tape.min_elem(
          tape.hadamard(ratio, adv_c),
          tape.hadamard(tape.clamp(ratio, 1.0 - eps, 1.0 + eps), adv_c));
      ad::Value psum = dot_const(cx, surr, ones);
      ad::Value vdiff = tape.sub(net.value, tape.constant(r_row));
      ad::Value vsum = dot_const(cx, tape.hadamard(vdiff, vdiff), ones);
      ad::Value esum = dot_const(cx, entropy_row(cx, logp_all), ones);

      const double inv = 1.0 / static_cast<double>(B);
      ad::Value loss =
          tape.add(tape.affine_scalar(psum, -inv, 0.0),
                   tape.add(tape.affine_scalar(vsum, tcfg_.value_coef * inv, 0.0),
                            tape.affine_scalar(esum, -tcfg_.entropy_coef * inv, 0.0)));
      finite_or_throw(tape.val(loss)(0, 0), "loss");
      tape.backward(loss);

      const Eigen::VectorXd grad =
          ParameterVector::flatten_mats(cx.collect_grads());
      MbStats mb;
      mb.grad_norm = grad.norm();
      finite_or_throw(mb.grad_norm, "gradient");
      Eigen::VectorXd flat = params.flatten();
      adam_.step(flat, grad, tcfg_.learning_rate);
      params.set_from_flat(flat);

      const Mat& rv = tape.val(ratio);
      for (int b = 0; b < B; ++b) {
        if (std::abs(rv(0, b) - 1.0) > eps) mb.clip_count += 1.0;
      }
      mb.policy_loss = -tape.val(psum)(0, 0) * inv;
      mb.value_loss = tape.val(vsum)(0, 0) * inv;
      mb.entropy = tape.val(esum)(0, 0) * inv;
      mb.masked_steps = B;
      mb_all.push_back(mb);
      epoch_vloss += mb.value_loss;
      ++epoch_mbs;
    }
    stats.value_loss_per_epoch.push_back(epoch_vloss / std::max(1, epoch_mbs));
  }

  stats.minibatches = static_cast<int>(mb_all.size());
  double steps_total = 0.0;
  for (const MbStats& m : mb_all) {
    stats.policy_loss += m.policy_loss;
    stats.value_loss += m.value_loss;
    stats.entropy += m.entropy;
    stats.grad_norm += m.grad_norm;
    stats.clip_fraction += m.clip_count;
    steps_total += m.masked_steps;
  }
  const double nmb = std::max(1, stats.minibatches);
  stats.policy_loss /= nmb;
  stats.value_loss /= nmb;
  stats.entropy /= nmb;
  stats.grad_norm /= nmb;
  stats.clip_fraction /= std::max(1.0, steps_total);
  return stats;
}

UpdateStats PpoUpdater::update_fix(const TrajectoryBatch& batch,
                                   ParameterVector& params, Rng& rng) {
  const int k = pcfg_.switch_interval;
  const double eps = tcfg_.clip_epsilon;

  // Sub-policy side: ordinary step-level PPO with h as a fixed input.
  AdvData adv_sub = step_advantages(batch, tcfg_.gamma, tcfg_.lambda);
  normalize_advantages(adv_sub);

  // High-level side: one decision per interval, reward summed over it.
  const std::vector<Span> intervals = segment_intervals(batch, k);
  std::vector<std::vector<int>> stream_intervals(batch.streams.size());
  for (int i = 0; i < static_cast<int>(intervals.size()); ++i) {
    stream_intervals[static_cast<std::size_t>(intervals[static_cast<std::size_t>(i)].stream)]
        .push_back(i);
  }
  Eigen::VectorXd adv_high(intervals.size()), ret_high(intervals.size());
  for (int s = 0; s < static_cast<int>(batch.streams.size()); ++s) {
    const Stream& st = batch.streams[static_cast<std::size_t>(s)];
    const auto& ids = stream_intervals[static_cast<std::size_t>(s)];
    const auto n = static_cast<Eigen::Index>(ids.size());
    Eigen::VectorXd rewards(n), values(n), discounts(n);
    std::vector<std::uint8_t> dones(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Span& sp = intervals[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])];
      rewards[i] = st.rewards.segment(sp.start, sp.len).sum();
      values[i] = st.value_high_old[sp.start];
      discounts[i] = std::pow(tcfg_.gamma, sp.len);
      for (int t = sp.start; t < sp.start + sp.len; ++t) {
        if (st.dones[static_cast<std::size_t>(t)]) dones[static_cast<std::size_t>(i)] = 1;
      }
    }
    const GaeResult g = compute_gae_discounted(rewards, values, dones,
                                               st.bootstrap_value_high, discounts,
                                               tcfg_.lambda);
    for (Eigen::Index i = 0; i < n; ++i) {
      adv_high[ids[static_cast<std::size_t>(i)]] = g.advantages[i];
      ret_high[ids[static_cast<std::size_t>(i)]] = g.returns[i];
    }
  }
  {
    const double mean = adv_high.size() > 0 ? adv_high.mean() : 0.0;
    const double stddev = adv_high.size() > 0
        ? std::sqrt((adv_high.array() - mean).square().sum() /
                    static_cast<double>(adv_high.size()))
        : 1.0;
    adv_high = (adv_high.array() - mean) / (stddev + 1e-8);
  }

  std::vector<std::pair<int, int>> steps;
  for (int s = 0; s < static_cast<int>(batch.streams.size()); ++s) {
    for (int t = 0; t < batch.streams[static_cast<std::size_t>(s)].length(); ++t) {
      steps.emplace_back(s, t);
    }
  }
  const int mb_steps = tcfg_.minibatch_size * tcfg_.unroll_length;

  UpdateStats stats;
  stats.windows = static_cast<int>(intervals.size());
  std::vector<MbStats> mb_sub, mb_high;

  std::vector<int> step_order(steps.size());
  for (std::size_t i = 0; i < step_order.size(); ++i) step_order[i] = static_cast<int>(i);
  std::vector<int> ivl_order(intervals.size());
  for (std::size_t i = 0; i < ivl_order.size(); ++i) ivl_order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < tcfg_.epochs_per_update; ++epoch) {
    // --- sub-policy epoch ---
    shuffle_indices(step_order, rng);
    double epoch_vloss = 0.0;
    int epoch_mbs = 0;
    for (std::size_t mb_start = 0; mb_start < step_order.size();
         mb_start += static_cast<std::size_t>(mb_steps)) {
      const std::size_t mb_end =
          std::min(step_order.size(), mb_start + static_cast<std::size_t>(mb_steps));
      const int B = static_cast<int>(mb_end - mb_start);

      Mat obs(batch.streams[0].obs.rows(), B);
      Mat h_in(pcfg_.skill_dim, B);
      std::vector<int> acts(static_cast<std::size_t>(B));
      Eigen::RowVectorXd lp_old(B), a_row(B), r_row(B), ones(B);
      for (int b = 0; b < B; ++b) {
        const auto [s, t] =
            steps[static_cast<std::size_t>(step_order[mb_start + static_cast<std::size_t>(b)])];
        const Stream& st = batch.streams[static_cast<std::size_t>(s)];
        obs.col(b) = st.obs.col(t);
        h_in.col(b) = st.h_used.col(t);
        acts[static_cast<std::size_t>(b)] = st.actions[static_cast<std::size_t>(t)];
        lp_old[b] = st.log_prob_old[t];
        a_row[b] = adv_sub.adv[static_cast<std::size_t>(s)][t];
        r_row[b] = adv_sub.ret[static_cast<std::size_t>(s)][t];
        ones[b] = 1.0;
      }

      ad::Tape tape;
      TapeCtx cx(tape, params, "high.");
      SubOut<ad::Value> sub =
          sub_forward(cx, tape.constant(obs), tape.constant(h_in));
      ad::Value logp_all = tape.log_softmax_cols(sub.logits);
      ad::Value lp = tape.gather_rows(logp_all, acts);
      ad::Value ratio = tape.exp(tape.sub(lp, tape.constant(lp_old)));
      ad::Value adv_c = tape.constant(a_row);
      ad::Value surr = tape.min_elem(
          tape.hadamard(ratio, adv_c),
          tape.hadamard(tape.clamp(ratio, 1.0 - eps, 1.0 + eps), adv_c));
      ad::Value psum = dot_const(cx, surr, ones);
      ad::Value vdiff = tape.sub(sub.value, tape.constant(r_row));
      ad::Value vsum = dot_const(cx, tape.hadamard(vdiff, vdiff), ones);
      ad::Value esum = dot_const(cx, entropy_row(cx, logp_all), ones);

      const double inv = 1.0 / static_cast<double>(B);
      ad::Value loss =
          tape.add(tape.affine_scalar(psum, -inv, 0.0),
                   tape.add(tape.affine_scalar(vsum, tcfg_.value_coef * inv, 0.0),
                            tape.affine_scalar(esum, -tcfg_.entropy_coef * inv, 0.0)));
      finite_or_throw(tape.val(loss)(0, 0), "loss");
      tape.backward(loss);
      const Eigen::VectorXd grad =
          ParameterVector::flatten_mats(cx.collect_grads());
      MbStats mb;
      mb.grad_norm = grad.norm();
      finite_or_throw(mb.grad_norm, "gradient");
      Eigen::VectorXd flat = params.flatten();
      adam_.step(flat, grad, tcfg_.learning_rate);
      params.set_from_flat(flat);

      const Mat& rv = tape.val(ratio);
      for (int b = 0; b < B; ++b) {
        if (std::abs(rv(0, b) - 1.0) > eps) mb.clip_count += 1.0;
      }
      mb.policy_loss = -tape.val(psum)(0, 0) * inv;
      mb.value_loss = tape.val(vsum)(0, 0) * inv;
      mb.entropy = tape.val(esum)(0, 0) * inv;
      mb.masked_steps = B;
      mb_sub.push_back(mb);
      epoch_vloss += mb.value_loss;
      ++epoch_mbs;
    }
    stats.value_loss_per_epoch.push_back(epoch_vloss / std::max(1, epoch_mbs));

    // --- high-level epoch: gradients reach phi through h_hat only ---
    shuffle_indices(ivl_order, rng);
    for (std::size_t mb_start = 0; mb_start < ivl_order.size();
         mb_start += static_cast<std::size_t>(tcfg_.minibatch_size)) {
      const std::size_t mb_end = std::min(
          ivl_order.size(), mb_start + static_cast<std::size_t>(tcfg_.minibatch_size));
      const int B = static_cast<int>(mb_end - mb_start);
      int max_len = 1;
      for (std::size_t i = mb_start; i < mb_end; ++i) {
        max_len = std::max(max_len, intervals[static_cast<std::size_t>(ivl_order[i])].len);
      }

      Mat tick_obs(batch.streams[0].obs.rows(), B);
      Eigen::RowVectorXd a_high(B), r_high(B), ones(B);
      for (int b = 0; b < B; ++b) {
        const int ii = ivl_order[mb_start + static_cast<std::size_t>(b)];
        const Span& sp = intervals[static_cast<std::size_t>(ii)];
        const Stream& st = batch.streams[static_cast<std::size_t>(sp.stream)];
        tick_obs.col(b) = st.obs.col(sp.start);
        a_high[b] = adv_high[ii];
        r_high[b] = ret_high[ii];
        ones[b] = 1.0;
      }

      ad::Tape tape;
      TapeCtx cx(tape, params, "sub.");
      ad::Value tick_v = tape.constant(tick_obs);
      ad::Value trunk = high_trunk(cx, tick_v);
      ad::Value pre = tape.affine(cx.p("high.out.W"), trunk, cx.p("high.out.b"));
      ad::Value lp_h = tape.log_softmax_cols(pre);
      ad::Value h_hat = tape.exp(lp_h);

      ad::Value psum;
      double total_mask = 0.0;
      MbStats mb;
      for (int o = 0; o < max_len; ++o) {
        Mat obs(batch.streams[0].obs.rows(), B);
        std::vector<int> acts(static_cast<std::size_t>(B), 0);
        Eigen::RowVectorXd mask(B), lp_old(B), a_row(B);
        for (int b = 0; b < B; ++b) {
          const int ii = ivl_order[mb_start + static_cast<std::size_t>(b)];
          const Span& sp = intervals[static_cast<std::size_t>(ii)];
          const Stream& st = batch.streams[static_cast<std::size_t>(sp.stream)];
          const bool live = o < sp.len;
          const int t = sp.start + (live ? o : sp.len - 1);
          obs.col(b) = st.obs.col(t);
          acts[static_cast<std::size_t>(b)] = live ? st.actions[static_cast<std::size_t>(t)] : 0;
          mask[b] = live ? 1.0 : 0.0;
          lp_old[b] = live ? st.log_prob_old[t] : 0.0;
          a_row[b] = live ? a_high[b] : 0.0;
        }
        SubOut<ad::Value> sub = sub_forward(cx, tape.constant(obs), h_hat);
        ad::Value logp_all = tape.log_softmax_cols(sub.logits);
        ad::Value lp = tape.gather_rows(logp_all, acts);
        ad::Value ratio = tape.exp(tape.sub(lp, tape.constant(lp_old)));
        ad::Value adv_c = tape.constant(a_row);
        ad::Value surr = tape.min_elem(
            tape.hadamard(ratio, adv_c),
            tape.hadamard(tape.clamp(ratio, 1.0 - eps, 1.0 + eps), adv_c));
        ad::Value p_term = dot_const(cx, surr, mask);
        psum = psum.valid() ? tape.add(psum, p_term) : p_term;

        const Mat& rv = tape.val(ratio);
        for (int b = 0; b < B; ++b) {
          if (mask[b] > 0.0 && std::abs(rv(0, b) - 1.0) > eps) mb.clip_count += 1.0;
        }
        total_mask += mask.sum();
      }

      ad::Value vh = tape.affine(cx.p("high.value.W"), trunk, cx.p("high.value.b"));
      ad::Value vdiff = tape.sub(vh, tape.constant(r_high));
      ad::Value vsum = dot_const(cx, tape.hadamard(vdiff, vdiff), ones);
      ad::Value esum = dot_const(
          cx, tape.affine_scalar(tape.colsum(tape.hadamard(h_hat, lp_h)), -1.0, 0.0),
          ones);

      const double inv_steps = 1.0 / total_mask;
      const double inv_b = 1.0 / static_cast<double>(B);
      ad::Value loss = tape.add(
          tape.affine_scalar(psum, -inv_steps, 0.0),
          tape.add(tape.affine_scalar(vsum, tcfg_.value_coef * inv_b, 0.0),
                   tape.affine_scalar(esum, -tcfg_.entropy_coef * inv_b, 0.0)));
      finite_or_throw(tape.val(loss)(0, 0), "loss");
      tape.backward(loss);
      const Eigen::VectorXd grad =
          ParameterVector::flatten_mats(cx.collect_grads());
      mb.grad_norm = grad.norm();
      finite_or_throw(mb.grad_norm, "gradient");
      Eigen::VectorXd flat = params.flatten();
      adam_high_.step(flat, grad, tcfg_.learning_rate);
      params.set_from_flat(flat);

      mb.policy_loss = -tape.val(psum)(0, 0) * inv_steps;
      mb.value_loss = tape.val(vsum)(0, 0) * inv_b;
      mb.entropy = tape.val(esum)(0, 0) * inv_b;
      mb.masked_steps = total_mask;
      mb_high.push_back(mb);
    }
  }

  stats.minibatches = static_cast<int>(mb_sub.size() + mb_high.size());
  double steps_total = 0.0;
  for (const MbStats& m : mb_sub) {
    stats.policy_loss += m.policy_loss;
    stats.value_loss += m.value_loss;
    stats.entropy += m.entropy;
    stats.grad_norm += m.grad_norm;
    stats.clip_fraction += m.clip_count;
    steps_total += m.masked_steps;
  }
  for (const MbStats& m : mb_high) {
    stats.policy_loss += m.policy_loss;
    stats.value_loss += m.value_loss;
    stats.grad_norm += m.grad_norm;
  }
  stats.policy_loss /= std::max<std::size_t>(1, mb_sub.size() + mb_high.size());
  stats.value_loss /= std::max<std::size_t>(1, mb_sub.size() + mb_high.size());
  stats.entropy /= std::max<std::size_t>(1, mb_sub.size());
  stats.grad_norm /= std::max<std::size_t>(1, mb_sub.size() + mb_high.size());
  stats.clip_fraction /= std::max(1.0, steps_total);
  return stats;
}

}  // namespace temple
