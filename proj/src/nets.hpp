#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "params.hpp"
#include "rng.hpp"

namespace temple {

// The same forward code serves rollouts and training. Rollouts run it on raw
// Eigen matrices; updates run it on the tape. Both contexts expose identical
// operation names, and inputs are batched column-wise.

struct PlainCtx {
  using M = Mat;
  const ParameterVector& params;

  explicit PlainCtx(const ParameterVector& p) : params(p) {}

  const M& p(const std::string& name) const { return params[name]; }
  M constant(Mat m) const { return m; }
  M affine(const M& w, const M& x, const M& b) const {
    return (w * x).colwise() + b.col(0);
  }
  M tanh(const M& x) const { return x.array().tanh().matrix(); }
  M sigmoid(const M& x) const {
    return x.unaryExpr([](double v) {
      if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
      const double e = std::exp(v);
      return e / (1.0 + e);
    });
  }
  M softmax_cols(const M& x) const {
    M y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double m = x.col(j).maxCoeff();
      y.col(j) = (x.col(j).array() - m).exp();
      y.col(j) /= y.col(j).sum();
    }
    return y;
  }
  M log_softmax_cols(const M& x) const {
    M y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double m = x.col(j).maxCoeff();
      const double lse = m + std::log((x.col(j).array() - m).exp().sum());
      y.col(j) = x.col(j).array() - lse;
    }
    return y;
  }
  M concat_rows(const M& a, const M& b) const {
    M y(a.rows() + b.rows(), a.cols());
    y.topRows(a.rows()) = a;
    y.bottomRows(b.rows()) = b;
    return y;
  }
  M blend(const M& h_hat, const M& h_prev, const M& c_row) const;
};

// h = c .* h_hat + (1 - c) .* h_prev with c broadcast down each column. The
// single place this arithmetic lives, so logged traces can be recomputed
// bit-exactly.
inline Mat blend_columns(const Mat& h_hat, const Mat& h_prev, const Mat& c_row) {
  return (h_hat.array().rowwise() * c_row.row(0).array() +
          h_prev.array().rowwise() * (1.0 - c_row.row(0).array()))
      .matrix();
}

inline Mat PlainCtx::blend(const Mat& h_hat, const Mat& h_prev,
                           const Mat& c_row) const {
  return blend_columns(h_hat, h_prev, c_row);
}

struct TapeCtx {
  using M = ad::Value;
  ad::Tape& tape;
  const ParameterVector& params;
  std::vector<ad::Value> bound;
  // Slots whose name starts with this prefix are bound as constants, so no
  // gradient reaches them (TEMPLE-fix trains its two levels separately).
  std::string freeze_prefix;

  TapeCtx(ad::Tape& t, const ParameterVector& p, std::string freeze = {})
      : tape(t),
        params(p),
        bound(static_cast<std::size_t>(p.slot_count())),
        freeze_prefix(std::move(freeze)) {}

  M p(const std::string& name) {
    const int i = params.index_of(name);
    ad::Value& v = bound[static_cast<std::size_t>(i)];
    if (!v.valid()) {
      const bool frozen =
          !freeze_prefix.empty() && name.rfind(freeze_prefix, 0) == 0;
      v = frozen ? tape.constant(params.slot(i).value)
                 : tape.param(params.slot(i).value, i);
    }
    return v;
  }
  M constant(Mat m) { return tape.constant(std::move(m)); }
  M affine(M w, M x, M b) { return tape.affine(w, x, b); }
  M tanh(M x) { return tape.tanh(x); }
  M sigmoid(M x) { return tape.sigmoid(x); }
  M softmax_cols(M x) { return tape.softmax_cols(x); }
  M log_softmax_cols(M x) { return tape.log_softmax_cols(x); }
  M concat_rows(M a, M b) { return tape.concat_rows(a, b); }
  M blend(M h_hat, M h_prev, M c_row) {
    return tape.add(tape.colscale(h_hat, c_row),
                    tape.colscale(h_prev, tape.affine_scalar(c_row, -1.0, 1.0)));
  }

  // Gradients accumulated on bound slots, shaped like the parameter vector.
  std::vector<Mat> collect_grads() const {
    std::vector<Mat> grads = params.zeros_like();
    for (const auto& [slot, g] : tape.param_grads()) {
      grads[static_cast<std::size_t>(slot)] += g;
    }
    return grads;
  }
};

struct PolicyConfig {
  enum class Kind { kTemple, kTempleFix, kFlat };
  Kind kind = Kind::kTemple;
  int skill_dim = 4;        // d, dimension of the internal action
  int hidden_dim = 64;      // both TEMPLE trunks
  int flat_hidden_dim = 96; // sized to keep the flat baseline within 10% of
                            // TEMPLE's parameter count at d = 4
  int switch_interval = 10; // k, TEMPLE-fix refresh period

  bool recurrent() const { return kind != Kind::kFlat; }
  void validate() const {
    if (skill_dim < 1) throw std::invalid_argument("skill_dim must be >= 1");
    if (hidden_dim < 1 || flat_hidden_dim < 1) {
      throw std::invalid_argument("hidden sizes must be >= 1");
    }
    if (switch_interval < 1) {
      throw std::invalid_argument("switch_interval must be >= 1");
    }
  }
};

const char* policy_kind_name(PolicyConfig::Kind kind);
PolicyConfig::Kind policy_kind_from_name(const std::string& name);

ParameterVector build_params(const PolicyConfig& cfg, int obs_dim, Rng& rng);

template <class C>
typename C::M high_trunk(C& cx, const typename C::M& obs) {
  auto z1 = cx.tanh(cx.affine(cx.p("high.l1.W"), obs, cx.p("high.l1.b")));
  return cx.tanh(cx.affine(cx.p("high.l2.W"), z1, cx.p("high.l2.b")));
}

// h_hat: softmax over d skills, one distribution per column.
template <class C>
typename C::M high_forward(C& cx, const typename C::M& obs) {
  auto z2 = high_trunk(cx, obs);
  return cx.softmax_cols(cx.affine(cx.p("high.out.W"), z2, cx.p("high.out.b")));
}

template <class M>
struct SubOut {
  M logits;  // 4 x N
  M gate;    // 1 x N, sigmoid
  M value;   // 1 x N
};

template <class C>
SubOut<typename C::M> sub_forward(C& cx, const typename C::M& obs,
                                  const typename C::M& h) {
  auto x = cx.concat_rows(obs, h);
  auto z1 = cx.tanh(cx.affine(cx.p("sub.l1.W"), x, cx.p("sub.l1.b")));
  auto z2 = cx.tanh(cx.affine(cx.p("sub.l2.W"), z1, cx.p("sub.l2.b")));
  return SubOut<typename C::M>{
      cx.affine(cx.p("sub.act.W"), z2, cx.p("sub.act.b")),
      cx.sigmoid(cx.affine(cx.p("sub.gate.W"), z2, cx.p("sub.gate.b"))),
      cx.affine(cx.p("sub.value.W"), z2, cx.p("sub.value.b"))};
}

template <class M>
struct FlatOut {
  M logits;  // 4 x N
  M value;   // 1 x N
};

template <class C>
FlatOut<typename C::M> flat_forward(C& cx, const typename C::M& obs) {
  auto z1 = cx.tanh(cx.affine(cx.p("flat.l1.W"), obs, cx.p("flat.l1.b")));
  auto z2 = cx.tanh(cx.affine(cx.p("flat.l2.W"), z1, cx.p("flat.l2.b")));
  return FlatOut<typename C::M>{
      cx.affine(cx.p("flat.act.W"), z2, cx.p("flat.act.b")),
      cx.affine(cx.p("flat.value.W"), z2, cx.p("flat.value.b"))};
}

// Critic for the separately-trained high level of TEMPLE-fix.
template <class C>
typename C::M high_value(C& cx, const typename C::M& obs) {
  auto z2 = high_trunk(cx, obs);
  return cx.affine(cx.p("high.value.W"), z2, cx.p("high.value.b"));
}

}  // namespace temple
