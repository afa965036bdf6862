#include "autodiff.hpp"

#include <cmath>

namespace temple::ad {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Mat softmax_cols_impl(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).maxCoeff();
    y.col(j) = (x.col(j).array() - m).exp();
    y.col(j) /= y.col(j).sum();
  }
  return y;
}

Mat log_softmax_cols_impl(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).maxCoeff();
    const double lse = m + std::log((x.col(j).array() - m).exp().sum());
    y.col(j) = x.col(j).array() - lse;
  }
  return y;
}

}  // namespace

const Mat& Value::val() const { return tape->val(*this); }
const Mat& Value::grad() const { return tape->grad(*this); }

const Tape::Node& Tape::node(Value v) const {
  if (v.tape != this || v.idx < 0 || v.idx >= static_cast<int>(nodes_.size())) {
    throw std::logic_error("autodiff: value does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.idx)];
}

Tape::Node& Tape::node(Value v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

Value Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1, this};
}

Value Tape::constant(Mat v) {
  Node n;
  n.value = std::move(v);
  return push(std::move(n));
}

Value Tape::param(Mat v, int slot) {
  Node n;
  n.value = std::move(v);
  n.param_slot = slot;
  n.needs_grad = true;
  return push(std::move(n));
}

Value Tape::binary(Op op, Value a, Value b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  Node n;
  n.op = op;
  n.a = a.idx;
  n.b = b.idx;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  switch (op) {
    case Op::kMatMul:
      if (na.value.cols() != nb.value.rows()) {
        throw std::invalid_argument("autodiff: matmul dimension mismatch");
      }
      n.value = na.value * nb.value;
      break;
    case Op::kAdd:
      if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols()) {
        throw std::invalid_argument("autodiff: add shape mismatch");
      }
      n.value = na.value + nb.value;
      break;
    case Op::kSub:
      if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols()) {
        throw std::invalid_argument("autodiff: sub shape mismatch");
      }
      n.value = na.value - nb.value;
      break;
    case Op::kHadamard:
      if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols()) {
        throw std::invalid_argument("autodiff: hadamard shape mismatch");
      }
      n.value = na.value.cwiseProduct(nb.value);
      break;
    case Op::kColScale:
      if (nb.value.rows() != 1 || na.value.cols() != nb.value.cols()) {
        throw std::invalid_argument("autodiff: colscale expects a 1 x N row");
      }
      n.value = (na.value.array().rowwise() * nb.value.row(0).array()).matrix();
      break;
    case Op::kMinElem:
      if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols()) {
        throw std::invalid_argument("autodiff: min shape mismatch");
      }
      n.value = na.value.cwiseMin(nb.value);
      break;
    case Op::kConcatRows: {
      if (na.value.cols() != nb.value.cols()) {
        throw std::invalid_argument("autodiff: concat column mismatch");
      }
      Mat v(na.value.rows() + nb.value.rows(), na.value.cols());
      v.topRows(na.value.rows()) = na.value;
      v.bottomRows(nb.value.rows()) = nb.value;
      n.value = std::move(v);
      break;
    }
    default:
      throw std::logic_error("autodiff: bad binary op");
  }
  return push(std::move(n));
}

Value Tape::unary(Op op, Value a) {
  const Node& na = node(a);
  Node n;
  n.op = op;
  n.a = a.idx;
  n.needs_grad = na.needs_grad;
  switch (op) {
    case Op::kTanh:
      n.value = na.value.array().tanh();
      break;
    case Op::kSigmoid:
      n.value = na.value.unaryExpr([](double x) { return stable_sigmoid(x); });
      break;
    case Op::kExp:
      n.value = na.value.array().exp();
      break;
    case Op::kSoftmaxCols:
      n.value = softmax_cols_impl(na.value);
      break;
    case Op::kLogSoftmaxCols:
      n.value = log_softmax_cols_impl(na.value);
      break;
    case Op::kColSum:
      n.value = na.value.colwise().sum();
      break;
    case Op::kSumAll: {
      Mat v(1, 1);
      v(0, 0) = na.value.sum();
      n.value = std::move(v);
      break;
    }
    default:
      throw std::logic_error("autodiff: bad unary op");
  }
  return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) { return binary(Op::kMatMul, a, b); }
Value Tape::add(Value a, Value b) { return binary(Op::kAdd, a, b); }
Value Tape::sub(Value a, Value b) { return binary(Op::kSub, a, b); }
Value Tape::hadamard(Value a, Value b) { return binary(Op::kHadamard, a, b); }
Value Tape::colscale(Value x, Value r) { return binary(Op::kColScale, x, r); }
Value Tape::min_elem(Value a, Value b) { return binary(Op::kMinElem, a, b); }
Value Tape::concat_rows(Value a, Value b) { return binary(Op::kConcatRows, a, b); }
Value Tape::tanh(Value x) { return unary(Op::kTanh, x); }
Value Tape::sigmoid(Value x) { return unary(Op::kSigmoid, x); }
Value Tape::exp(Value x) { return unary(Op::kExp, x); }
Value Tape::softmax_cols(Value x) { return unary(Op::kSoftmaxCols, x); }
Value Tape::log_softmax_cols(Value x) { return unary(Op::kLogSoftmaxCols, x); }
Value Tape::colsum(Value x) { return unary(Op::kColSum, x); }
Value Tape::sum_all(Value x) { return unary(Op::kSumAll, x); }

Value Tape::affine(Value w, Value x, Value b) {
  const Node& nw = node(w);
  const Node& nx = node(x);
  const Node& nb = node(b);
  if (nw.value.cols() != nx.value.rows()) {
    throw std::invalid_argument("autodiff: affine weight/input mismatch");
  }
  if (nb.value.cols() != 1 || nb.value.rows() != nw.value.rows()) {
    throw std::invalid_argument("autodiff: affine bias shape mismatch");
  }
  Node n;
  n.op = Op::kAffine;
  n.a = w.idx;
  n.b = x.idx;
  n.c = b.idx;
  n.needs_grad = nw.needs_grad || nx.needs_grad || nb.needs_grad;
  n.value = (nw.value * nx.value).colwise() + nb.value.col(0);
  return push(std::move(n));
}

Value Tape::affine_scalar(Value x, double a, double c) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kAffineScalar;
  n.a = x.idx;
  n.s0 = a;
  n.s1 = c;
  n.needs_grad = nx.needs_grad;
  n.value = (nx.value.array() * a + c).matrix();
  return push(std::move(n));
}

Value Tape::gather_rows(Value x, std::vector<int> rows) {
  const Node& nx = node(x);
  if (static_cast<Eigen::Index>(rows.size()) != nx.value.cols()) {
    throw std::invalid_argument("autodiff: gather needs one row index per column");
  }
  Node n;
  n.op = Op::kGatherRows;
  n.a = x.idx;
  n.needs_grad = nx.needs_grad;
  n.value.resize(1, nx.value.cols());
  for (Eigen::Index j = 0; j < nx.value.cols(); ++j) {
    const int r = rows[static_cast<std::size_t>(j)];
    if (r < 0 || r >= nx.value.rows()) {
      throw std::invalid_argument("autodiff: gather row out of range");
    }
    n.value(0, j) = nx.value(r, j);
  }
  n.rows = std::move(rows);
  return push(std::move(n));
}

Value Tape::clamp(Value x, double lo, double hi) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::kClamp;
  n.a = x.idx;
  n.s0 = lo;
  n.s1 = hi;
  n.needs_grad = nx.needs_grad;
  n.value = nx.value.cwiseMax(lo).cwiseMin(hi);
  return push(std::move(n));
}

Mat& Tape::g(int i) {
  Node& n = nodes_[static_cast<std::size_t>(i)];
  if (!n.grad_ready) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

const Mat& Tape::grad(Value v) const {
  const Node& n = node(v);
  if (!n.grad_ready) {
    throw std::logic_error("autodiff: gradient not computed for this node");
  }
  return n.grad;
}

void Tape::backward(Value loss) {
  if (backward_done_) {
    throw std::logic_error("autodiff: backward called twice without reset");
  }
  const Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw std::invalid_argument("autodiff: backward requires a scalar loss");
  }
  backward_done_ = true;

  // Make sure every parameter leaf reports a (possibly zero) gradient.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].param_slot >= 0) g(static_cast<int>(i));
  }

  g(loss.idx)(0, 0) = 1.0;

  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.grad_ready || n.op == Op::kLeaf) continue;
    const Mat& go = n.grad;
    const Node& pa = nodes_[static_cast<std::size_t>(n.a)];
    switch (n.op) {
      case Op::kMatMul: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        if (pa.needs_grad) g(n.a).noalias() += go * pb.value.transpose();
        if (pb.needs_grad) g(n.b).noalias() += pa.value.transpose() * go;
        break;
      }
      case Op::kAffine: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        const Node& pc = nodes_[static_cast<std::size_t>(n.c)];
        if (pa.needs_grad) g(n.a).noalias() += go * pb.value.transpose();
        if (pb.needs_grad) g(n.b).noalias() += pa.value.transpose() * go;
        if (pc.needs_grad) g(n.c).col(0) += go.rowwise().sum();
        break;
      }
      case Op::kAdd: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        if (pa.needs_grad) g(n.a) += go;
        if (pb.needs_grad) g(n.b) += go;
        break;
      }
      case Op::kSub: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        if (pa.needs_grad) g(n.a) += go;
        if (pb.needs_grad) g(n.b) -= go;
        break;
      }
      case Op::kHadamard: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        if (pa.needs_grad) g(n.a) += go.cwiseProduct(pb.value);
        if (pb.needs_grad) g(n.b) += go.cwiseProduct(pa.value);
        break;
      }
      case Op::kAffineScalar:
        if (pa.needs_grad) g(n.a) += n.s0 * go;
        break;
      case Op::kColScale: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        if (pa.needs_grad) {
          g(n.a) += (go.array().rowwise() * pb.value.row(0).array()).matrix();
        }
        if (pb.needs_grad) {
          g(n.b) += go.cwiseProduct(pa.value).colwise().sum();
        }
        break;
      }
      case Op::kTanh:
        if (pa.needs_grad) {
          g(n.a).array() += go.array() * (1.0 - n.value.array().square());
        }
        break;
      case Op::kSigmoid:
        if (pa.needs_grad) {
          g(n.a).array() += go.array() * n.value.array() * (1.0 - n.value.array());
        }
        break;
      case Op::kExp:
        if (pa.needs_grad) g(n.a).array() += go.array() * n.value.array();
        break;
      case Op::kSoftmaxCols:
        if (pa.needs_grad) {
          const Eigen::RowVectorXd dot =
              go.cwiseProduct(n.value).colwise().sum();
          g(n.a) += n.value.cwiseProduct(go.rowwise() - dot);
        }
        break;
      case Op::kLogSoftmaxCols:
        if (pa.needs_grad) {
          const Eigen::RowVectorXd s = go.colwise().sum();
          g(n.a) += go - (n.value.array().exp().rowwise() * s.array()).matrix();
        }
        break;
      case Op::kGatherRows:
        if (pa.needs_grad) {
          Mat& ga = g(n.a);
          for (Eigen::Index j = 0; j < n.value.cols(); ++j) {
            ga(n.rows[static_cast<std::size_t>(j)], j) += go(0, j);
          }
        }
        break;
      case Op::kConcatRows: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        if (pa.needs_grad) g(n.a) += go.topRows(pa.value.rows());
        if (pb.needs_grad) g(n.b) += go.bottomRows(pb.value.rows());
        break;
      }
      case Op::kColSum:
        if (pa.needs_grad) {
          g(n.a).rowwise() += go.row(0);
        }
        break;
      case Op::kSumAll:
        if (pa.needs_grad) g(n.a).array() += go(0, 0);
        break;
      case Op::kMinElem: {
        const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
        const auto mask =
            (pa.value.array() <= pb.value.array()).cast<double>();
        if (pa.needs_grad) g(n.a).array() += go.array() * mask;
        if (pb.needs_grad) g(n.b).array() += go.array() * (1.0 - mask);
        break;
      }
      case Op::kClamp:
        if (pa.needs_grad) {
          const auto inside = (pa.value.array() > n.s0 && pa.value.array() < n.s1)
                                  .cast<double>();
          g(n.a).array() += go.array() * inside;
        }
        break;
      case Op::kLeaf:
        break;
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

std::vector<std::pair<int, Mat>> Tape::param_grads() const {
  std::vector<std::pair<int, Mat>> out;
  for (const Node& n : nodes_) {
    if (n.param_slot < 0) continue;
    if (n.grad_ready) {
      out.emplace_back(n.param_slot, n.grad);
    } else {
      out.emplace_back(n.param_slot, Mat::Zero(n.value.rows(), n.value.cols()));
    }
  }
  return out;
}

}  // namespace temple::ad
