#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace temple::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Lightweight handle into a Tape. Valid until the tape is reset.
struct Value {
  int idx = -1;
  Tape* tape = nullptr;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Mat& val() const;
  const Mat& grad() const;
};

// Define-by-run reverse-mode tape over dense float64 matrices. Nodes are
// appended in topological order, so backward is a single reverse sweep.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  // Leaves. Parameter leaves participate in gradient accumulation; constants
  // are skipped during backward unless a parameter sits below them.
  Value constant(Mat v);
  Value param(Mat v, int slot = -1);

  Value matmul(Value a, Value b);
  // W*x + b with b broadcast over columns (b is n x 1).
  Value affine(Value w, Value x, Value b);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value hadamard(Value a, Value b);
  // y = a*x + c elementwise with scalar constants.
  Value affine_scalar(Value x, double a, double c);
  // y[i,j] = x[i,j] * r[0,j] with r a 1 x N row.
  Value colscale(Value x, Value r);
  Value tanh(Value x);
  Value sigmoid(Value x);
  Value exp(Value x);
  Value softmax_cols(Value x);
  Value log_softmax_cols(Value x);
  // out 1 x N, out[j] = x[rows[j], j].
  Value gather_rows(Value x, std::vector<int> rows);
  Value concat_rows(Value a, Value b);
  Value colsum(Value x);
  Value sum_all(Value x);
  Value min_elem(Value a, Value b);
  Value clamp(Value x, double lo, double hi);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once. loss must be 1x1.
  // Calling twice without reset() is an accumulation bug and throws.
  void backward(Value loss);

  void reset();

  const Mat& val(Value v) const { return node(v).value; }
  const Mat& grad(Value v) const;
  std::size_t size() const { return nodes_.size(); }

  // Gradients of all parameter leaves, keyed by the slot id passed to param().
  // Slots never touched by the loss keep zero gradients of the right shape.
  std::vector<std::pair<int, Mat>> param_grads() const;

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatMul,
    kAffine,
    kAdd,
    kSub,
    kHadamard,
    kAffineScalar,
    kColScale,
    kTanh,
    kSigmoid,
    kExp,
    kSoftmaxCols,
    kLogSoftmaxCols,
    kGatherRows,
    kConcatRows,
    kColSum,
    kSumAll,
    kMinElem,
    kClamp,
  };

  struct Node {
    Mat value;
    Mat grad;
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    int c = -1;
    double s0 = 0.0;
    double s1 = 0.0;
    std::vector<int> rows;
    int param_slot = -1;
    bool needs_grad = false;
    bool grad_ready = false;
  };

  const Node& node(Value v) const;
  Node& node(Value v);
  Value push(Node n);
  Value binary(Op op, Value a, Value b);
  Value unary(Op op, Value a);
  Mat& g(int i);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace temple::ad
