#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpc/error.hpp"

namespace tpc {

// Dense row-major matrix with an optional gradient buffer. Rank is at most
// two: vectors are 1 x n, scalars 1 x 1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;  // values, size rows*cols
  std::vector<double> g;  // gradient, empty until first accumulation

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  static Tensor row(std::vector<double> vals) {
    Tensor t;
    t.rows = 1;
    t.cols = static_cast<int>(vals.size());
    t.v = std::move(vals);
    return t;
  }
  static Tensor scalar(double x) { return row({x}); }

  int size() const { return rows * cols; }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
  void zero_grad() { g.assign(v.size(), 0.0); }
  std::vector<int> shape() const { return {rows, cols}; }
};

// Ordered registry of named parameters. Defines the layout of flattened
// gradient buffers used by the optimizer and by data-parallel training.
class ParamSet {
 public:
  void add(const std::string& name, Tensor* t);
  int count() const { return static_cast<int>(items_.size()); }
  size_t size_scalars() const { return total_; }
  Tensor* tensor(int i) const { return items_[i].second; }
  const std::string& name(int i) const { return items_[i].first; }
  size_t offset(int i) const { return offsets_[i]; }
  // -1 when the tensor is not registered.
  int index_of(const Tensor* t) const;

  // Copies every parameter's current gradient into / out of a flat buffer.
  void grads_to_flat(std::span<double> out) const;
  void values_to_flat(std::span<double> out) const;
  void values_from_flat(std::span<const double> in);
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor*>> items_;
  std::vector<size_t> offsets_;
  std::unordered_map<const Tensor*, int> index_;
  size_t total_ = 0;
};

enum class OpKind {
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kConcatCols,
  kConcatRows,
  kRelu,
  kSigmoid,
  kSquare,
  kScale,
  kSumReduce,
  kMeanReduce,
  kSoftmaxXent,
  kSigmoidXent,
  kGatherRows,
  kSliceCols,
  kReshape,
  kTranspose,
  kSegmentSum,
  kSegmentOuter,
  kParam,
  kInput,
};

const char* op_name(OpKind k);

enum class Precision { kDouble, kSingle };

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Records one forward pass and replays it in reverse for gradients. Nodes are
// appended in execution order, so the record is topologically sorted by
// construction. A tape is confined to a single thread.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::kDouble);

  // Tracked leaf: receives dLoss/dLeaf on backward(). The tensor must outlive
  // the tape and its values must not change while the tape is alive.
  Var param(Tensor& t);
  // Untracked leaf (view). Same lifetime contract, no gradient.
  Var input(const Tensor& t);
  // Untracked leaf owning its storage.
  Var input(int rows, int cols, std::vector<double> vals);

  // Generic dispatch over the primitive op kinds. softmax_xent takes
  // (logits, one-hot targets), sigmoid_xent takes (logits, targets).
  Var forward_op(OpKind kind, const std::vector<Var>& operands);

  Var matmul(Var a, Var b);
  // b may equal a's shape, be a broadcast row (1 x n) or a scalar (1 x 1).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  // b may equal a's shape, be a broadcast column (m x 1) or a scalar.
  Var mul(Var a, Var b);
  Var concat_cols(const std::vector<Var>& xs);
  Var concat_rows(const std::vector<Var>& xs);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var square(Var a);
  Var scale(Var a, double c);
  Var sum_reduce(Var a);
  Var mean_reduce(Var a);
  // Per-row cross entropy of softmax(logits) against integer classes; n x 1.
  Var softmax_xent(Var logits, const std::vector<int>& classes);
  // Elementwise binary cross entropy on logits; same shape as input.
  Var sigmoid_xent(Var logits, const std::vector<double>& targets);
  Var gather_rows(Var a, const std::vector<int>& idx);
  Var slice_cols(Var a, int c0, int c1);
  Var reshape(Var a, int r, int c);
  Var transpose(Var a);
  // offsets has size segments+1; segment s covers rows [offsets[s], offsets[s+1]).
  Var segment_sum(Var a, const std::vector<int>& offsets);
  // out(s, a*B+b) = sum_{i in segment s} m(i,a) * o(i,b)
  Var segment_outer(Var m, Var o, const std::vector<int>& offsets);

  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  std::span<const double> value(Var v) const;
  double scalar_value(Var v) const;

  // Accumulates dLoss/dParam into every tracked leaf's Tensor::g. Leaves not
  // reachable from the loss keep a zero gradient.
  void backward(Var loss);
  // Same traversal, but leaf gradients are added into `sink` at each
  // parameter's ParamSet offset. Never touches the shared tensors, so
  // independent tapes may run this concurrently on private sinks.
  void backward_flat(Var loss, const ParamSet& ps, std::span<double> sink);

  size_t node_count() const { return nodes_.size(); }
  Precision precision() const { return precision_; }

 private:
  struct Node {
    OpKind op;
    int rows = 0, cols = 0;
    std::vector<int> srcs;       // operand node ids
    std::vector<double> buf;     // owned values (computed nodes, owned inputs)
    const double* data = nullptr;
    std::vector<int> iaux;       // indices / offsets / classes / slice bounds
    std::vector<double> daux;    // saved activations, targets, scale factors
    Tensor* leaf = nullptr;      // tracked leaf backlink
    bool needs_grad = false;
  };

  Var push(Node n);
  Var unary(OpKind op, Var a);
  void check_finite(const Node& n) const;
  void round_single(std::vector<double>& buf) const;
  const Node& at(Var v) const;
  void run_backward(Var loss, std::vector<std::vector<double>>& grads);

  std::vector<Node> nodes_;
  Precision precision_;
};

}  // namespace tpc
