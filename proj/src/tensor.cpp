#include "tpc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tpc {

void ParamSet::add(const std::string& name, Tensor* t) {
  if (index_.count(t)) throw Error("ParamSet: tensor registered twice: " + name);
  index_[t] = static_cast<int>(items_.size());
  items_.emplace_back(name, t);
  offsets_.push_back(total_);
  total_ += static_cast<size_t>(t->size());
}

int ParamSet::index_of(const Tensor* t) const {
  auto it = index_.find(t);
  return it == index_.end() ? -1 : it->second;
}

void ParamSet::grads_to_flat(std::span<double> out) const {
  if (out.size() != total_) throw Error("ParamSet: flat buffer size mismatch");
  for (int i = 0; i < count(); ++i) {
    const Tensor* t = items_[i].second;
    const size_t off = offsets_[i];
    if (t->g.empty()) {
      std::fill_n(out.begin() + off, t->size(), 0.0);
    } else {
      std::copy(t->g.begin(), t->g.end(), out.begin() + off);
    }
  }
}

void ParamSet::values_to_flat(std::span<double> out) const {
  if (out.size() != total_) throw Error("ParamSet: flat buffer size mismatch");
  for (int i = 0; i < count(); ++i)
    std::copy(items_[i].second->v.begin(), items_[i].second->v.end(),
              out.begin() + offsets_[i]);
}

void ParamSet::values_from_flat(std::span<const double> in) {
  if (in.size() != total_) throw Error("ParamSet: flat buffer size mismatch");
  for (int i = 0; i < count(); ++i)
    std::copy(in.begin() + offsets_[i],
              in.begin() + offsets_[i] + items_[i].second->size(),
              items_[i].second->v.begin());
}

void ParamSet::zero_grads() {
  for (auto& [name, t] : items_) t->zero_grad();
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kConcatCols: return "concat_last_axis";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSquare: return "square";
    case OpKind::kScale: return "scale";
    case OpKind::kSumReduce: return "sum_reduce";
    case OpKind::kMeanReduce: return "mean_reduce";
    case OpKind::kSoftmaxXent: return "softmax_xent";
    case OpKind::kSigmoidXent: return "sigmoid_xent";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSegmentSum: return "segment_sum";
    case OpKind::kSegmentOuter: return "segment_outer";
    case OpKind::kParam: return "param";
    case OpKind::kInput: return "input";
  }
  return "?";
}

Tape::Tape(Precision precision) : precision_(precision) {}

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw Error("Tape: invalid node handle");
  return nodes_[v.id];
}

void Tape::check_finite(const Node& n) const {
  const double* p = n.data;
  const size_t sz = static_cast<size_t>(n.rows) * n.cols;
  for (size_t i = 0; i < sz; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op_name(n.op));
    }
  }
}

void Tape::round_single(std::vector<double>& buf) const {
  if (precision_ != Precision::kSingle) return;
  for (double& x : buf) x = static_cast<double>(static_cast<float>(x));
}

Var Tape::push(Node n) {
  if (!n.data) n.data = n.buf.data();
  check_finite(n);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Tensor& t) {
  Node n;
  n.op = OpKind::kParam;
  n.rows = t.rows;
  n.cols = t.cols;
  n.data = t.v.data();
  n.leaf = &t;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::input(const Tensor& t) {
  Node n;
  n.op = OpKind::kInput;
  n.rows = t.rows;
  n.cols = t.cols;
  n.data = t.v.data();
  return push(std::move(n));
}

Var Tape::input(int rows, int cols, std::vector<double> vals) {
  if (static_cast<size_t>(rows) * cols != vals.size())
    throw ShapeError("input", {{rows, cols}}, "value count mismatch");
  Node n;
  n.op = OpKind::kInput;
  n.rows = rows;
  n.cols = cols;
  n.buf = std::move(vals);
  return push(std::move(n));
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = at(v);
  return {n.data, static_cast<size_t>(n.rows) * n.cols};
}

double Tape::scalar_value(Var v) const {
  const Node& n = at(v);
  if (n.rows * n.cols != 1) throw ShapeError("scalar_value", {{n.rows, n.cols}});
  return n.data[0];
}

Var Tape::matmul(Var va, Var vb) {
  const Node& a = at(va);
  const Node& b = at(vb);
  if (a.cols != b.rows)
    throw ShapeError("matmul", {{a.rows, a.cols}, {b.rows, b.cols}});
  Node n;
  n.op = OpKind::kMatmul;
  n.rows = a.rows;
  n.cols = b.cols;
  n.srcs = {va.id, vb.id};
  n.needs_grad = a.needs_grad || b.needs_grad;
  n.buf.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
  const int m = a.rows, k = a.cols, c = b.cols;
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data + static_cast<size_t>(i) * k;
    double* crow = n.buf.data() + static_cast<size_t>(i) * c;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b.data + static_cast<size_t>(kk) * c;
      for (int j = 0; j < c; ++j) crow[j] += av * brow[j];
    }
  }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::add(Var va, Var vb) {
  const Node& a = at(va);
  const Node& b = at(vb);
  const bool same = a.rows == b.rows && a.cols == b.cols;
  const bool brow = b.rows == 1 && b.cols == a.cols;
  const bool bscalar = b.rows == 1 && b.cols == 1;
  if (!same && !brow && !bscalar)
    throw ShapeError("add", {{a.rows, a.cols}, {b.rows, b.cols}});
  Node n;
  n.op = OpKind::kAdd;
  n.rows = a.rows;
  n.cols = a.cols;
  n.srcs = {va.id, vb.id};
  n.needs_grad = a.needs_grad || b.needs_grad;
  n.buf.resize(static_cast<size_t>(a.rows) * a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) {
      const double bv = same ? b.data[static_cast<size_t>(i) * a.cols + j]
                             : (bscalar ? b.data[0] : b.data[j]);
      n.buf[static_cast<size_t>(i) * a.cols + j] =
          a.data[static_cast<size_t>(i) * a.cols + j] + bv;
    }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::sub(Var va, Var vb) {
  const Node& a = at(va);
  const Node& b = at(vb);
  const bool same = a.rows == b.rows && a.cols == b.cols;
  const bool brow = b.rows == 1 && b.cols == a.cols;
  const bool bscalar = b.rows == 1 && b.cols == 1;
  if (!same && !brow && !bscalar)
    throw ShapeError("sub", {{a.rows, a.cols}, {b.rows, b.cols}});
  Node n;
  n.op = OpKind::kSub;
  n.rows = a.rows;
  n.cols = a.cols;
  n.srcs = {va.id, vb.id};
  n.needs_grad = a.needs_grad || b.needs_grad;
  n.buf.resize(static_cast<size_t>(a.rows) * a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) {
      const double bv = same ? b.data[static_cast<size_t>(i) * a.cols + j]
                             : (bscalar ? b.data[0] : b.data[j]);
      n.buf[static_cast<size_t>(i) * a.cols + j] =
          a.data[static_cast<size_t>(i) * a.cols + j] - bv;
    }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::mul(Var va, Var vb) {
  const Node& a = at(va);
  const Node& b = at(vb);
  const bool same = a.rows == b.rows && a.cols == b.cols;
  const bool bcol = b.cols == 1 && b.rows == a.rows;
  const bool bscalar = b.rows == 1 && b.cols == 1;
  if (!same && !bcol && !bscalar)
    throw ShapeError("mul", {{a.rows, a.cols}, {b.rows, b.cols}});
  Node n;
  n.op = OpKind::kMul;
  n.rows = a.rows;
  n.cols = a.cols;
  n.srcs = {va.id, vb.id};
  n.needs_grad = a.needs_grad || b.needs_grad;
  n.buf.resize(static_cast<size_t>(a.rows) * a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) {
      const double bv = same ? b.data[static_cast<size_t>(i) * a.cols + j]
                             : (bscalar ? b.data[0] : b.data[i]);
      n.buf[static_cast<size_t>(i) * a.cols + j] =
          a.data[static_cast<size_t>(i) * a.cols + j] * bv;
    }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("concat_last_axis: no operands");
  int rows = at(xs[0]).rows;
  int cols = 0;
  bool needs = false;
  for (Var v : xs) {
    const Node& n = at(v);
    if (n.rows != rows)
      throw ShapeError("concat_last_axis", {{rows, at(xs[0]).cols}, {n.rows, n.cols}},
                       "all-but-last dims must agree");
    cols += n.cols;
    needs = needs || n.needs_grad;
  }
  Node n;
  n.op = OpKind::kConcatCols;
  n.rows = rows;
  n.cols = cols;
  n.needs_grad = needs;
  for (Var v : xs) n.srcs.push_back(v.id);
  n.buf.resize(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    int c0 = 0;
    for (Var v : xs) {
      const Node& src = at(v);
      std::memcpy(n.buf.data() + static_cast<size_t>(i) * cols + c0,
                  src.data + static_cast<size_t>(i) * src.cols,
                  sizeof(double) * src.cols);
      c0 += src.cols;
    }
  }
  return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("concat_rows: no operands");
  int cols = at(xs[0]).cols;
  int rows = 0;
  bool needs = false;
  for (Var v : xs) {
    const Node& n = at(v);
    if (n.cols != cols)
      throw ShapeError("concat_rows", {{at(xs[0]).rows, cols}, {n.rows, n.cols}});
    rows += n.rows;
    needs = needs || n.needs_grad;
  }
  Node n;
  n.op = OpKind::kConcatRows;
  n.rows = rows;
  n.cols = cols;
  n.needs_grad = needs;
  for (Var v : xs) n.srcs.push_back(v.id);
  n.buf.resize(static_cast<size_t>(rows) * cols);
  size_t off = 0;
  for (Var v : xs) {
    const Node& src = at(v);
    const size_t sz = static_cast<size_t>(src.rows) * cols;
    std::memcpy(n.buf.data() + off, src.data, sizeof(double) * sz);
    off += sz;
  }
  return push(std::move(n));
}

Var Tape::unary(OpKind op, Var va) {
  const Node& a = at(va);
  Node n;
  n.op = op;
  n.rows = a.rows;
  n.cols = a.cols;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  const size_t sz = static_cast<size_t>(a.rows) * a.cols;
  n.buf.resize(sz);
  switch (op) {
    case OpKind::kRelu:
      for (size_t i = 0; i < sz; ++i) n.buf[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
      break;
    case OpKind::kSigmoid:
      for (size_t i = 0; i < sz; ++i) {
        const double z = a.data[i];
        if (z >= 0) {
          n.buf[i] = 1.0 / (1.0 + std::exp(-z));
        } else {
          const double e = std::exp(z);
          n.buf[i] = e / (1.0 + e);
        }
      }
      break;
    case OpKind::kSquare:
      for (size_t i = 0; i < sz; ++i) n.buf[i] = a.data[i] * a.data[i];
      break;
    default:
      throw Error("unary: bad op");
  }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::relu(Var a) { return unary(OpKind::kRelu, a); }
Var Tape::sigmoid(Var a) { return unary(OpKind::kSigmoid, a); }
Var Tape::square(Var a) { return unary(OpKind::kSquare, a); }

Var Tape::scale(Var va, double c) {
  const Node& a = at(va);
  Node n;
  n.op = OpKind::kScale;
  n.rows = a.rows;
  n.cols = a.cols;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  n.daux = {c};
  const size_t sz = static_cast<size_t>(a.rows) * a.cols;
  n.buf.resize(sz);
  for (size_t i = 0; i < sz; ++i) n.buf[i] = a.data[i] * c;
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::sum_reduce(Var va) {
  const Node& a = at(va);
  Node n;
  n.op = OpKind::kSumReduce;
  n.rows = 1;
  n.cols = 1;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  double s = 0.0;
  const size_t sz = static_cast<size_t>(a.rows) * a.cols;
  for (size_t i = 0; i < sz; ++i) s += a.data[i];
  n.buf = {s};
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::mean_reduce(Var va) {
  const Node& a = at(va);
  if (a.rows * a.cols == 0) throw ShapeError("mean_reduce", {{a.rows, a.cols}});
  Node n;
  n.op = OpKind::kMeanReduce;
  n.rows = 1;
  n.cols = 1;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  double s = 0.0;
  const size_t sz = static_cast<size_t>(a.rows) * a.cols;
  for (size_t i = 0; i < sz; ++i) s += a.data[i];
  n.buf = {s / static_cast<double>(sz)};
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::softmax_xent(Var vlogits, const std::vector<int>& classes) {
  const Node& a = at(vlogits);
  if (static_cast<int>(classes.size()) != a.rows)
    throw ShapeError("softmax_xent", {{a.rows, a.cols}},
                     "one target class per row required");
  Node n;
  n.op = OpKind::kSoftmaxXent;
  n.rows = a.rows;
  n.cols = 1;
  n.srcs = {vlogits.id};
  n.needs_grad = a.needs_grad;
  n.iaux = classes;
  n.buf.resize(a.rows);
  n.daux.resize(static_cast<size_t>(a.rows) * a.cols);  // softmax probs
  for (int i = 0; i < a.rows; ++i) {
    const int cls = classes[i];
    if (cls < 0 || cls >= a.cols)
      throw Error("softmax_xent: class index out of range");
    const double* row = a.data + static_cast<size_t>(i) * a.cols;
    double mx = row[0];
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < a.cols; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    n.buf[i] = lse - row[cls];
    for (int j = 0; j < a.cols; ++j)
      n.daux[static_cast<size_t>(i) * a.cols + j] = std::exp(row[j] - lse);
  }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::sigmoid_xent(Var vlogits, const std::vector<double>& targets) {
  const Node& a = at(vlogits);
  const size_t sz = static_cast<size_t>(a.rows) * a.cols;
  if (targets.size() != sz)
    throw ShapeError("sigmoid_xent", {{a.rows, a.cols}}, "target count mismatch");
  Node n;
  n.op = OpKind::kSigmoidXent;
  n.rows = a.rows;
  n.cols = a.cols;
  n.srcs = {vlogits.id};
  n.needs_grad = a.needs_grad;
  n.buf.resize(sz);
  n.daux.resize(2 * sz);  // [sigmoid(z) ; targets]
  for (size_t i = 0; i < sz; ++i) {
    const double z = a.data[i];
    const double y = targets[i];
    // max(z,0) - z*y + log(1+exp(-|z|))
    n.buf[i] = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                            : std::exp(z) / (1.0 + std::exp(z));
    n.daux[i] = s;
    n.daux[sz + i] = y;
  }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::gather_rows(Var va, const std::vector<int>& idx) {
  const Node& a = at(va);
  for (int i : idx)
    if (i < 0 || i >= a.rows) throw Error("gather_rows: row index out of range");
  Node n;
  n.op = OpKind::kGatherRows;
  n.rows = static_cast<int>(idx.size());
  n.cols = a.cols;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  n.iaux = idx;
  n.buf.resize(static_cast<size_t>(n.rows) * n.cols);
  for (int i = 0; i < n.rows; ++i)
    std::memcpy(n.buf.data() + static_cast<size_t>(i) * n.cols,
                a.data + static_cast<size_t>(idx[i]) * a.cols,
                sizeof(double) * n.cols);
  return push(std::move(n));
}

Var Tape::slice_cols(Var va, int c0, int c1) {
  const Node& a = at(va);
  if (c0 < 0 || c1 > a.cols || c0 >= c1)
    throw ShapeError("slice_cols", {{a.rows, a.cols}},
                     "bad column range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ")");
  Node n;
  n.op = OpKind::kSliceCols;
  n.rows = a.rows;
  n.cols = c1 - c0;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  n.iaux = {c0, c1};
  n.buf.resize(static_cast<size_t>(n.rows) * n.cols);
  for (int i = 0; i < n.rows; ++i)
    std::memcpy(n.buf.data() + static_cast<size_t>(i) * n.cols,
                a.data + static_cast<size_t>(i) * a.cols + c0,
                sizeof(double) * n.cols);
  return push(std::move(n));
}

Var Tape::reshape(Var va, int r, int c) {
  const Node& a = at(va);
  if (r * c != a.rows * a.cols)
    throw ShapeError("reshape", {{a.rows, a.cols}, {r, c}}, "element count differs");
  Node n;
  n.op = OpKind::kReshape;
  n.rows = r;
  n.cols = c;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  n.data = a.data;  // values are shared; row-major layout is unchanged
  return push(std::move(n));
}

Var Tape::transpose(Var va) {
  const Node& a = at(va);
  Node n;
  n.op = OpKind::kTranspose;
  n.rows = a.cols;
  n.cols = a.rows;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  n.buf.resize(static_cast<size_t>(a.rows) * a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j)
      n.buf[static_cast<size_t>(j) * a.rows + i] =
          a.data[static_cast<size_t>(i) * a.cols + j];
  return push(std::move(n));
}

Var Tape::segment_sum(Var va, const std::vector<int>& offsets) {
  const Node& a = at(va);
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != a.rows)
    throw Error("segment_sum: offsets must start at 0 and end at row count");
  Node n;
  n.op = OpKind::kSegmentSum;
  n.rows = static_cast<int>(offsets.size()) - 1;
  n.cols = a.cols;
  n.srcs = {va.id};
  n.needs_grad = a.needs_grad;
  n.iaux = offsets;
  n.buf.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
  for (int s = 0; s < n.rows; ++s) {
    double* out = n.buf.data() + static_cast<size_t>(s) * n.cols;
    for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
      const double* row = a.data + static_cast<size_t>(i) * a.cols;
      for (int j = 0; j < n.cols; ++j) out[j] += row[j];
    }
  }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::segment_outer(Var vm, Var vo, const std::vector<int>& offsets) {
  const Node& m = at(vm);
  const Node& o = at(vo);
  if (m.rows != o.rows)
    throw ShapeError("segment_outer", {{m.rows, m.cols}, {o.rows, o.cols}});
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != m.rows)
    throw Error("segment_outer: offsets must start at 0 and end at row count");
  Node n;
  n.op = OpKind::kSegmentOuter;
  n.rows = static_cast<int>(offsets.size()) - 1;
  n.cols = m.cols * o.cols;
  n.srcs = {vm.id, vo.id};
  n.needs_grad = m.needs_grad || o.needs_grad;
  n.iaux = offsets;
  n.buf.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
  const int A = m.cols, B = o.cols;
  for (int s = 0; s < n.rows; ++s) {
    double* out = n.buf.data() + static_cast<size_t>(s) * n.cols;
    for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
      const double* mrow = m.data + static_cast<size_t>(i) * A;
      const double* orow = o.data + static_cast<size_t>(i) * B;
      for (int a = 0; a < A; ++a) {
        const double mv = mrow[a];
        double* slot = out + static_cast<size_t>(a) * B;
        for (int b = 0; b < B; ++b) slot[b] += mv * orow[b];
      }
    }
  }
  round_single(n.buf);
  return push(std::move(n));
}

Var Tape::forward_op(OpKind kind, const std::vector<Var>& operands) {
  auto need = [&](size_t k) {
    if (operands.size() != k)
      throw Error(std::string(op_name(kind)) + ": expected " + std::to_string(k) +
                  " operands, got " + std::to_string(operands.size()));
  };
  switch (kind) {
    case OpKind::kMatmul: need(2); return matmul(operands[0], operands[1]);
    case OpKind::kAdd: need(2); return add(operands[0], operands[1]);
    case OpKind::kSub: need(2); return sub(operands[0], operands[1]);
    case OpKind::kMul: need(2); return mul(operands[0], operands[1]);
    case OpKind::kConcatCols: return concat_cols(operands);
    case OpKind::kConcatRows: return concat_rows(operands);
    case OpKind::kRelu: need(1); return relu(operands[0]);
    case OpKind::kSigmoid: need(1); return sigmoid(operands[0]);
    case OpKind::kSquare: need(1); return square(operands[0]);
    case OpKind::kSumReduce: need(1); return sum_reduce(operands[0]);
    case OpKind::kMeanReduce: need(1); return mean_reduce(operands[0]);
    case OpKind::kSoftmaxXent: {
      need(2);
      // Second operand carries one-hot targets.
      const Node& t = at(operands[1]);
      const Node& l = at(operands[0]);
      if (t.rows != l.rows || t.cols != l.cols)
        throw ShapeError("softmax_xent", {{l.rows, l.cols}, {t.rows, t.cols}});
      std::vector<int> classes(t.rows, -1);
      for (int i = 0; i < t.rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < t.cols; ++j) {
          const double x = t.data[static_cast<size_t>(i) * t.cols + j];
          sum += x;
          if (x == 1.0) classes[i] = j;
        }
        if (classes[i] < 0 || sum != 1.0)
          throw Error("softmax_xent: targets must be one-hot rows");
      }
      return softmax_xent(operands[0], classes);
    }
    case OpKind::kSigmoidXent: {
      need(2);
      const Node& t = at(operands[1]);
      const Node& l = at(operands[0]);
      if (t.rows != l.rows || t.cols != l.cols)
        throw ShapeError("sigmoid_xent", {{l.rows, l.cols}, {t.rows, t.cols}});
      std::vector<double> targets(t.data, t.data + static_cast<size_t>(t.rows) * t.cols);
      return sigmoid_xent(operands[0], targets);
    }
    default:
      throw Error(std::string("forward_op: unsupported kind ") + op_name(kind));
  }
}

void Tape::run_backward(Var loss, std::vector<std::vector<double>>& grads) {
  const Node& ln = at(loss);
  if (ln.rows != 1 || ln.cols != 1)
    throw ShapeError("backward", {{ln.rows, ln.cols}}, "loss must be scalar");
  if (!std::isfinite(ln.data[0])) throw NumericError("backward: loss is not finite");

  grads.assign(nodes_.size(), {});
  std::vector<char> active(nodes_.size(), 0);
  grads[loss.id] = {1.0};
  active[loss.id] = 1;

  auto grad_of = [&](int id) -> std::vector<double>& {
    auto& g = grads[id];
    if (g.empty())
      g.assign(static_cast<size_t>(nodes_[id].rows) * nodes_[id].cols, 0.0);
    return g;
  };

  for (int id = loss.id; id >= 0; --id) {
    if (!active[id] || !nodes_[id].needs_grad) continue;
    Node& n = nodes_[id];
    const std::vector<double>& gout = grads[id];
    auto touch = [&](int src) {
      if (nodes_[src].needs_grad) active[src] = 1;
    };
    switch (n.op) {
      case OpKind::kParam:
      case OpKind::kInput:
        break;
      case OpKind::kMatmul: {
        const Node& a = nodes_[n.srcs[0]];
        const Node& b = nodes_[n.srcs[1]];
        const int m = a.rows, k = a.cols, c = b.cols;
        if (a.needs_grad) {
          auto& ga = grad_of(n.srcs[0]);
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              const double* brow = b.data + static_cast<size_t>(kk) * c;
              const double* grow = gout.data() + static_cast<size_t>(i) * c;
              double s = 0.0;
              for (int j = 0; j < c; ++j) s += grow[j] * brow[j];
              ga[static_cast<size_t>(i) * k + kk] += s;
            }
          touch(n.srcs[0]);
        }
        if (b.needs_grad) {
          auto& gb = grad_of(n.srcs[1]);
          for (int i = 0; i < m; ++i) {
            const double* arow = a.data + static_cast<size_t>(i) * k;
            const double* grow = gout.data() + static_cast<size_t>(i) * c;
            for (int kk = 0; kk < k; ++kk) {
              const double av = arow[kk];
              double* gbrow = gb.data() + static_cast<size_t>(kk) * c;
              for (int j = 0; j < c; ++j) gbrow[j] += av * grow[j];
            }
          }
          touch(n.srcs[1]);
        }
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub: {
        const Node& a = nodes_[n.srcs[0]];
        const Node& b = nodes_[n.srcs[1]];
        const double sign = n.op == OpKind::kSub ? -1.0 : 1.0;
        if (a.needs_grad) {
          auto& ga = grad_of(n.srcs[0]);
          for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
          touch(n.srcs[0]);
        }
        if (b.needs_grad) {
          auto& gb = grad_of(n.srcs[1]);
          if (b.rows == n.rows && b.cols == n.cols) {
            for (size_t i = 0; i < gout.size(); ++i) gb[i] += sign * gout[i];
          } else if (b.rows == 1 && b.cols == n.cols) {
            for (int i = 0; i < n.rows; ++i)
              for (int j = 0; j < n.cols; ++j)
                gb[j] += sign * gout[static_cast<size_t>(i) * n.cols + j];
          } else {  // scalar
            double s = 0.0;
            for (double gv : gout) s += gv;
            gb[0] += sign * s;
          }
          touch(n.srcs[1]);
        }
        break;
      }
      case OpKind::kMul: {
        const Node& a = nodes_[n.srcs[0]];
        const Node& b = nodes_[n.srcs[1]];
        const bool same = b.rows == n.rows && b.cols == n.cols;
        const bool bscalar = b.rows == 1 && b.cols == 1;
        if (a.needs_grad) {
          auto& ga = grad_of(n.srcs[0]);
          for (int i = 0; i < n.rows; ++i)
            for (int j = 0; j < n.cols; ++j) {
              const size_t x = static_cast<size_t>(i) * n.cols + j;
              const double bv = same ? b.data[x] : (bscalar ? b.data[0] : b.data[i]);
              ga[x] += gout[x] * bv;
            }
          touch(n.srcs[0]);
        }
        if (b.needs_grad) {
          auto& gb = grad_of(n.srcs[1]);
          for (int i = 0; i < n.rows; ++i)
            for (int j = 0; j < n.cols; ++j) {
              const size_t x = static_cast<size_t>(i) * n.cols + j;
              const double av = a.data[x];
              if (same) {
                gb[x] += gout[x] * av;
              } else if (bscalar) {
                gb[0] += gout[x] * av;
              } else {
                gb[i] += gout[x] * av;
              }
            }
          touch(n.srcs[1]);
        }
        break;
      }
      case OpKind::kConcatCols: {
        int c0 = 0;
        for (int sid : n.srcs) {
          const Node& src = nodes_[sid];
          if (src.needs_grad) {
            auto& gs = grad_of(sid);
            for (int i = 0; i < n.rows; ++i)
              for (int j = 0; j < src.cols; ++j)
                gs[static_cast<size_t>(i) * src.cols + j] +=
                    gout[static_cast<size_t>(i) * n.cols + c0 + j];
            touch(sid);
          }
          c0 += src.cols;
        }
        break;
      }
      case OpKind::kConcatRows: {
        size_t off = 0;
        for (int sid : n.srcs) {
          const Node& src = nodes_[sid];
          const size_t sz = static_cast<size_t>(src.rows) * n.cols;
          if (src.needs_grad) {
            auto& gs = grad_of(sid);
            for (size_t i = 0; i < sz; ++i) gs[i] += gout[off + i];
            touch(sid);
          }
          off += sz;
        }
        break;
      }
      case OpKind::kRelu: {
        const Node& a = nodes_[n.srcs[0]];
        auto& ga = grad_of(n.srcs[0]);
        for (size_t i = 0; i < gout.size(); ++i)
          if (a.data[i] > 0.0) ga[i] += gout[i];
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSigmoid: {
        auto& ga = grad_of(n.srcs[0]);
        for (size_t i = 0; i < gout.size(); ++i) {
          const double s = n.data[i];
          ga[i] += gout[i] * s * (1.0 - s);
        }
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSquare: {
        const Node& a = nodes_[n.srcs[0]];
        auto& ga = grad_of(n.srcs[0]);
        for (size_t i = 0; i < gout.size(); ++i)
          ga[i] += gout[i] * 2.0 * a.data[i];
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kScale: {
        auto& ga = grad_of(n.srcs[0]);
        const double c = n.daux[0];
        for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * c;
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSumReduce: {
        auto& ga = grad_of(n.srcs[0]);
        for (double& gv : ga) gv += gout[0];
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kMeanReduce: {
        auto& ga = grad_of(n.srcs[0]);
        const double c = gout[0] / static_cast<double>(ga.size());
        for (double& gv : ga) gv += c;
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSoftmaxXent: {
        const Node& a = nodes_[n.srcs[0]];
        auto& ga = grad_of(n.srcs[0]);
        for (int i = 0; i < a.rows; ++i) {
          const double gi = gout[i];
          const int cls = n.iaux[i];
          for (int j = 0; j < a.cols; ++j) {
            const size_t x = static_cast<size_t>(i) * a.cols + j;
            ga[x] += gi * (n.daux[x] - (j == cls ? 1.0 : 0.0));
          }
        }
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSigmoidXent: {
        auto& ga = grad_of(n.srcs[0]);
        const size_t sz = gout.size();
        for (size_t i = 0; i < sz; ++i)
          ga[i] += gout[i] * (n.daux[i] - n.daux[sz + i]);
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kGatherRows: {
        auto& ga = grad_of(n.srcs[0]);
        for (int i = 0; i < n.rows; ++i) {
          const int src_row = n.iaux[i];
          for (int j = 0; j < n.cols; ++j)
            ga[static_cast<size_t>(src_row) * n.cols + j] +=
                gout[static_cast<size_t>(i) * n.cols + j];
        }
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSliceCols: {
        const Node& a = nodes_[n.srcs[0]];
        auto& ga = grad_of(n.srcs[0]);
        const int c0 = n.iaux[0];
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            ga[static_cast<size_t>(i) * a.cols + c0 + j] +=
                gout[static_cast<size_t>(i) * n.cols + j];
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kReshape: {
        auto& ga = grad_of(n.srcs[0]);
        for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kTranspose: {
        auto& ga = grad_of(n.srcs[0]);
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            ga[static_cast<size_t>(j) * n.rows + i] +=
                gout[static_cast<size_t>(i) * n.cols + j];
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSegmentSum: {
        auto& ga = grad_of(n.srcs[0]);
        for (int s = 0; s < n.rows; ++s) {
          const double* grow = gout.data() + static_cast<size_t>(s) * n.cols;
          for (int i = n.iaux[s]; i < n.iaux[s + 1]; ++i) {
            double* garow = ga.data() + static_cast<size_t>(i) * n.cols;
            for (int j = 0; j < n.cols; ++j) garow[j] += grow[j];
          }
        }
        touch(n.srcs[0]);
        break;
      }
      case OpKind::kSegmentOuter: {
        const Node& m = nodes_[n.srcs[0]];
        const Node& o = nodes_[n.srcs[1]];
        const int A = m.cols, B = o.cols;
        const bool gm = m.needs_grad, go = o.needs_grad;
        auto* gmv = gm ? &grad_of(n.srcs[0]) : nullptr;
        auto* gov = go ? &grad_of(n.srcs[1]) : nullptr;
        for (int s = 0; s < n.rows; ++s) {
          const double* grow = gout.data() + static_cast<size_t>(s) * n.cols;
          for (int i = n.iaux[s]; i < n.iaux[s + 1]; ++i) {
            const double* mrow = m.data + static_cast<size_t>(i) * A;
            const double* orow = o.data + static_cast<size_t>(i) * B;
            for (int a = 0; a < A; ++a) {
              const double* gslot = grow + static_cast<size_t>(a) * B;
              if (gm) {
                double s2 = 0.0;
                for (int b = 0; b < B; ++b) s2 += gslot[b] * orow[b];
                (*gmv)[static_cast<size_t>(i) * A + a] += s2;
              }
              if (go) {
                const double mv = mrow[a];
                double* goro = gov->data() + static_cast<size_t>(i) * B;
                for (int b = 0; b < B; ++b) goro[b] += mv * gslot[b];
              }
            }
          }
        }
        if (gm) touch(n.srcs[0]);
        if (go) touch(n.srcs[1]);
        break;
      }
    }
  }
}

void Tape::backward(Var loss) {
  std::vector<std::vector<double>> grads;
  // Every tracked leaf ends up with an allocated gradient, zero if unreachable.
  for (const Node& n : nodes_)
    if (n.leaf) n.leaf->ensure_grad();
  run_backward(loss, grads);
  for (size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.leaf && !grads[id].empty()) {
      for (size_t i = 0; i < grads[id].size(); ++i) n.leaf->g[i] += grads[id][i];
      if (precision_ == Precision::kSingle) round_single(n.leaf->g);
    }
  }
}

void Tape::backward_flat(Var loss, const ParamSet& ps, std::span<double> sink) {
  if (sink.size() != ps.size_scalars())
    throw Error("backward_flat: sink size mismatch");
  std::vector<std::vector<double>> grads;
  run_backward(loss, grads);
  for (size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.leaf || grads[id].empty()) continue;
    const int pi = ps.index_of(n.leaf);
    if (pi < 0) continue;  // frozen leaf: tracked on the tape but not optimized
    const size_t off = ps.offset(pi);
    for (size_t i = 0; i < grads[id].size(); ++i) sink[off + i] += grads[id][i];
  }
}

}  // namespace tpc
