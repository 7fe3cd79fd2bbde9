#include "tpc/pointconv.hpp"

#include <cmath>

namespace tpc {

namespace {

Tensor glorot(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  for (double& x : t.v) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Mlp Mlp::create(int in_dim, const std::vector<int>& hidden, int out_dim, Rng& rng,
                bool relu_output) {
  Mlp m;
  m.relu_output = relu_output;
  int d = in_dim;
  for (int h : hidden) {
    m.weights.push_back(glorot(d, h, rng));
    m.biases.push_back(Tensor(1, h));
    d = h;
  }
  m.weights.push_back(glorot(d, out_dim, rng));
  m.biases.push_back(Tensor(1, out_dim));
  return m;
}

Var Mlp::apply(Tape& tape, Var x) {
  for (size_t l = 0; l < weights.size(); ++l) {
    x = tape.add(tape.matmul(x, tape.param(weights[l])), tape.param(biases[l]));
    if (l + 1 < weights.size() || relu_output) x = tape.relu(x);
  }
  return x;
}

void Mlp::collect(ParamSet& ps, const std::string& prefix) {
  for (size_t l = 0; l < weights.size(); ++l) {
    ps.add(prefix + ".w" + std::to_string(l), &weights[l]);
    ps.add(prefix + ".b" + std::to_string(l), &biases[l]);
  }
}

PointConvParams PointConvParams::create(int d_in, const std::vector<int>& hidden,
                                        int c_mid, int c_in, int c_out, Rng& rng) {
  PointConvParams p;
  p.weight_net = Mlp::create(d_in, hidden, c_mid, rng);
  p.combine_w = glorot(c_mid * c_in, c_out, rng);
  p.combine_b = Tensor(1, c_out);
  p.c_in = c_in;
  p.c_mid = c_mid;
  p.c_out = c_out;
  return p;
}

void PointConvParams::collect(ParamSet& ps, const std::string& prefix) {
  weight_net.collect(ps, prefix + ".wnet");
  ps.add(prefix + ".combine_w", &combine_w);
  ps.add(prefix + ".combine_b", &combine_b);
}

DirectPointConvParams compose_direct(const PointConvParams& p) {
  DirectPointConvParams d;
  d.c_in = p.c_in;
  d.c_out = p.c_out;
  d.weight_net = p.weight_net;
  // Rearranged final map: c_mid -> (c_out, c_in) blocks, row-major (c, b).
  Tensor lin(p.c_mid, p.c_out * p.c_in);
  for (int a = 0; a < p.c_mid; ++a)
    for (int c = 0; c < p.c_out; ++c)
      for (int b = 0; b < p.c_in; ++b)
        lin.at(a, c * p.c_in + b) = p.combine_w.at(a * p.c_in + b, c);
  // Fold it into the weight net's (linear) output layer so no activation
  // sneaks in between: (xW + b)L == x(WL) + bL.
  Tensor& w_last = d.weight_net.weights.back();
  Tensor& b_last = d.weight_net.biases.back();
  Tensor w_new(w_last.rows, lin.cols);
  for (int i = 0; i < w_last.rows; ++i)
    for (int a = 0; a < p.c_mid; ++a) {
      const double wv = w_last.at(i, a);
      for (int j = 0; j < lin.cols; ++j) w_new.at(i, j) += wv * lin.at(a, j);
    }
  Tensor b_new(1, lin.cols);
  for (int a = 0; a < p.c_mid; ++a) {
    const double bv = b_last.at(0, a);
    for (int j = 0; j < lin.cols; ++j) b_new.at(0, j) += bv * lin.at(a, j);
  }
  w_last = std::move(w_new);
  b_last = std::move(b_new);
  d.bias = p.combine_b;
  return d;
}

namespace {

// The per-center non-empty mask; multiplying by it zeroes rows whose
// neighborhood was empty, including their bias contribution.
Var nonempty_mask(Tape& tape, const Neighborhoods& nbh) {
  std::vector<double> mask(nbh.center_count);
  for (int c = 0; c < nbh.center_count; ++c)
    mask[c] = nbh.empty_center(c) ? 0.0 : 1.0;
  return tape.input(nbh.center_count, 1, std::move(mask));
}

void check_feature_dim(const Tape& tape, Var features, int c_in, const char* op) {
  if (tape.cols(features) != c_in)
    throw ShapeError(op, {{tape.rows(features), tape.cols(features)}, {0, c_in}},
                     "cloud feature dim != c_in");
}

}  // namespace

Var pointconv_efficient(Tape& tape, Var features, const Neighborhoods& nbh,
                        PointConvParams& p) {
  check_feature_dim(tape, features, p.c_in, "pointconv_efficient");
  if (nbh.center_count == 0)
    throw Error("pointconv_efficient: no centers");
  if (nbh.total() == 0) {
    // All neighborhoods empty: the sum in every row is empty.
    return tape.input(nbh.center_count, p.c_out,
                      std::vector<double>(
                          static_cast<size_t>(nbh.center_count) * p.c_out, 0.0));
  }
  Var deltas = tape.input(nbh.total(), nbh.d_in,
                          std::vector<double>(nbh.delta.begin(), nbh.delta.end()));
  Var m = p.weight_net.apply(tape, deltas);                  // total x c_mid
  Var o = tape.gather_rows(features, nbh.idx);               // total x c_in
  Var agg = tape.segment_outer(m, o, nbh.offsets);           // centers x c_mid*c_in
  Var out = tape.matmul(agg, tape.param(p.combine_w));
  out = tape.add(out, tape.param(p.combine_b));
  return tape.mul(out, nonempty_mask(tape, nbh));
}

Var pointconv_direct(Tape& tape, Var features, const Neighborhoods& nbh,
                     DirectPointConvParams& p) {
  check_feature_dim(tape, features, p.c_in, "pointconv_direct");
  std::vector<Var> rows;
  rows.reserve(nbh.center_count);
  for (int c = 0; c < nbh.center_count; ++c) {
    if (nbh.empty_center(c)) {
      rows.push_back(tape.input(1, p.c_out, std::vector<double>(p.c_out, 0.0)));
      continue;
    }
    Var acc;
    for (int e = nbh.offsets[c]; e < nbh.offsets[c + 1]; ++e) {
      Var delta = tape.input(
          1, nbh.d_in,
          std::vector<double>(nbh.delta.begin() + static_cast<size_t>(e) * nbh.d_in,
                              nbh.delta.begin() + static_cast<size_t>(e + 1) * nbh.d_in));
      Var w = p.weight_net.apply(tape, delta);            // 1 x (c_out*c_in)
      Var wm = tape.reshape(w, p.c_out, p.c_in);          // c_out x c_in
      Var oi = tape.transpose(tape.gather_rows(features, {nbh.idx[e]}));  // c_in x 1
      Var contrib = tape.matmul(wm, oi);                  // c_out x 1
      acc = acc.valid() ? tape.add(acc, contrib) : contrib;
    }
    Var row = tape.transpose(acc);  // 1 x c_out
    row = tape.add(row, tape.param(p.bias));
    rows.push_back(row);
  }
  return tape.concat_rows(rows);
}

DeepSetsParams DeepSetsParams::create(int loc_dim, int c_in,
                                      const std::vector<int>& phi_hidden, int latent,
                                      const std::vector<int>& rho_hidden, int c_out,
                                      Rng& rng) {
  DeepSetsParams p;
  p.c_in = c_in;
  p.c_out = c_out;
  p.phi = Mlp::create(loc_dim + 1 + c_in, phi_hidden, latent, rng, /*relu_output=*/true);
  p.rho = Mlp::create(latent, rho_hidden, c_out, rng);
  return p;
}

void DeepSetsParams::collect(ParamSet& ps, const std::string& prefix) {
  phi.collect(ps, prefix + ".phi");
  rho.collect(ps, prefix + ".rho");
}

Var deepsets_aggregate(Tape& tape, Var features, const Neighborhoods& nbh,
                       const PointCloud& cloud, DeepSetsParams& p) {
  check_feature_dim(tape, features, p.c_in, "deepsets_aggregate");
  if (nbh.center_count == 0) throw Error("deepsets_aggregate: no centers");
  const int ld = cloud.loc_dim();
  Var pooled;
  if (nbh.total() == 0) {
    pooled = tape.input(
        nbh.center_count, p.phi.out_dim(),
        std::vector<double>(static_cast<size_t>(nbh.center_count) * p.phi.out_dim(),
                            0.0));
  } else {
    std::vector<double> coords(static_cast<size_t>(nbh.total()) * (ld + 1));
    for (int e = 0; e < nbh.total(); ++e) {
      auto l = cloud.loc(nbh.idx[e]);
      for (int d = 0; d < ld; ++d) coords[static_cast<size_t>(e) * (ld + 1) + d] = l[d];
      coords[static_cast<size_t>(e) * (ld + 1) + ld] = cloud.time(nbh.idx[e]);
    }
    Var abs_coords = tape.input(nbh.total(), ld + 1, std::move(coords));
    Var o = tape.gather_rows(features, nbh.idx);
    Var x = tape.concat_cols({abs_coords, o});
    Var h = p.phi.apply(tape, x);
    pooled = tape.segment_sum(h, nbh.offsets);  // centers x latent
  }
  return p.rho.apply(tape, pooled);
}

}  // namespace tpc
