#pragma once

#include <variant>
#include <vector>

#include "tpc/geometry.hpp"
#include "tpc/rng.hpp"
#include "tpc/tensor.hpp"

namespace tpc {

// Fully connected stack: ReLU on hidden layers, linear output by default.
struct Mlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  bool relu_output = false;

  static Mlp create(int in_dim, const std::vector<int>& hidden, int out_dim, Rng& rng,
                    bool relu_output = false);
  Var apply(Tape& tape, Var x);
  void collect(ParamSet& ps, const std::string& prefix);
  int in_dim() const { return weights.front().rows; }
  int out_dim() const { return weights.back().cols; }
};

// Factorized point convolution: the weight network maps positional
// differences to c_mid channels; the aggregated (c_mid x c_in) moment is sent
// through one linear map to c_out.
struct PointConvParams {
  Mlp weight_net;    // d_in -> c_mid
  Tensor combine_w;  // (c_mid * c_in) x c_out
  Tensor combine_b;  // 1 x c_out
  int c_in = 0, c_mid = 0, c_out = 0;

  static PointConvParams create(int d_in, const std::vector<int>& hidden, int c_mid,
                                int c_in, int c_out, Rng& rng);
  void collect(ParamSet& ps, const std::string& prefix);
};

// Direct form of the same operator: the weight network emits the full
// (c_out x c_in) block per neighbor. Retained as the test oracle.
struct DirectPointConvParams {
  Mlp weight_net;  // d_in -> c_out * c_in
  Tensor bias;     // 1 x c_out, applied once per non-empty center
  int c_in = 0, c_out = 0;
};

// Rewrites factorized parameters as an equivalent direct-form weight network
// (the c_mid net followed by one rearranged linear layer).
DirectPointConvParams compose_direct(const PointConvParams& p);

// features: cloud features (n x c_in) on the tape. Returns centers x c_out.
// Centers with empty neighborhoods produce exact zero rows.
Var pointconv_efficient(Tape& tape, Var features, const Neighborhoods& nbh,
                        PointConvParams& p);
Var pointconv_direct(Tape& tape, Var features, const Neighborhoods& nbh,
                     DirectPointConvParams& p);

// DeepSets substitution: phi over absolute coordinates [l_i, t_i, o_i] summed
// across the same neighborhoods, then rho. An empty neighborhood yields
// rho(0), whose bias terms may be nonzero.
struct DeepSetsParams {
  Mlp phi;  // (loc_dim + 1 + c_in) -> latent, ReLU output
  Mlp rho;  // latent -> c_out
  int c_in = 0, c_out = 0;

  static DeepSetsParams create(int loc_dim, int c_in,
                               const std::vector<int>& phi_hidden, int latent,
                               const std::vector<int>& rho_hidden, int c_out, Rng& rng);
  void collect(ParamSet& ps, const std::string& prefix);
};

Var deepsets_aggregate(Tape& tape, Var features, const Neighborhoods& nbh,
                       const PointCloud& cloud, DeepSetsParams& p);

}  // namespace tpc
