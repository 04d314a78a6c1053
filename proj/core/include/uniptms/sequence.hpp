#pragma once

#include "uniptms/fusion.hpp"
#include "uniptms/params.hpp"
#include "uniptms/tensor.hpp"

namespace uniptms {

// Bidirectional LSTM with d_m/2 hidden units per direction; the two streams
// concatenate to d_m and project back to d_m.
struct LstmDirParams {
    Tensor w_ih, b_ih;  // [d_in, 4h] gate order i,f,g,o
    Tensor w_hh, b_hh;  // [h, 4h]
};

struct BiLstmParams {
    int d_m = 0, hidden = 0;
    LstmDirParams fwd, bwd;
    Tensor out_w, out_b;  // [2h, d_m]
};

BiLstmParams build_bilstm(ParamStore& ps, Rng& rng, const std::string& prefix,
                          int d_m);
Tensor bilstm_forward(const Tensor& x, const BiLstmParams& p,
                      FusionTrace* tr = nullptr);

// Simplified diagonal selective state-space layer: depthwise k=3 pre-mixing,
// rank-n_state gate trunk, per-channel recurrence
//   h_t = a_t * h_{t-1} + b_t * u_t
// with input-dependent a_t, b_t in (0,1), gated output and residual add.
struct SsmParams {
    int d_m = 0, n_state = 16;
    Tensor dw_k, dw_b;        // depthwise conv [3, d_m]
    Tensor in_w, in_b;        // u projection
    Tensor trunk_w, trunk_b;  // d_m -> n_state
    Tensor a_w, a_b;          // decay gate head (bias sets base decay)
    Tensor b_w, b_b;          // input gate head
    Tensor z_w, z_b;          // output gate head
    Tensor out_w, out_b;
};

SsmParams build_ssm(ParamStore& ps, Rng& rng, const std::string& prefix,
                    int d_m, int n_state);
Tensor ssm_forward(const Tensor& x, const SsmParams& p,
                   FusionTrace* tr = nullptr);

}  // namespace uniptms
