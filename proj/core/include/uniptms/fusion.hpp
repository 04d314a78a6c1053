#pragma once

#include <map>
#include <string>
#include <vector>

#include "uniptms/params.hpp"
#include "uniptms/tensor.hpp"

namespace uniptms {

// Optional capture of named intermediates (gates, attention maps, blend
// operands) for tests and diagnostics.
struct FusionTrace {
    std::map<std::string, Tensor> values;
    void put(const std::string& k, const Tensor& t) { values[k] = t; }
    bool has(const std::string& k) const { return values.count(k) != 0; }
    const Tensor& at(const std::string& k) const;
};

struct ForwardMode {
    bool training = true;
    bool update_bn = true;  // refresh batch-norm running statistics
    double bn_momentum = 0.1;
};

// softmax(q k^T * scale) v with the attention map optionally traced.
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        double scale, FusionTrace* tr = nullptr,
                        const std::string& trace_key = "");

// ---- BGCA: bidirectional grouped cross-attention over the two master
// embeddings, multi-scale conv enhancement, two softmax gates, residual+LN.
struct GroupedProj {
    std::vector<Tensor> w;  // per group [d/g, d/g]
    std::vector<Tensor> b;  // per group [d/g]
};

struct BgcaParams {
    int d_m = 0;
    int groups = 1;
    GroupedProj q1, k1, v1, q2, k2, v2;
    Tensor conv3_k, conv3_b, conv5_k, conv5_b, conv7_k, conv7_b;
    Tensor scale_gate_w, scale_gate_b;  // [3*d_m, 3]
    Tensor fuse_gate_w, fuse_gate_b;    // [2*d_m, 2]
    Tensor ln_gain, ln_bias;
};

BgcaParams build_bgca(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_m, int groups);
Tensor bgca_forward(const Tensor& x1, const Tensor& x2, const BgcaParams& p,
                    FusionTrace* tr = nullptr);

// ---- LDFN: pairwise low-dimensional fusion of the four auxiliary features.
// Each pair runs cross-dense attention with shared K/V projections, a
// distillation gate, multi-scale convs and an adaptive per-channel mix; the
// two pair outputs concat and project to d_s.
struct LdfnPairParams {
    int d_in = 0;    // 256 or 512
    int d_work = 0;  // internal working dim
    Tensor proj1_w, proj1_b, proj2_w, proj2_b;
    Tensor q1_w, q1_b, q2_w, q2_b;
    Tensor k_w, k_b, v_w, v_b;  // shared between directions; k_b stays unset
                                // (key bias is invisible to softmax)
    Tensor gate_w, gate_b;      // [2*d_work, d_work]
    Tensor conv3_k, conv3_b, conv5_k, conv5_b, conv7_k, conv7_b;
    Tensor cat_w, cat_b;  // [3*d_work, d_work]
    Tensor mix_d, mix_c, mix_p;  // per-channel adaptive fusion weights
};

struct LdfnParams {
    LdfnPairParams pair_a;  // (EMBER2, PseAAC) at 256
    LdfnPairParams pair_b;  // (BLOSUM62, AAIndex) at 512
    Tensor out_w, out_b;    // [2*d_work, d_s]
};

LdfnParams build_ldfn(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_work, int d_s);
Tensor ldfn_forward(const Tensor& e1, const Tensor& e2, const Tensor& e3,
                    const Tensor& e4, const LdfnParams& p,
                    FusionTrace* tr = nullptr);

// Mini-variant replacement: the pairwise cross-dense attention alone.
struct CrossDenseParams {
    LdfnPairParams pair_a, pair_b;  // only proj/q/k/v members are used
    Tensor out_w, out_b;
};
CrossDenseParams build_cross_dense(ParamStore& ps, Rng& rng,
                                   const std::string& prefix, int d_work,
                                   int d_s);
Tensor cross_dense_forward(const Tensor& e1, const Tensor& e2, const Tensor& e3,
                           const Tensor& e4, const CrossDenseParams& p,
                           FusionTrace* tr = nullptr);

// ---- MACP: three-stage convolution pyramid over the fused slave features.
struct SeParams {
    Tensor w1, b1, w2, b2;  // pooled d -> d/r -> d
};

struct MacpParams {
    int d_s = 0;
    Tensor shallow3_k, shallow3_b, shallow5_k, shallow5_b;
    Tensor scale_w, scale_b;  // [d_s,1]: kernel-size selector
    SeParams shallow_channel;
    Tensor mid_k, mid_b;  // k=3, dilation 2
    Tensor bn_gain, bn_bias;
    std::vector<double> bn_mean, bn_var;  // running statistics
    SeParams mid_se;
    Tensor skip_k, skip_b;  // 1x1 conv on F1
    Tensor deep3_k, deep3_b, deep5_k, deep5_b, deep7_k, deep7_b;
    SeParams coord_channel;
    Tensor coord_spatial_k, coord_spatial_b;  // [3, d_s, 1]
};

struct MacpOut {
    Tensor f1, f2, f3;
};

MacpParams build_macp(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_s);
MacpOut macp_forward(const Tensor& x, MacpParams& p, const ForwardMode& mode,
                     FusionTrace* tr = nullptr);

// ---- BHGFN: asymmetric master-slave attention with attention-, channel-
// and spatial-level gates, dynamic depthwise conv, residual + LN on h1.
struct BhgfnParams {
    int d_m = 0, d_s = 0;
    Tensor in_w, in_b;            // h2: d_s -> d_m
    Tensor q1_w, q1_b;            // h1 query
    Tensor k2_w, k2_b, v2_w, v2_b;  // projections of h2 (A1 path only)
    Tensor q2_w, q2_b;            // h2 query (A2 path, K=V=h1 raw)
    Tensor gate_attn_w, gate_attn_b;  // [2*d_m, d_m]
    Tensor kgen_w, kgen_b;            // pooled h1 -> 3 taps per channel
    Tensor gate_chan_w, gate_chan_b;  // pooled h1 -> per-channel gate
    Tensor gate_spatial_k, gate_spatial_b;  // [3, d_m, 1]
    Tensor ln_gain, ln_bias;
};

BhgfnParams build_bhgfn(ParamStore& ps, Rng& rng, const std::string& prefix,
                        int d_m, int d_s);
Tensor bhgfn_forward(const Tensor& h1, const Tensor& h2, const BhgfnParams& p,
                     FusionTrace* tr = nullptr,
                     const std::string& trace_prefix = "bhgfn.");

// ---- HDWF: late fusion with channel/spatial weighting, dynamic-temperature
// attention, head mixing and layer-scaled residual output.
struct HdwfParams {
    int d_m = 0, heads = 1;
    Tensor chan_w1, chan_b1, chan_w2, chan_b2;  // g_c MLP
    Tensor proj_w, proj_b;                      // W_p
    Tensor spatial_conv_k, spatial_conv_b;      // [3, d_m, d_m]
    Tensor spatial_w, spatial_b;                // [d_m, 1]
    Tensor q_w, q_b, k_w, k_b, v_w, v_b;
    Tensor tau_offset;            // learnable scalar, init 1
    Tensor mix_w, mix_b;          // W_m: [d_m, d_m/4]
    Tensor head_w, head_b;        // W_h: [d_m/4, H]
    Tensor blend_gamma, blend_beta;  // learnable scalars, init 0
    Tensor layer_scale;              // [d_m], init 1e-6
    Tensor ln_gain, ln_bias;
};

HdwfParams build_hdwf(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_m, int heads);
Tensor hdwf_forward(const Tensor& m, const Tensor& s, const HdwfParams& p,
                    FusionTrace* tr = nullptr);

}  // namespace uniptms
