#include "uniptms/fusion.hpp"

#include <cmath>

#include "uniptms/error.hpp"

namespace uniptms {

const Tensor& FusionTrace::at(const std::string& k) const {
    auto it = values.find(k);
    if (it == values.end())
        throw UsageError("FusionTrace: no entry '" + k + "'");
    return it->second;
}

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        double scale, FusionTrace* tr,
                        const std::string& trace_key) {
    Tensor probs = softmax_lastdim(bmm_nt(q, k), scale);
    if (tr && !trace_key.empty()) tr->put(trace_key, probs);
    return bmm(probs, v);
}

namespace {

Tensor add_weight(ParamStore& ps, Rng& rng, const std::string& path,
                  const Shape& s) {
    return ps.add(path, init_xavier(s, rng));
}

Tensor add_zeros(ParamStore& ps, const std::string& path, const Shape& s) {
    return ps.add(path, init_zeros(s));
}

Tensor add_const(ParamStore& ps, const std::string& path, const Shape& s,
                 double v) {
    return ps.add(path, init_full(s, v));
}

// Key projections carry no bias: softmax scores are invariant under a
// constant shift per query row, which is exactly what a key bias adds.
GroupedProj build_grouped(ParamStore& ps, Rng& rng, const std::string& prefix,
                          int d, int groups, bool bias = true) {
    GroupedProj gp;
    int dg = d / groups;
    for (int i = 0; i < groups; ++i) {
        gp.w.push_back(
            add_weight(ps, rng, prefix + ".g" + std::to_string(i) + ".w",
                       Shape::of(dg, dg)));
        if (bias)
            gp.b.push_back(
                add_zeros(ps, prefix + ".g" + std::to_string(i) + ".b",
                          Shape::of(dg)));
    }
    return gp;
}

// Concat over groups in group-major order of per-group attention outputs.
Tensor grouped_cross_attention(const Tensor& xq, const Tensor& xkv,
                               const GroupedProj& pq, const GroupedProj& pk,
                               const GroupedProj& pv, FusionTrace* tr,
                               const std::string& trace_prefix) {
    int g = static_cast<int>(pq.w.size());
    int d = xq.shape().dim(2);
    int dg = d / g;
    double scale = 1.0 / std::sqrt(static_cast<double>(dg));
    std::vector<Tensor> outs;
    outs.reserve(g);
    for (int i = 0; i < g; ++i) {
        Tensor q = linear(slice_lastdim(xq, i * dg, dg), pq.w[i], pq.b[i]);
        Tensor k = linear(slice_lastdim(xkv, i * dg, dg), pk.w[i],
                          pk.b.empty() ? Tensor() : pk.b[i]);
        Tensor v = linear(slice_lastdim(xkv, i * dg, dg), pv.w[i], pv.b[i]);
        outs.push_back(scaled_attention(
            q, k, v, scale, tr,
            tr ? trace_prefix + ".probs.g" + std::to_string(i) : ""));
    }
    return concat_lastdim(outs);
}

SeParams build_se(ParamStore& ps, Rng& rng, const std::string& prefix, int d,
                  int reduction) {
    SeParams se;
    int dr = std::max(1, d / reduction);
    se.w1 = add_weight(ps, rng, prefix + ".w1", Shape::of(d, dr));
    se.b1 = add_zeros(ps, prefix + ".b1", Shape::of(dr));
    se.w2 = add_weight(ps, rng, prefix + ".w2", Shape::of(dr, d));
    se.b2 = add_zeros(ps, prefix + ".b2", Shape::of(d));
    return se;
}

// Squeeze-excitation style gate: sigmoid(W2 gelu(W1 pool(x))), [B,1,d].
Tensor se_gate(const Tensor& x, const SeParams& se) {
    Tensor pooled = mean_over_length(x);
    return sigmoid(linear(gelu(linear(pooled, se.w1, se.b1)), se.w2, se.b2));
}

Tensor conv_kernel(ParamStore& ps, Rng& rng, const std::string& path, int k,
                   int ci, int co) {
    return ps.add(path, init_xavier(Shape::of(k, ci, co), rng));
}

}  // namespace

// ---- BGCA -----------------------------------------------------------------

BgcaParams build_bgca(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_m, int groups) {
    if (groups < 1 || d_m % groups != 0)
        throw ConfigError("bgca: d_m (" + std::to_string(d_m) +
                          ") must be divisible by group count (" +
                          std::to_string(groups) + ")");
    BgcaParams p;
    p.d_m = d_m;
    p.groups = groups;
    p.q1 = build_grouped(ps, rng, prefix + "q1", d_m, groups);
    p.k1 = build_grouped(ps, rng, prefix + "k1", d_m, groups, false);
    p.v1 = build_grouped(ps, rng, prefix + "v1", d_m, groups);
    p.q2 = build_grouped(ps, rng, prefix + "q2", d_m, groups);
    p.k2 = build_grouped(ps, rng, prefix + "k2", d_m, groups, false);
    p.v2 = build_grouped(ps, rng, prefix + "v2", d_m, groups);
    p.conv3_k = conv_kernel(ps, rng, prefix + "conv3.k", 3, d_m, d_m);
    p.conv3_b = add_zeros(ps, prefix + "conv3.b", Shape::of(d_m));
    p.conv5_k = conv_kernel(ps, rng, prefix + "conv5.k", 5, d_m, d_m);
    p.conv5_b = add_zeros(ps, prefix + "conv5.b", Shape::of(d_m));
    p.conv7_k = conv_kernel(ps, rng, prefix + "conv7.k", 7, d_m, d_m);
    p.conv7_b = add_zeros(ps, prefix + "conv7.b", Shape::of(d_m));
    p.scale_gate_w = add_weight(ps, rng, prefix + "scale_gate.w",
                                Shape::of(3 * d_m, 3));
    p.scale_gate_b = add_zeros(ps, prefix + "scale_gate.b", Shape::of(3));
    p.fuse_gate_w =
        add_weight(ps, rng, prefix + "fuse_gate.w", Shape::of(2 * d_m, 2));
    p.fuse_gate_b = add_zeros(ps, prefix + "fuse_gate.b", Shape::of(2));
    p.ln_gain = add_const(ps, prefix + "ln.gain", Shape::of(d_m), 1.0);
    p.ln_bias = add_zeros(ps, prefix + "ln.bias", Shape::of(d_m));
    return p;
}

Tensor bgca_forward(const Tensor& x1, const Tensor& x2, const BgcaParams& p,
                    FusionTrace* tr) {
    if (x1.rank() != 3 || x2.rank() != 3 || x1.shape() != x2.shape())
        throw DimError("bgca_forward: inputs must share [B,L,d_m], got " +
                       x1.shape().str() + " and " + x2.shape().str());
    if (x1.shape().dim(2) != p.d_m)
        throw DimError("bgca_forward: channel extent " + x1.shape().str() +
                       " does not match d_m " + std::to_string(p.d_m));
    if (p.d_m % p.groups != 0)
        throw ConfigError("bgca_forward: d_m not divisible by group count");

    Tensor attn1 =
        grouped_cross_attention(x1, x2, p.q1, p.k2, p.v2, tr, "bgca.attn1");
    Tensor attn2 =
        grouped_cross_attention(x2, x1, p.q2, p.k1, p.v1, tr, "bgca.attn2");

    Tensor c3 = conv1d(attn1, p.conv3_k, p.conv3_b);
    Tensor c5 = conv1d(attn1, p.conv5_k, p.conv5_b);
    Tensor c7 = conv1d(attn1, p.conv7_k, p.conv7_b);
    Tensor alpha = softmax_lastdim(
        linear(concat_lastdim({c3, c5, c7}), p.scale_gate_w, p.scale_gate_b));
    Tensor conv_fusion = add(
        add(mul(slice_lastdim(alpha, 0, 1), c3),
            mul(slice_lastdim(alpha, 1, 1), c5)),
        mul(slice_lastdim(alpha, 2, 1), c7));

    Tensor beta = softmax_lastdim(linear(concat_lastdim({conv_fusion, attn2}),
                                         p.fuse_gate_w, p.fuse_gate_b));
    Tensor fused = add(mul(slice_lastdim(beta, 0, 1), conv_fusion),
                       mul(slice_lastdim(beta, 1, 1), attn2));

    if (tr) {
        tr->put("bgca.alpha", alpha);
        tr->put("bgca.beta", beta);
        tr->put("bgca.conv_fusion", conv_fusion);
        tr->put("bgca.attn2_out", attn2);
        tr->put("bgca.pre_residual", fused);
    }
    return layer_norm(add(fused, x1), p.ln_gain, p.ln_bias);
}

// ---- LDFN -----------------------------------------------------------------

namespace {

LdfnPairParams build_ldfn_pair(ParamStore& ps, Rng& rng,
                               const std::string& prefix, int d_in, int d_work,
                               bool full) {
    LdfnPairParams p;
    p.d_in = d_in;
    p.d_work = d_work;
    p.proj1_w = add_weight(ps, rng, prefix + "proj1.w", Shape::of(d_in, d_work));
    p.proj1_b = add_zeros(ps, prefix + "proj1.b", Shape::of(d_work));
    p.proj2_w = add_weight(ps, rng, prefix + "proj2.w", Shape::of(d_in, d_work));
    p.proj2_b = add_zeros(ps, prefix + "proj2.b", Shape::of(d_work));
    p.q1_w = add_weight(ps, rng, prefix + "q1.w", Shape::of(d_work, d_work));
    p.q1_b = add_zeros(ps, prefix + "q1.b", Shape::of(d_work));
    p.q2_w = add_weight(ps, rng, prefix + "q2.w", Shape::of(d_work, d_work));
    p.q2_b = add_zeros(ps, prefix + "q2.b", Shape::of(d_work));
    p.k_w = add_weight(ps, rng, prefix + "k.w", Shape::of(d_work, d_work));
    p.v_w = add_weight(ps, rng, prefix + "v.w", Shape::of(d_work, d_work));
    p.v_b = add_zeros(ps, prefix + "v.b", Shape::of(d_work));
    if (!full) return p;
    p.gate_w =
        add_weight(ps, rng, prefix + "gate.w", Shape::of(2 * d_work, d_work));
    p.gate_b = add_zeros(ps, prefix + "gate.b", Shape::of(d_work));
    p.conv3_k = conv_kernel(ps, rng, prefix + "conv3.k", 3, d_work, d_work);
    p.conv3_b = add_zeros(ps, prefix + "conv3.b", Shape::of(d_work));
    p.conv5_k = conv_kernel(ps, rng, prefix + "conv5.k", 5, d_work, d_work);
    p.conv5_b = add_zeros(ps, prefix + "conv5.b", Shape::of(d_work));
    p.conv7_k = conv_kernel(ps, rng, prefix + "conv7.k", 7, d_work, d_work);
    p.conv7_b = add_zeros(ps, prefix + "conv7.b", Shape::of(d_work));
    p.cat_w =
        add_weight(ps, rng, prefix + "cat.w", Shape::of(3 * d_work, d_work));
    p.cat_b = add_zeros(ps, prefix + "cat.b", Shape::of(d_work));
    p.mix_d = add_const(ps, prefix + "mix.d", Shape::of(d_work), 1.0 / 3.0);
    p.mix_c = add_const(ps, prefix + "mix.c", Shape::of(d_work), 1.0 / 3.0);
    p.mix_p = add_const(ps, prefix + "mix.p", Shape::of(d_work), 1.0 / 3.0);
    return p;
}

struct PairAttn {
    Tensor attn1, attn2, x1p, x2p;
};

PairAttn ldfn_pair_attention(const Tensor& e1, const Tensor& e2,
                             const LdfnPairParams& p, FusionTrace* tr,
                             const std::string& key) {
    PairAttn out;
    out.x1p = linear(e1, p.proj1_w, p.proj1_b);
    out.x2p = linear(e2, p.proj2_w, p.proj2_b);
    double scale = 1.0 / std::sqrt(static_cast<double>(p.d_work));
    // shared K/V projection weights, applied to the opposite modality
    out.attn1 = scaled_attention(linear(out.x1p, p.q1_w, p.q1_b),
                                 linear(out.x2p, p.k_w, p.k_b),
                                 linear(out.x2p, p.v_w, p.v_b), scale, tr,
                                 tr ? key + ".attn1_probs" : "");
    out.attn2 = scaled_attention(linear(out.x2p, p.q2_w, p.q2_b),
                                 linear(out.x1p, p.k_w, p.k_b),
                                 linear(out.x1p, p.v_w, p.v_b), scale, tr,
                                 tr ? key + ".attn2_probs" : "");
    return out;
}

Tensor ldfn_pair_forward(const Tensor& e1, const Tensor& e2,
                         const LdfnPairParams& p, FusionTrace* tr,
                         const std::string& key) {
    if (e1.shape().dim(2) != p.d_in || e2.shape().dim(2) != p.d_in)
        throw ConfigError("ldfn: pair inputs must have " +
                          std::to_string(p.d_in) + " channels, got " +
                          e1.shape().str() + " and " + e2.shape().str());
    PairAttn a = ldfn_pair_attention(e1, e2, p, tr, key);
    Tensor gate = sigmoid(
        linear(concat_lastdim({a.attn1, a.attn2}), p.gate_w, p.gate_b));
    Tensor ones = Tensor::full(Shape::of(1), 1.0);
    Tensor distilled =
        add(mul(gate, a.attn1), mul(sub(ones, gate), a.attn2));

    Tensor c3 = conv1d(distilled, p.conv3_k, p.conv3_b);
    Tensor c5 = conv1d(distilled, p.conv5_k, p.conv5_b);
    Tensor c7 = conv1d(distilled, p.conv7_k, p.conv7_b);
    Tensor fc = linear(concat_lastdim({c3, c5, c7}), p.cat_w, p.cat_b);

    Tensor fused = add(add(mul(distilled, p.mix_d), mul(fc, p.mix_c)),
                       mul(add(a.x1p, a.x2p), p.mix_p));
    if (tr) {
        tr->put(key + ".gate", gate);
        tr->put(key + ".attn1", a.attn1);
        tr->put(key + ".attn2", a.attn2);
        tr->put(key + ".distilled", distilled);
        tr->put(key + ".fc", fc);
    }
    return fused;
}

void check_ldfn_inputs(const Tensor& e1, const Tensor& e2, const Tensor& e3,
                       const Tensor& e4) {
    auto chan = [](const Tensor& t) { return t.shape().dim(2); };
    if (chan(e1) != 256 || chan(e2) != 256 || chan(e3) != 512 ||
        chan(e4) != 512)
        throw ConfigError(
            "ldfn: expected aligned channels {256,256,512,512}, got {" +
            std::to_string(chan(e1)) + "," + std::to_string(chan(e2)) + "," +
            std::to_string(chan(e3)) + "," + std::to_string(chan(e4)) + "}");
}

}  // namespace

LdfnParams build_ldfn(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_work, int d_s) {
    LdfnParams p;
    p.pair_a = build_ldfn_pair(ps, rng, prefix + "pairA.", 256, d_work, true);
    p.pair_b = build_ldfn_pair(ps, rng, prefix + "pairB.", 512, d_work, true);
    p.out_w = add_weight(ps, rng, prefix + "out.w", Shape::of(2 * d_work, d_s));
    p.out_b = add_zeros(ps, prefix + "out.b", Shape::of(d_s));
    return p;
}

Tensor ldfn_forward(const Tensor& e1, const Tensor& e2, const Tensor& e3,
                    const Tensor& e4, const LdfnParams& p, FusionTrace* tr) {
    check_ldfn_inputs(e1, e2, e3, e4);
    Tensor fa = ldfn_pair_forward(e1, e2, p.pair_a, tr, "ldfn.pairA");
    Tensor fb = ldfn_pair_forward(e3, e4, p.pair_b, tr, "ldfn.pairB");
    return linear(concat_lastdim({fa, fb}), p.out_w, p.out_b);
}

CrossDenseParams build_cross_dense(ParamStore& ps, Rng& rng,
                                   const std::string& prefix, int d_work,
                                   int d_s) {
    CrossDenseParams p;
    p.pair_a = build_ldfn_pair(ps, rng, prefix + "pairA.", 256, d_work, false);
    p.pair_b = build_ldfn_pair(ps, rng, prefix + "pairB.", 512, d_work, false);
    p.out_w = add_weight(ps, rng, prefix + "out.w", Shape::of(2 * d_work, d_s));
    p.out_b = add_zeros(ps, prefix + "out.b", Shape::of(d_s));
    return p;
}

Tensor cross_dense_forward(const Tensor& e1, const Tensor& e2, const Tensor& e3,
                           const Tensor& e4, const CrossDenseParams& p,
                           FusionTrace* tr) {
    check_ldfn_inputs(e1, e2, e3, e4);
    PairAttn a = ldfn_pair_attention(e1, e2, p.pair_a, tr, "cda.pairA");
    PairAttn b = ldfn_pair_attention(e3, e4, p.pair_b, tr, "cda.pairB");
    Tensor fa = mul_scalar(add(a.attn1, a.attn2), 0.5);
    Tensor fb = mul_scalar(add(b.attn1, b.attn2), 0.5);
    return linear(concat_lastdim({fa, fb}), p.out_w, p.out_b);
}

// ---- MACP -----------------------------------------------------------------

MacpParams build_macp(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_s) {
    MacpParams p;
    p.d_s = d_s;
    p.shallow3_k = conv_kernel(ps, rng, prefix + "shallow3.k", 3, d_s, d_s);
    p.shallow3_b = add_zeros(ps, prefix + "shallow3.b", Shape::of(d_s));
    p.shallow5_k = conv_kernel(ps, rng, prefix + "shallow5.k", 5, d_s, d_s);
    p.shallow5_b = add_zeros(ps, prefix + "shallow5.b", Shape::of(d_s));
    p.scale_w = add_weight(ps, rng, prefix + "scale.w", Shape::of(d_s, 1));
    p.scale_b = add_zeros(ps, prefix + "scale.b", Shape::of(1));
    p.shallow_channel = build_se(ps, rng, prefix + "channel", d_s, 4);
    p.mid_k = conv_kernel(ps, rng, prefix + "mid.k", 3, d_s, d_s);
    p.mid_b = add_zeros(ps, prefix + "mid.b", Shape::of(d_s));
    p.bn_gain = add_const(ps, prefix + "bn.gain", Shape::of(d_s), 1.0);
    p.bn_bias = add_zeros(ps, prefix + "bn.bias", Shape::of(d_s));
    p.bn_mean.assign(d_s, 0.0);
    p.bn_var.assign(d_s, 1.0);
    p.mid_se = build_se(ps, rng, prefix + "se", d_s, 4);
    p.skip_k = conv_kernel(ps, rng, prefix + "skip.k", 1, d_s, d_s);
    p.skip_b = add_zeros(ps, prefix + "skip.b", Shape::of(d_s));
    p.deep3_k = conv_kernel(ps, rng, prefix + "deep3.k", 3, d_s, d_s);
    p.deep3_b = add_zeros(ps, prefix + "deep3.b", Shape::of(d_s));
    p.deep5_k = conv_kernel(ps, rng, prefix + "deep5.k", 5, d_s, d_s);
    p.deep5_b = add_zeros(ps, prefix + "deep5.b", Shape::of(d_s));
    p.deep7_k = conv_kernel(ps, rng, prefix + "deep7.k", 7, d_s, d_s);
    p.deep7_b = add_zeros(ps, prefix + "deep7.b", Shape::of(d_s));
    p.coord_channel = build_se(ps, rng, prefix + "coord.channel", d_s, 4);
    p.coord_spatial_k = conv_kernel(ps, rng, prefix + "coord.spatial.k", 3, d_s, 1);
    p.coord_spatial_b = add_zeros(ps, prefix + "coord.spatial.b", Shape::of(1));
    return p;
}

MacpOut macp_forward(const Tensor& x, MacpParams& p, const ForwardMode& mode,
                     FusionTrace* tr) {
    if (x.rank() != 3 || x.shape().dim(2) != p.d_s)
        throw DimError("macp_forward: input " + x.shape().str() +
                       " does not match d_s " + std::to_string(p.d_s));
    Tensor ones = Tensor::full(Shape::of(1), 1.0);

    // shallow: per-sample kernel-size selector plus channel attention
    Tensor alpha =
        sigmoid(linear(mean_over_length(x), p.scale_w, p.scale_b));  // [B,1,1]
    Tensor c3 = conv1d(x, p.shallow3_k, p.shallow3_b);
    Tensor c5 = conv1d(x, p.shallow5_k, p.shallow5_b);
    Tensor blend = add(mul(alpha, c3), mul(sub(ones, alpha), c5));
    Tensor f1 = mul(blend, se_gate(blend, p.shallow_channel));

    // middle: dilated conv -> BN -> SE, plus a 1x1 skip of f1
    Tensor mid = gelu(conv1d(f1, p.mid_k, p.mid_b, 2));
    std::vector<double> batch_mean, batch_var;
    Tensor f_main = batch_norm_channels(mid, p.bn_gain, p.bn_bias,
                                        mode.training, p.bn_mean, p.bn_var,
                                        1e-5, &batch_mean, &batch_var);
    if (mode.training && mode.update_bn) {
        for (int i = 0; i < p.d_s; ++i) {
            p.bn_mean[i] = (1 - mode.bn_momentum) * p.bn_mean[i] +
                           mode.bn_momentum * batch_mean[i];
            p.bn_var[i] = (1 - mode.bn_momentum) * p.bn_var[i] +
                          mode.bn_momentum * batch_var[i];
        }
    }
    Tensor se_w = se_gate(f_main, p.mid_se);
    Tensor skip = conv1d(f1, p.skip_k, p.skip_b);
    Tensor f2 = add(mul(f_main, se_w), skip);

    // deep: multi-scale conv then coordinate attention
    Tensor fc = mul_scalar(add(add(conv1d(f2, p.deep3_k, p.deep3_b),
                                   conv1d(f2, p.deep5_k, p.deep5_b)),
                               conv1d(f2, p.deep7_k, p.deep7_b)),
                           1.0 / 3.0);
    Tensor ac = se_gate(fc, p.coord_channel);                       // [B,1,d]
    Tensor as =
        sigmoid(conv1d(fc, p.coord_spatial_k, p.coord_spatial_b));  // [B,L,1]
    Tensor f3 = mul(f2, mul(ac, as));

    if (tr) {
        tr->put("macp.alpha", alpha);
        tr->put("macp.conv3", c3);
        tr->put("macp.conv5", c5);
        tr->put("macp.blend", blend);
        tr->put("macp.f_main", f_main);
        tr->put("macp.se_gate", se_w);
        tr->put("macp.skip", skip);
        tr->put("macp.ac", ac);
        tr->put("macp.as", as);
    }
    return MacpOut{f1, f2, f3};
}

// ---- BHGFN ----------------------------------------------------------------

BhgfnParams build_bhgfn(ParamStore& ps, Rng& rng, const std::string& prefix,
                        int d_m, int d_s) {
    BhgfnParams p;
    p.d_m = d_m;
    p.d_s = d_s;
    p.in_w = add_weight(ps, rng, prefix + "in.w", Shape::of(d_s, d_m));
    p.in_b = add_zeros(ps, prefix + "in.b", Shape::of(d_m));
    p.q1_w = add_weight(ps, rng, prefix + "q1.w", Shape::of(d_m, d_m));
    p.q1_b = add_zeros(ps, prefix + "q1.b", Shape::of(d_m));
    p.k2_w = add_weight(ps, rng, prefix + "k2.w", Shape::of(d_m, d_m));
    p.v2_w = add_weight(ps, rng, prefix + "v2.w", Shape::of(d_m, d_m));
    p.v2_b = add_zeros(ps, prefix + "v2.b", Shape::of(d_m));
    p.q2_w = add_weight(ps, rng, prefix + "q2.w", Shape::of(d_m, d_m));
    p.q2_b = add_zeros(ps, prefix + "q2.b", Shape::of(d_m));
    p.gate_attn_w =
        add_weight(ps, rng, prefix + "gate_attn.w", Shape::of(2 * d_m, d_m));
    p.gate_attn_b = add_zeros(ps, prefix + "gate_attn.b", Shape::of(d_m));
    // small init keeps the dynamic kernel near zero at the start, so the
    // block opens close to LN(h1)
    p.kgen_w = ps.add(prefix + "kgen.w",
                      init_normal(Shape::of(d_m, 3 * d_m), rng, 0.01));
    p.kgen_b = add_zeros(ps, prefix + "kgen.b", Shape::of(3 * d_m));
    p.gate_chan_w =
        add_weight(ps, rng, prefix + "gate_chan.w", Shape::of(d_m, d_m));
    p.gate_chan_b = add_zeros(ps, prefix + "gate_chan.b", Shape::of(d_m));
    p.gate_spatial_k =
        conv_kernel(ps, rng, prefix + "gate_spatial.k", 3, d_m, 1);
    p.gate_spatial_b = add_zeros(ps, prefix + "gate_spatial.b", Shape::of(1));
    p.ln_gain = add_const(ps, prefix + "ln.gain", Shape::of(d_m), 1.0);
    p.ln_bias = add_zeros(ps, prefix + "ln.bias", Shape::of(d_m));
    return p;
}

Tensor bhgfn_forward(const Tensor& h1, const Tensor& h2, const BhgfnParams& p,
                     FusionTrace* tr, const std::string& trace_prefix) {
    if (h1.rank() != 3 || h1.shape().dim(2) != p.d_m)
        throw DimError("bhgfn_forward: h1 " + h1.shape().str() +
                       " does not match d_m " + std::to_string(p.d_m));
    if (h2.rank() != 3 || h2.shape().dim(2) != p.d_s)
        throw DimError("bhgfn_forward: h2 " + h2.shape().str() +
                       " does not match d_s " + std::to_string(p.d_s));
    int d = p.d_m;
    int B = h1.shape().dim(0);
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor ones = Tensor::full(Shape::of(1), 1.0);

    Tensor h2p = linear(h2, p.in_w, p.in_b);
    Tensor a1 = scaled_attention(linear(h1, p.q1_w, p.q1_b),
                                 linear(h2p, p.k2_w, p.k2_b),
                                 linear(h2p, p.v2_w, p.v2_b), scale, tr,
                                 tr ? trace_prefix + "a1_probs" : "");
    // asymmetric path: raw h1 serves as both key and value
    Tensor a2 = scaled_attention(linear(h2p, p.q2_w, p.q2_b), h1, h1, scale, tr,
                                 tr ? trace_prefix + "a2_probs" : "");

    Tensor g_attn =
        sigmoid(linear(concat_lastdim({a1, a2}), p.gate_attn_w, p.gate_attn_b));
    Tensor f_alpha = add(mul(g_attn, a1), mul(sub(ones, g_attn), a2));

    // sample-dependent depthwise k=3 kernel from pooled h1
    Tensor pooled = mean_over_length(h1);  // [B,1,d]
    Tensor taps = linear(pooled, p.kgen_w, p.kgen_b);  // [B,1,3d]
    Tensor stacked = concat_lastdim(
        {reshape(slice_lastdim(taps, 0, d), Shape::of(B, d, 1)),
         reshape(slice_lastdim(taps, d, d), Shape::of(B, d, 1)),
         reshape(slice_lastdim(taps, 2 * d, d), Shape::of(B, d, 1))});
    Tensor norm_taps = softmax_lastdim(stacked);  // [B,d,3], per-channel
    auto tap = [&](int j) {
        return reshape(slice_lastdim(norm_taps, j, 1), Shape::of(B, 1, d));
    };
    Tensor f_c = add(add(mul(tap(0), shift_length(f_alpha, 1)),
                         mul(tap(1), f_alpha)),
                     mul(tap(2), shift_length(f_alpha, -1)));

    Tensor g_chan = sigmoid(linear(pooled, p.gate_chan_w, p.gate_chan_b));
    Tensor f_gc = mul(g_chan, f_c);
    Tensor g_spatial =
        sigmoid(conv1d(f_gc, p.gate_spatial_k, p.gate_spatial_b));
    Tensor f_gs = mul(g_spatial, f_gc);

    if (tr) {
        tr->put(trace_prefix + "a1", a1);
        tr->put(trace_prefix + "a2", a2);
        tr->put(trace_prefix + "gate_attn", g_attn);
        tr->put(trace_prefix + "f_alpha", f_alpha);
        tr->put(trace_prefix + "taps", norm_taps);
        tr->put(trace_prefix + "f_c", f_c);
        tr->put(trace_prefix + "gate_chan", g_chan);
        tr->put(trace_prefix + "gate_spatial", g_spatial);
        tr->put(trace_prefix + "f_gs", f_gs);
    }
    return layer_norm(add(f_gs, h1), p.ln_gain, p.ln_bias);
}

// ---- HDWF -----------------------------------------------------------------

HdwfParams build_hdwf(ParamStore& ps, Rng& rng, const std::string& prefix,
                      int d_m, int heads) {
    if (heads < 1 || d_m % heads != 0)
        throw ConfigError("hdwf: head count " + std::to_string(heads) +
                          " must divide d_m " + std::to_string(d_m));
    HdwfParams p;
    p.d_m = d_m;
    p.heads = heads;
    int dr = std::max(1, d_m / 4);
    p.chan_w1 = add_weight(ps, rng, prefix + "chan.w1", Shape::of(d_m, dr));
    p.chan_b1 = add_zeros(ps, prefix + "chan.b1", Shape::of(dr));
    p.chan_w2 = add_weight(ps, rng, prefix + "chan.w2", Shape::of(dr, d_m));
    p.chan_b2 = add_zeros(ps, prefix + "chan.b2", Shape::of(d_m));
    p.proj_w = add_weight(ps, rng, prefix + "proj.w", Shape::of(d_m, d_m));
    p.proj_b = add_zeros(ps, prefix + "proj.b", Shape::of(d_m));
    p.spatial_conv_k = conv_kernel(ps, rng, prefix + "spatial.k", 3, d_m, d_m);
    p.spatial_conv_b = add_zeros(ps, prefix + "spatial.kb", Shape::of(d_m));
    p.spatial_w = add_weight(ps, rng, prefix + "spatial.w", Shape::of(d_m, 1));
    p.spatial_b = add_zeros(ps, prefix + "spatial.b", Shape::of(1));
    p.q_w = add_weight(ps, rng, prefix + "q.w", Shape::of(d_m, d_m));
    p.q_b = add_zeros(ps, prefix + "q.b", Shape::of(d_m));
    p.k_w = add_weight(ps, rng, prefix + "k.w", Shape::of(d_m, d_m));
    p.v_w = add_weight(ps, rng, prefix + "v.w", Shape::of(d_m, d_m));
    p.v_b = add_zeros(ps, prefix + "v.b", Shape::of(d_m));
    p.tau_offset = add_const(ps, prefix + "tau.offset", Shape::of(1), 1.0);
    p.mix_w = add_weight(ps, rng, prefix + "mix.w", Shape::of(d_m, dr));
    p.mix_b = add_zeros(ps, prefix + "mix.b", Shape::of(dr));
    p.head_w = add_weight(ps, rng, prefix + "head.w", Shape::of(dr, heads));
    p.head_b = add_zeros(ps, prefix + "head.b", Shape::of(heads));
    p.blend_gamma = add_zeros(ps, prefix + "blend.gamma", Shape::of(1));
    p.blend_beta = add_zeros(ps, prefix + "blend.beta", Shape::of(1));
    p.layer_scale = add_const(ps, prefix + "layer_scale", Shape::of(d_m), 1e-6);
    p.ln_gain = add_const(ps, prefix + "ln.gain", Shape::of(d_m), 1.0);
    p.ln_bias = add_zeros(ps, prefix + "ln.bias", Shape::of(d_m));
    return p;
}

Tensor hdwf_forward(const Tensor& m, const Tensor& s, const HdwfParams& p,
                    FusionTrace* tr) {
    if (m.rank() != 3 || s.rank() != 3 || m.shape() != s.shape() ||
        m.shape().dim(2) != p.d_m)
        throw DimError("hdwf_forward: inputs must share [B,L,d_m], got " +
                       m.shape().str() + " and " + s.shape().str());
    int d = p.d_m;
    int dh = d / p.heads;

    // channel weighting of the master branch
    Tensor g_c = sigmoid(linear(
        gelu(linear(mean_over_length(m), p.chan_w1, p.chan_b1)), p.chan_w2,
        p.chan_b2));
    Tensor m_t = linear(mul(m, g_c), p.proj_w, p.proj_b);

    // spatial weighting of the slave branch
    Tensor s_gate = sigmoid(linear(
        conv1d(s, p.spatial_conv_k, p.spatial_conv_b), p.spatial_w,
        p.spatial_b));  // [B,L,1]
    Tensor s_t = mul(s, s_gate);

    // dynamic-temperature attention: tau = offset + mean feature of m
    Tensor q = linear(m_t, p.q_w, p.q_b);
    Tensor k = linear(s_t, p.k_w, p.k_b);
    Tensor tau =
        add(p.tau_offset, mean_over_length(mean_over_channels(m)));  // [B,1,1]
    Tensor logits = mul(bmm_nt(q, k),
                        mul_scalar(tau, 1.0 / std::sqrt(static_cast<double>(d))));
    Tensor probs = softmax_lastdim(logits);
    Tensor g = bmm(probs, linear(m_t, p.v_w, p.v_b));

    // per-head scalar mixing weights
    Tensor head_w = softmax_lastdim(
        linear(gelu(linear(m, p.mix_w, p.mix_b)), p.head_w, p.head_b));
    std::vector<Tensor> mixed;
    mixed.reserve(p.heads);
    for (int h = 0; h < p.heads; ++h)
        mixed.push_back(
            mul(slice_lastdim(head_w, h, 1), slice_lastdim(g, h * dh, dh)));
    Tensor g_tilde = concat_lastdim(mixed);

    Tensor out_pre =
        add(add(mul(m, p.layer_scale),
                mul(g_tilde, add_scalar(p.blend_gamma, 1.0))),
            mul(m, p.blend_beta));
    if (tr) {
        tr->put("hdwf.g_c", g_c);
        tr->put("hdwf.s_gate", s_gate);
        tr->put("hdwf.tau", tau);
        tr->put("hdwf.probs", probs);
        tr->put("hdwf.head_weights", head_w);
        tr->put("hdwf.g_tilde", g_tilde);
    }
    return layer_norm(out_pre, p.ln_gain, p.ln_bias);
}

}  // namespace uniptms
