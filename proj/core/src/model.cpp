#include "uniptms/model.hpp"

#include <algorithm>
#include <cstring>

#include "uniptms/embedding_file.hpp"

namespace uniptms {

ModelConfig ModelConfig::full_defaults() { return ModelConfig{}; }

ModelConfig ModelConfig::mini_defaults() {
    ModelConfig c;
    c.variant = Variant::Mini;
    c.d_m = 256;
    c.d_s = 128;
    c.early_stopping = true;
    return c;
}

void ModelConfig::validate() const {
    if (d_m <= 0 || d_s <= 0) throw ConfigError("config: dims must be positive");
    if (d_m % 2 != 0)
        throw ConfigError("config: d_m must be even (Bi-LSTM splits it)");
    if (groups < 1 || d_m % groups != 0)
        throw ConfigError("config: d_m must be divisible by groups");
    if (heads < 1 || d_m % heads != 0)
        throw ConfigError("config: d_m must be divisible by heads");
    if (window < 1 || window % 2 == 0)
        throw ConfigError("config: window length must be odd, got " +
                          std::to_string(window));
    if (pseaac_lambda < 1 || pseaac_lambda >= window)
        throw ConfigError("config: pseaac_lambda must lie in [1, window-1]");
    if (dilation < 1) throw ConfigError("config: dilation must be >= 1");
    if (encoders.size() != 2)
        throw ConfigError("config: exactly two encoder slots expected");
    for (const auto& e : encoders) {
        if (e == "bilstm" || e == "ssm") continue;
        if (e == "transformer" || e == "resnet")
            throw ConfigError("config: encoder slot '" + e +
                              "' is a comparison baseline and is not "
                              "implemented here");
        throw ConfigError("config: unknown encoder slot '" + e + "'");
    }
    if (batch_size < 2)
        throw ConfigError("config: batch_size must be >= 2 (contrastive loss)");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (learning_rate <= 0) throw ConfigError("config: learning_rate must be > 0");
}

BatchInput stack_bundles(const std::vector<FeatureBundle>& bundles,
                         const std::vector<int>& indices) {
    if (indices.empty()) throw UsageError("stack_bundles: empty batch");
    auto stack = [&](Tensor FeatureBundle::*field) {
        const Tensor& first = bundles[indices[0]].*field;
        int L = first.shape().dim(0), D = first.shape().dim(1);
        int B = static_cast<int>(indices.size());
        std::vector<double> out(static_cast<size_t>(B) * L * D);
        for (int b = 0; b < B; ++b) {
            const Tensor& t = bundles[indices[b]].*field;
            if (t.shape() != first.shape())
                throw DimError("stack_bundles: inconsistent shapes " +
                               t.shape().str() + " vs " + first.shape().str());
            std::memcpy(out.data() + static_cast<size_t>(b) * L * D,
                        t.values().data(), sizeof(double) * L * D);
        }
        return Tensor::from(Shape::of(B, L, D), std::move(out));
    };
    BatchInput in;
    in.master_a = stack(&FeatureBundle::master_a);
    in.master_b = stack(&FeatureBundle::master_b);
    in.aux_ember = stack(&FeatureBundle::aux_ember);
    in.aux_pseaac = stack(&FeatureBundle::aux_pseaac);
    in.aux_blosum = stack(&FeatureBundle::aux_blosum);
    in.aux_aaindex = stack(&FeatureBundle::aux_aaindex);
    return in;
}

namespace {

AlignParams build_align(ParamStore& ps, Rng& rng, const std::string& prefix,
                        int d_in, int target) {
    AlignParams p;
    p.w = ps.add(prefix + "w", init_xavier(Shape::of(d_in, target), rng));
    p.b = ps.add(prefix + "b", init_zeros(Shape::of(target)));
    p.conv_k = ps.add(prefix + "conv.k",
                      init_normal(Shape::of(3, target, target), rng,
                                  std::sqrt(1.0 / (3.0 * target))));
    p.conv_b = ps.add(prefix + "conv.b", init_zeros(Shape::of(target)));
    return p;
}

EncoderSlot build_encoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                          const std::string& kind, int d_m, int n_state) {
    EncoderSlot slot;
    slot.kind = kind;
    if (kind == "bilstm")
        slot.lstm = build_bilstm(ps, rng, prefix, d_m);
    else
        slot.ssm = build_ssm(ps, rng, prefix, d_m, n_state);
    return slot;
}

Tensor encoder_forward(const EncoderSlot& slot, const Tensor& x,
                       FusionTrace* tr) {
    return slot.kind == "bilstm" ? bilstm_forward(x, slot.lstm, tr)
                                 : ssm_forward(x, slot.ssm, tr);
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    ParamStore& ps = m.params;

    m.master_a_w = ps.add("master_proj.a.w",
                          init_xavier(Shape::of(cfg.master_a_dim, cfg.d_m), rng));
    m.master_a_b = ps.add("master_proj.a.b", init_zeros(Shape::of(cfg.d_m)));
    m.master_b_w = ps.add("master_proj.b.w",
                          init_xavier(Shape::of(cfg.master_b_dim, cfg.d_m), rng));
    m.master_b_b = ps.add("master_proj.b.b", init_zeros(Shape::of(cfg.d_m)));

    m.align_ember = build_align(ps, rng, "align.ember.", cfg.ember_dim, 256);
    m.align_pseaac = build_align(ps, rng, "align.pseaac.", cfg.pseaac_dim(), 256);
    m.align_blosum = build_align(ps, rng, "align.blosum.", 20, 512);
    m.align_aaindex =
        build_align(ps, rng, "align.aaindex.", cfg.aaindex_count, 512);

    if (cfg.early == EarlyFusion::BgcaLdfn) {
        m.has_bgca = true;
        m.bgca = build_bgca(ps, rng, "bgca.", cfg.d_m, cfg.groups);
        if (cfg.variant == Variant::Mini) {
            m.has_cda = true;
            m.cda = build_cross_dense(ps, rng, "cda.", cfg.d_s, cfg.d_s);
        } else {
            m.has_ldfn = true;
            m.ldfn = build_ldfn(ps, rng, "ldfn.", cfg.d_s, cfg.d_s);
        }
    } else {
        m.early_master_w = ps.add(
            "early_bypass.master.w",
            init_xavier(Shape::of(2 * cfg.d_m, cfg.d_m), rng));
        m.early_master_b =
            ps.add("early_bypass.master.b", init_zeros(Shape::of(cfg.d_m)));
        m.early_slave_w = ps.add(
            "early_bypass.slave.w", init_xavier(Shape::of(1536, cfg.d_s), rng));
        m.early_slave_b =
            ps.add("early_bypass.slave.b", init_zeros(Shape::of(cfg.d_s)));
    }

    m.macp = build_macp(ps, rng, "macp.", cfg.d_s);

    if (cfg.mid == MidFusion::Bhgfn) {
        m.has_bhgfn = true;
        m.bhgfn1 = build_bhgfn(ps, rng, "bhgfn1.", cfg.d_m, cfg.d_s);
        m.bhgfn2 = build_bhgfn(ps, rng, "bhgfn2.", cfg.d_m, cfg.d_s);
    } else {
        m.mid1_w = ps.add("mid_bypass.stage1.w",
                          init_xavier(Shape::of(cfg.d_m + cfg.d_s, cfg.d_m), rng));
        m.mid1_b = ps.add("mid_bypass.stage1.b", init_zeros(Shape::of(cfg.d_m)));
        m.mid2_w = ps.add("mid_bypass.stage2.w",
                          init_xavier(Shape::of(cfg.d_m + cfg.d_s, cfg.d_m), rng));
        m.mid2_b = ps.add("mid_bypass.stage2.b", init_zeros(Shape::of(cfg.d_m)));
    }

    m.enc1 = build_encoder(ps, rng, "enc1.", cfg.encoders[0], cfg.d_m,
                           cfg.n_state);
    m.enc2 = build_encoder(ps, rng, "enc2.", cfg.encoders[1], cfg.d_m,
                           cfg.n_state);

    m.late_proj_w =
        ps.add("late_proj.w", init_xavier(Shape::of(cfg.d_s, cfg.d_m), rng));
    m.late_proj_b = ps.add("late_proj.b", init_zeros(Shape::of(cfg.d_m)));
    if (cfg.late == LateFusion::Hdwf) {
        m.has_hdwf = true;
        m.hdwf = build_hdwf(ps, rng, "hdwf.", cfg.d_m, cfg.heads);
    }

    int dh = std::max(1, cfg.d_m / 2);
    m.head_w1 = ps.add("head.w1", init_xavier(Shape::of(cfg.d_m, dh), rng));
    m.head_b1 = ps.add("head.b1", init_zeros(Shape::of(dh)));
    m.head_w2 = ps.add("head.w2", init_xavier(Shape::of(dh, 1), rng));
    m.head_b2 = ps.add("head.b2", init_zeros(Shape::of(1)));

    m.contrastive = build_contrastive(ps, "loss.", cfg.contrastive);
    return m;
}

ModelOutput model_forward(Model& model, const BatchInput& in,
                          const ForwardMode& mode, FusionTrace* tr) {
    const ModelConfig& cfg = model.cfg;
    auto expect = [&](const Tensor& t, int d, const char* name) {
        if (t.rank() != 3 || t.shape().dim(2) != d)
            throw DimError(std::string("model_forward: ") + name + " " +
                           t.shape().str() + " does not match configured " +
                           std::to_string(d) + " channels");
    };
    expect(in.master_a, cfg.master_a_dim, "master_a");
    expect(in.master_b, cfg.master_b_dim, "master_b");
    expect(in.aux_ember, cfg.ember_dim, "aux_ember");
    expect(in.aux_pseaac, cfg.pseaac_dim(), "aux_pseaac");
    expect(in.aux_blosum, 20, "aux_blosum");
    expect(in.aux_aaindex, cfg.aaindex_count, "aux_aaindex");

    Tensor e1 = align_dims(in.aux_ember, 256, model.align_ember);
    Tensor e2 = align_dims(in.aux_pseaac, 256, model.align_pseaac);
    Tensor e3 = align_dims(in.aux_blosum, 512, model.align_blosum);
    Tensor e4 = align_dims(in.aux_aaindex, 512, model.align_aaindex);

    Tensor x1p = linear(in.master_a, model.master_a_w, model.master_a_b);
    Tensor x2p = linear(in.master_b, model.master_b_w, model.master_b_b);

    Tensor master, slave;
    if (cfg.early == EarlyFusion::BgcaLdfn) {
        master = bgca_forward(x1p, x2p, model.bgca, tr);
        slave = model.has_cda
                    ? cross_dense_forward(e1, e2, e3, e4, model.cda, tr)
                    : ldfn_forward(e1, e2, e3, e4, model.ldfn, tr);
    } else {
        master = linear(concat_lastdim({x1p, x2p}), model.early_master_w,
                        model.early_master_b);
        slave = linear(concat_lastdim({e1, e2, e3, e4}), model.early_slave_w,
                       model.early_slave_b);
    }

    MacpOut stages = macp_forward(slave, model.macp, mode, tr);

    Tensor h = encoder_forward(model.enc1, master, tr);
    if (cfg.mid == MidFusion::Bhgfn)
        h = bhgfn_forward(h, stages.f1, model.bhgfn1, tr, "bhgfn1.");
    else
        h = linear(concat_lastdim({h, stages.f1}), model.mid1_w, model.mid1_b);

    h = encoder_forward(model.enc2, h, tr);
    if (cfg.mid == MidFusion::Bhgfn)
        h = bhgfn_forward(h, stages.f2, model.bhgfn2, tr, "bhgfn2.");
    else
        h = linear(concat_lastdim({h, stages.f2}), model.mid2_w, model.mid2_b);

    Tensor f3m = linear(stages.f3, model.late_proj_w, model.late_proj_b);
    Tensor fused = cfg.late == LateFusion::Hdwf
                       ? hdwf_forward(h, f3m, model.hdwf, tr)
                       : add(h, f3m);

    int B = fused.shape().dim(0);
    Tensor pooled = reshape(mean_over_length(fused), Shape::of(B, cfg.d_m));
    Tensor hidden = gelu(linear(pooled, model.head_w1, model.head_b1));
    Tensor logits =
        reshape(linear(hidden, model.head_w2, model.head_b2), Shape::of(B));

    ModelOutput out;
    out.logits = logits;
    out.f1 = stages.f1;
    out.f2 = stages.f2;
    out.f3 = stages.f3;
    return out;
}

long long fusion_param_count(const Model& model) {
    const char* prefixes[] = {"bgca.", "ldfn.", "cda.", "bhgfn1.", "bhgfn2.",
                              "hdwf."};
    long long n = 0;
    for (const char* p : prefixes) n += model.params.count_prefix(p);
    return n;
}

void save_checkpoint(const Model& model, const std::string& path) {
    EmbeddingFileWriter w;
    for (const auto& prm : model.params.all()) {
        const Shape& s = prm.tensor.shape();
        int cols = s.dim(s.rank() - 1);
        int rows = static_cast<int>(s.numel() / cols);
        w.add(prm.path, rows, cols, prm.tensor.values());
    }
    w.add("buffer.macp.bn_mean", 1,
          static_cast<uint32_t>(model.macp.bn_mean.size()), model.macp.bn_mean);
    w.add("buffer.macp.bn_var", 1,
          static_cast<uint32_t>(model.macp.bn_var.size()), model.macp.bn_var);
    w.write(path);
}

void load_checkpoint(Model& model, const std::string& path) {
    EmbeddingFileReader r(path);
    for (const auto& prm : model.params.all()) {
        const EmbeddingRecord& rec = r.record(prm.path);
        long long n = static_cast<long long>(rec.rows) * rec.cols;
        if (n != prm.tensor.numel())
            throw IoError(path + ": parameter '" + prm.path + "' has " +
                          std::to_string(n) + " values, model expects " +
                          std::to_string(prm.tensor.numel()));
        Tensor t = prm.tensor;  // shares the node
        for (long long i = 0; i < n; ++i)
            t.values()[i] = static_cast<double>(rec.data[i]);
        t.zero_grad();
    }
    const EmbeddingRecord& mean = r.record("buffer.macp.bn_mean");
    const EmbeddingRecord& var = r.record("buffer.macp.bn_var");
    model.macp.bn_mean.assign(mean.data.begin(), mean.data.end());
    model.macp.bn_var.assign(var.data.begin(), var.data.end());
}

}  // namespace uniptms
