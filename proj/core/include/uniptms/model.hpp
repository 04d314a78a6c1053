#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uniptms/encoders.hpp"
#include "uniptms/fusion.hpp"
#include "uniptms/losses.hpp"
#include "uniptms/sequence.hpp"

namespace uniptms {

enum class Variant { Full, Mini };
enum class EarlyFusion { BgcaLdfn, Concat };
enum class MidFusion { Bhgfn, Concat };
enum class LateFusion { Hdwf, Add };
enum class LossKind { Focal, Wce };

struct ModelConfig {
    Variant variant = Variant::Full;
    int d_m = 512, d_s = 256;
    int window = 33;
    int groups = 4, heads = 4;
    int dilation = 2;
    int n_state = 16;
    int master_a_dim = 1024, master_b_dim = 1280, ember_dim = 64;
    int aaindex_count = 31;
    int pseaac_lambda = 5;
    double pseaac_weight = 0.05;
    EarlyFusion early = EarlyFusion::BgcaLdfn;
    MidFusion mid = MidFusion::Bhgfn;
    LateFusion late = LateFusion::Hdwf;
    std::vector<std::string> encoders = {"bilstm", "ssm"};
    LossKind loss = LossKind::Focal;
    FocalConfig focal;
    double pos_weight = 0;  // 0 = derive from the training split
    ContrastiveConfig contrastive;
    double lambda0 = 0.5;
    uint64_t seed = 7;
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 1e-3;
    bool early_stopping = false;
    int patience = 10;
    double stop_mcc = -1;  // <0: disabled; else stop once val MCC reaches it
    double threshold = 0.5;

    static ModelConfig full_defaults();
    static ModelConfig mini_defaults();
    void validate() const;  // throws ConfigError
    int pseaac_dim() const { return 20 + pseaac_lambda; }
};

// Per-sample feature matrices, all rank-2 [window, d].
struct FeatureBundle {
    Tensor master_a;    // ProtT5 role
    Tensor master_b;    // ESM-2 role
    Tensor aux_ember;   // raw EMBER2 features
    Tensor aux_pseaac;  // [window, 20+lambda]
    Tensor aux_blosum;  // [window, 20]
    Tensor aux_aaindex; // [window, n_indices]
};

// Batched rank-3 stacks of the six feature streams.
struct BatchInput {
    Tensor master_a, master_b, aux_ember, aux_pseaac, aux_blosum, aux_aaindex;
};
BatchInput stack_bundles(const std::vector<FeatureBundle>& bundles,
                         const std::vector<int>& indices);

struct EncoderSlot {
    std::string kind;  // "bilstm" | "ssm"
    BiLstmParams lstm;
    SsmParams ssm;
};

struct Model {
    ModelConfig cfg;
    ParamStore params;

    Tensor master_a_w, master_a_b, master_b_w, master_b_b;
    AlignParams align_ember, align_pseaac, align_blosum, align_aaindex;

    bool has_bgca = false, has_ldfn = false, has_cda = false;
    BgcaParams bgca;
    LdfnParams ldfn;
    CrossDenseParams cda;
    Tensor early_master_w, early_master_b;  // concat bypass
    Tensor early_slave_w, early_slave_b;

    MacpParams macp;

    bool has_bhgfn = false;
    BhgfnParams bhgfn1, bhgfn2;
    Tensor mid1_w, mid1_b, mid2_w, mid2_b;  // concat bypass projections

    EncoderSlot enc1, enc2;

    bool has_hdwf = false;
    HdwfParams hdwf;
    Tensor late_proj_w, late_proj_b;  // F3: d_s -> d_m (both late modes)

    Tensor head_w1, head_b1, head_w2, head_b2;

    ContrastiveParams contrastive;
};

Model build_model(const ModelConfig& cfg);

struct ModelOutput {
    Tensor logits;  // [B]
    Tensor f1, f2, f3;
};

ModelOutput model_forward(Model& model, const BatchInput& in,
                          const ForwardMode& mode, FusionTrace* tr = nullptr);

// Parameter paths owned by the fusion stages proper (ablation bypass
// projections are excluded on purpose).
long long fusion_param_count(const Model& model);

// Checkpoint = UPTM container with parameter paths as record ids plus
// batch-norm running statistics under "buffer." ids.
void save_checkpoint(const Model& model, const std::string& path);
void load_checkpoint(Model& model, const std::string& path);

}  // namespace uniptms
