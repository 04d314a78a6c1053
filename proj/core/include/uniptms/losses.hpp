#pragma once

#include <vector>

#include "uniptms/params.hpp"
#include "uniptms/tensor.hpp"

namespace uniptms {

// ---- hierarchical contrastive loss ------------------------------------------

struct ContrastiveConfig {
    double beta = 0.7;  // cross-layer weight
    double temperature_init = 0.07;
    double temperature_floor = 1e-3;
};

struct ContrastiveParams {
    Tensor gamma_raw;  // temperature = floor + softplus(gamma_raw)
};

ContrastiveParams build_contrastive(ParamStore& ps, const std::string& prefix,
                                    const ContrastiveConfig& cfg);
// The learnable temperature as a positive scalar tensor (>= floor).
Tensor contrastive_temperature(const ContrastiveParams& p,
                               const ContrastiveConfig& cfg);

// Mean-pool a stage tensor over length and L2-normalize rows: [B,L,C]->[B,C].
Tensor pool_normalize(const Tensor& f);

// Supervised contrastive loss within one stage. z is [B,D] (rows normalized
// internally, with a warning, if they are not unit length), labels in {0,1}.
// Anchors without positives contribute zero; mean over contributing anchors.
Tensor intra_layer_loss(const Tensor& z, const std::vector<int>& labels,
                        const Tensor& gamma);

// InfoNCE across two adjacent stages; positives pair the same sample index.
Tensor cross_layer_loss(const Tensor& zk, const Tensor& zk1,
                        const Tensor& gamma);

// (1/3) sum_k intra_k + (beta/2) sum_k cross_{k,k+1} over pooled stages.
Tensor hierarchical_loss(const Tensor& f1, const Tensor& f2, const Tensor& f3,
                         const std::vector<int>& labels,
                         const ContrastiveParams& p,
                         const ContrastiveConfig& cfg);

// ---- supervised losses -------------------------------------------------------

struct FocalConfig {
    double gamma_f = 2.0;
    double alpha_f = 0.25;
};

// Mean over the batch of -alpha * (1-p_t)^gamma * log(p_t), p_t the sigmoid
// probability of the true class, clamped to [1e-7, 1-1e-7].
Tensor focal_loss(const Tensor& logits, const std::vector<int>& labels,
                  const FocalConfig& cfg);

// Binary cross-entropy with the positive class weighted by pos_weight;
// mean over weighted per-sample terms.
Tensor weighted_ce(const Tensor& logits, const std::vector<int>& labels,
                   double pos_weight);

// ---- total-loss schedule -------------------------------------------------------

struct LossSchedule {
    double lambda0 = 0.5;
    int horizon = 1;  // epochs until the contrastive term is fully off

    double lambda_at(int epoch) const {
        if (epoch >= horizon) return 0.0;
        double v = lambda0 * (1.0 - static_cast<double>(epoch) / horizon);
        return v > 0.0 ? v : 0.0;
    }
};

Tensor total_loss(const Tensor& l_c, const Tensor& l_cont, int epoch,
                  const LossSchedule& sched);

}  // namespace uniptms
