#include "uniptms/losses.hpp"

#include <cmath>
#include <iostream>

#include "uniptms/error.hpp"

namespace uniptms {

namespace {

// Numerically stable row-wise log-sum-exp of masked entries. The row max is
// treated as a constant, which leaves gradients unchanged.
Tensor masked_logsumexp_rows(const Tensor& s, const std::vector<double>& mask,
                             int B) {
    std::vector<double> row_max(B, -HUGE_VAL);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
            if (mask[i * B + j] > 0)
                row_max[i] = std::max(row_max[i], s.values()[i * B + j]);
    std::vector<double> mx(B);
    for (int i = 0; i < B; ++i)
        mx[i] = row_max[i] == -HUGE_VAL ? 0.0 : row_max[i];
    Tensor mx_t = Tensor::from(Shape::of(B, 1), mx);
    Tensor mask_t = Tensor::from(Shape::of(B, B), mask);
    Tensor shifted = exp(sub(s, mx_t));
    return add(log(sum_lastdim(mul(shifted, mask_t))), mx_t);
}

// Returns z with unit rows; warns if the caller passed non-normalized input.
Tensor ensure_unit_rows(const Tensor& z, const char* who) {
    int B = z.shape().dim(0), D = z.shape().dim(1);
    bool ok = true;
    for (int i = 0; i < B && ok; ++i) {
        double n = 0;
        for (int j = 0; j < D; ++j) {
            double v = z.values()[i * D + j];
            n += v * v;
        }
        if (std::abs(std::sqrt(n) - 1.0) > 1e-6) ok = false;
    }
    if (ok) return z;
    std::cerr << "warning: " << who
              << ": input vectors are not unit-norm, normalizing internally\n";
    Tensor norms = sqrt(add_scalar(sum_lastdim(mul(z, z)), 1e-24));
    return div(z, norms);
}

}  // namespace

ContrastiveParams build_contrastive(ParamStore& ps, const std::string& prefix,
                                    const ContrastiveConfig& cfg) {
    // invert temperature = floor + softplus(raw) at the requested init
    double target = cfg.temperature_init - cfg.temperature_floor;
    if (target <= 0)
        throw ConfigError("contrastive: temperature_init must exceed floor");
    double raw = std::log(std::expm1(target));
    ContrastiveParams p;
    p.gamma_raw = ps.add(prefix + "gamma_raw", init_full(Shape::of(1), raw));
    return p;
}

Tensor contrastive_temperature(const ContrastiveParams& p,
                               const ContrastiveConfig& cfg) {
    return add_scalar(softplus(p.gamma_raw), cfg.temperature_floor);
}

Tensor pool_normalize(const Tensor& f) {
    if (f.rank() != 3)
        throw DimError("pool_normalize expects [B,L,C], got " + f.shape().str());
    int B = f.shape().dim(0), C = f.shape().dim(2);
    Tensor z = reshape(mean_over_length(f), Shape::of(B, C));
    Tensor norms = sqrt(add_scalar(sum_lastdim(mul(z, z)), 1e-24));
    return div(z, norms);
}

Tensor intra_layer_loss(const Tensor& z, const std::vector<int>& labels,
                        const Tensor& gamma) {
    if (z.rank() != 2)
        throw UsageError("intra_layer_loss: z must be [B,D]");
    int B = z.shape().dim(0);
    if (B < 2)
        throw UsageError("intra_layer_loss: needs at least 2 samples, got " +
                         std::to_string(B));
    if (static_cast<int>(labels.size()) != B)
        throw UsageError("intra_layer_loss: labels length mismatch");

    Tensor zu = ensure_unit_rows(z, "intra_layer_loss");
    Tensor sims = div(matmul_nt(zu, zu), gamma);  // [B,B]

    std::vector<double> off_diag(static_cast<size_t>(B) * B, 1.0);
    std::vector<double> positives(static_cast<size_t>(B) * B, 0.0);
    std::vector<double> inv_cnt(B, 0.0), active(B, 0.0);
    int n_active = 0;
    for (int i = 0; i < B; ++i) {
        off_diag[i * B + i] = 0.0;
        int cnt = 0;
        for (int j = 0; j < B; ++j) {
            if (j != i && labels[j] == labels[i]) {
                positives[i * B + j] = 1.0;
                ++cnt;
            }
        }
        if (cnt > 0) {
            inv_cnt[i] = 1.0 / cnt;
            active[i] = 1.0;
            ++n_active;
        }
    }
    if (n_active == 0) return Tensor::scalar(0.0);

    Tensor log_denom = masked_logsumexp_rows(sims, off_diag, B);  // [B,1]
    Tensor pos_sum =
        sum_lastdim(mul(sims, Tensor::from(Shape::of(B, B), positives)));
    Tensor per_anchor =
        sub(log_denom, mul(pos_sum, Tensor::from(Shape::of(B, 1), inv_cnt)));
    Tensor gated = mul(per_anchor, Tensor::from(Shape::of(B, 1), active));
    return mul_scalar(sum_all(gated), 1.0 / n_active);
}

Tensor cross_layer_loss(const Tensor& zk, const Tensor& zk1,
                        const Tensor& gamma) {
    if (zk.rank() != 2 || zk1.rank() != 2 || zk.shape() != zk1.shape())
        throw UsageError("cross_layer_loss: stages must share [B,D], got " +
                         zk.shape().str() + " and " + zk1.shape().str());
    int B = zk.shape().dim(0);
    Tensor a = ensure_unit_rows(zk, "cross_layer_loss");
    Tensor b = ensure_unit_rows(zk1, "cross_layer_loss");
    Tensor sims = div(matmul_nt(a, b), gamma);  // [B,B]

    std::vector<double> all_mask(static_cast<size_t>(B) * B, 1.0);
    std::vector<double> diag(static_cast<size_t>(B) * B, 0.0);
    for (int i = 0; i < B; ++i) diag[i * B + i] = 1.0;

    Tensor log_denom = masked_logsumexp_rows(sims, all_mask, B);  // [B,1]
    Tensor pos = sum_lastdim(mul(sims, Tensor::from(Shape::of(B, B), diag)));
    return mul_scalar(sum_all(sub(log_denom, pos)), 1.0 / B);
}

Tensor hierarchical_loss(const Tensor& f1, const Tensor& f2, const Tensor& f3,
                         const std::vector<int>& labels,
                         const ContrastiveParams& p,
                         const ContrastiveConfig& cfg) {
    Tensor gamma = contrastive_temperature(p, cfg);
    Tensor z1 = pool_normalize(f1);
    Tensor z2 = pool_normalize(f2);
    Tensor z3 = pool_normalize(f3);
    Tensor intra = add(add(intra_layer_loss(z1, labels, gamma),
                           intra_layer_loss(z2, labels, gamma)),
                       intra_layer_loss(z3, labels, gamma));
    Tensor cross = add(cross_layer_loss(z1, z2, gamma),
                       cross_layer_loss(z2, z3, gamma));
    return add(mul_scalar(intra, 1.0 / 3.0),
               mul_scalar(cross, cfg.beta / 2.0));
}

namespace {

// p_t as a tape tensor: label-selected sigmoid probability, clamped.
Tensor true_class_prob(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 1)
        throw UsageError("loss: logits must be rank-1 [B]");
    int B = logits.shape().dim(0);
    if (static_cast<int>(labels.size()) != B)
        throw UsageError("loss: labels length mismatch: " + std::to_string(B) +
                         " logits vs " + std::to_string(labels.size()) +
                         " labels");
    std::vector<double> y(B), yneg(B);
    for (int i = 0; i < B; ++i) {
        y[i] = labels[i] ? 1.0 : 0.0;
        yneg[i] = 1.0 - y[i];
    }
    Tensor p = sigmoid(logits);
    Tensor pt = add(mul(p, Tensor::from(Shape::of(B), y)),
                    mul(sub(Tensor::full(Shape::of(1), 1.0), p),
                        Tensor::from(Shape::of(B), yneg)));
    return clamp(pt, 1e-7, 1.0 - 1e-7);
}

}  // namespace

Tensor focal_loss(const Tensor& logits, const std::vector<int>& labels,
                  const FocalConfig& cfg) {
    Tensor pt = true_class_prob(logits, labels);
    Tensor log_pt = log(pt);
    // (1-p_t)^gamma via exp(gamma * log(1-p_t)); the clamp keeps 1-p_t > 0
    Tensor one_minus = sub(Tensor::full(Shape::of(1), 1.0), pt);
    Tensor modulator = exp(mul_scalar(log(one_minus), cfg.gamma_f));
    Tensor per_sample = mul_scalar(mul(modulator, log_pt), -cfg.alpha_f);
    return mean_all(per_sample);
}

Tensor weighted_ce(const Tensor& logits, const std::vector<int>& labels,
                   double pos_weight) {
    if (pos_weight <= 0)
        throw ConfigError("weighted_ce: pos_weight must be positive");
    Tensor pt = true_class_prob(logits, labels);
    int B = logits.shape().dim(0);
    std::vector<double> w(B);
    for (int i = 0; i < B; ++i) w[i] = labels[i] ? pos_weight : 1.0;
    Tensor weighted = mul(log(pt), Tensor::from(Shape::of(B), w));
    return mul_scalar(mean_all(weighted), -1.0);
}

Tensor total_loss(const Tensor& l_c, const Tensor& l_cont, int epoch,
                  const LossSchedule& sched) {
    if (epoch < 0) throw UsageError("total_loss: epoch must be >= 0");
    double lam = sched.lambda_at(epoch);
    if (lam == 0.0) return l_c;
    return add(l_c, mul_scalar(l_cont, lam));
}

}  // namespace uniptms
