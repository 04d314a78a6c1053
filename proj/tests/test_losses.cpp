#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "uniptms/losses.hpp"

using namespace uniptms;

namespace {

Tensor unit_rows(std::vector<std::vector<double>> rows) {
    int B = static_cast<int>(rows.size());
    int D = static_cast<int>(rows[0].size());
    std::vector<double> flat;
    for (auto& r : rows) {
        double n = 0;
        for (double v : r) n += v * v;
        n = std::sqrt(n);
        for (double v : r) flat.push_back(v / n);
    }
    return Tensor::from(Shape::of(B, D), flat);
}

Tensor rand_rows(int B, int D, Rng& rng, double scale = 1.0) {
    std::vector<double> v(static_cast<size_t>(B) * D);
    for (auto& x : v) x = rng.normal() * scale;
    return Tensor::from(Shape::of(B, D), v);
}

}  // namespace

TEST_CASE("intra_layer_loss: closed forms and symmetries") {
    Tensor g1 = Tensor::scalar(1.0);

    // two identical same-class vectors: the single positive IS the whole
    // denominator, so the loss is exactly zero
    Tensor z2 = unit_rows({{1, 0, 0}, {1, 0, 0}});
    CHECK(intra_layer_loss(z2, {1, 1}, g1).item() == doctest::Approx(0.0));

    // B=3, labels [A,A,B], z0.z1 = 1, z0.z2 = 0: anchor-0 term log(1+e^-1)
    Tensor z3 = unit_rows({{1, 0, 0}, {1, 0, 0}, {0, 1, 0}});
    double want_anchor0 = std::log(1.0 + std::exp(-1.0));  // 0.31326...
    // anchors 0 and 1 contribute that same value by symmetry; anchor 2 has
    // no positives; the mean over contributing anchors equals the term
    CHECK(intra_layer_loss(z3, {0, 0, 1}, g1).item() ==
          doctest::Approx(want_anchor0).epsilon(1e-9));

    // permutation invariance
    Rng rng(4);
    Tensor z = rand_rows(6, 5, rng);
    std::vector<int> labels = {0, 1, 1, 0, 1, 0};
    double base = intra_layer_loss(z, labels, g1).item();
    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    std::vector<double> pv(6 * 5);
    std::vector<int> pl(6);
    for (int i = 0; i < 6; ++i) {
        pl[i] = labels[perm[i]];
        for (int j = 0; j < 5; ++j)
            pv[i * 5 + j] = z.values()[perm[i] * 5 + j];
    }
    double permuted =
        intra_layer_loss(Tensor::from(Shape::of(6, 5), pv), pl, g1).item();
    CHECK(std::abs(base - permuted) < 1e-12);

    // relabeling bijection invariance (0<->1)
    std::vector<int> flipped;
    for (int l : labels) flipped.push_back(1 - l);
    CHECK(std::abs(intra_layer_loss(z, flipped, g1).item() - base) < 1e-12);

    CHECK_THROWS_AS(intra_layer_loss(unit_rows({{1, 0}}), {1}, g1), UsageError);
}

TEST_CASE("cross_layer_loss: closed forms") {
    Tensor g1 = Tensor::scalar(1.0);
    // orthonormal, identical across stages, B=2: log(1+e^-1) per anchor
    Tensor zk = unit_rows({{1, 0}, {0, 1}});
    double want = std::log(1.0 + std::exp(-1.0));
    CHECK(cross_layer_loss(zk, zk, g1).item() ==
          doctest::Approx(want).epsilon(1e-9));

    // B=1: numerator equals denominator
    Tensor z1 = unit_rows({{0.6, 0.8}});
    CHECK(cross_layer_loss(z1, z1, g1).item() == doctest::Approx(0.0));

    // simultaneous permutation of both stages leaves the loss unchanged
    Rng rng(9);
    Tensor a = rand_rows(5, 4, rng);
    Tensor b = rand_rows(5, 4, rng);
    double base = cross_layer_loss(a, b, g1).item();
    std::vector<int> perm = {4, 2, 0, 3, 1};
    std::vector<double> av(20), bv(20);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
            av[i * 4 + j] = a.values()[perm[i] * 4 + j];
            bv[i * 4 + j] = b.values()[perm[i] * 4 + j];
        }
    double permuted = cross_layer_loss(Tensor::from(Shape::of(5, 4), av),
                                       Tensor::from(Shape::of(5, 4), bv), g1)
                          .item();
    CHECK(std::abs(base - permuted) < 1e-12);

    CHECK_THROWS_AS(cross_layer_loss(a, rand_rows(4, 4, rng), g1), UsageError);
}

TEST_CASE("hierarchical_loss composition matches direct-sum oracle") {
    ParamStore ps;
    ContrastiveConfig cfg;  // beta = 0.7 default
    CHECK(cfg.beta == doctest::Approx(0.7));
    ContrastiveParams cp = build_contrastive(ps, "loss.", cfg);

    Tensor gamma = contrastive_temperature(cp, cfg);
    CHECK(gamma.item() == doctest::Approx(0.07).epsilon(1e-12));

    Rng rng(12);
    auto stage = [&](uint64_t s) {
        Rng r(s);
        std::vector<double> v(2 * 4 * 3);
        for (auto& x : v) x = r.normal();
        return Tensor::from(Shape::of(2, 4, 3), v);
    };
    Tensor f1 = stage(1), f2 = stage(2), f3 = stage(3);
    std::vector<int> labels = {0, 1};

    double total = hierarchical_loss(f1, f2, f3, labels, cp, cfg).item();

    Tensor z1 = pool_normalize(f1), z2 = pool_normalize(f2),
           z3 = pool_normalize(f3);
    double oracle = (intra_layer_loss(z1, labels, gamma).item() +
                     intra_layer_loss(z2, labels, gamma).item() +
                     intra_layer_loss(z3, labels, gamma).item()) /
                        3.0 +
                    (cfg.beta / 2.0) *
                        (cross_layer_loss(z1, z2, gamma).item() +
                         cross_layer_loss(z2, z3, gamma).item());
    CHECK(std::abs(total - oracle) < 1e-12);

    // all-zero stages: pooled vectors are zero, sims zero, losses equal the
    // uniform-denominator constants; composition still matches the oracle
    Tensor zf = Tensor::zeros(Shape::of(2, 4, 3));
    double total0 = hierarchical_loss(zf, zf, zf, labels, cp, cfg).item();
    Tensor zz = pool_normalize(zf);
    double oracle0 = intra_layer_loss(zz, labels, gamma).item() +
                     0.7 * cross_layer_loss(zz, zz, gamma).item();
    CHECK(std::abs(total0 - oracle0) < 1e-12);
}

TEST_CASE("contrastive losses are invariant to pre-normalization scaling") {
    Tensor g = Tensor::scalar(0.5);
    Rng rng(21);
    Tensor z = rand_rows(5, 6, rng);
    std::vector<int> labels = {1, 0, 1, 1, 0};
    double base = intra_layer_loss(z, labels, g).item();
    Tensor scaled = mul_scalar(z, 3.7);
    CHECK(intra_layer_loss(scaled, labels, g).item() ==
          doctest::Approx(base).epsilon(1e-9));
    double cbase = cross_layer_loss(z, scaled, g).item();
    CHECK(cross_layer_loss(mul_scalar(z, 0.2), mul_scalar(scaled, 5.0), g)
              .item() == doctest::Approx(cbase).epsilon(1e-9));
}

TEST_CASE("focal loss closed forms") {
    // p_t = 1 -> 0 (clamp keeps it finite)
    Tensor big = Tensor::from(Shape::of(1), {50.0});
    CHECK(focal_loss(big, {1}, {2.0, 1.0}).item() ==
          doctest::Approx(0.0).epsilon(1e-5));

    // gamma=0, alpha=1, p=0.5 -> ln 2
    Tensor zero = Tensor::from(Shape::of(1), {0.0});
    CHECK(focal_loss(zero, {1}, {0.0, 1.0}).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // gamma=2, alpha=1, p=0.5 -> 0.25 ln 2
    CHECK(focal_loss(zero, {1}, {2.0, 1.0}).item() ==
          doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));

    // negative samples mirror positives at -logit
    Tensor l = Tensor::from(Shape::of(1), {1.3});
    Tensor ln = Tensor::from(Shape::of(1), {-1.3});
    CHECK(focal_loss(l, {1}, {2.0, 0.25}).item() ==
          doctest::Approx(focal_loss(ln, {0}, {2.0, 0.25}).item()));
}

TEST_CASE("weighted cross-entropy closed forms") {
    Tensor zero = Tensor::from(Shape::of(1), {0.0});
    CHECK(weighted_ce(zero, {1}, 3.0).item() ==
          doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));

    // pos_weight = 1 equals plain BCE
    Rng rng(31);
    std::vector<double> lv(6);
    for (auto& v : lv) v = rng.normal();
    std::vector<int> labels = {1, 0, 1, 0, 0, 1};
    Tensor logits = Tensor::from(Shape::of(6), lv);
    double wce = weighted_ce(logits, labels, 1.0).item();
    double bce = 0;
    for (int i = 0; i < 6; ++i) {
        double p = 1.0 / (1.0 + std::exp(-lv[i]));
        double pt = labels[i] ? p : 1 - p;
        bce -= std::log(pt);
    }
    bce /= 6;
    CHECK(std::abs(wce - bce) < 1e-12);

    // loss strictly decreases as predictions approach the labels
    Tensor better = Tensor::from(
        Shape::of(6), {lv[0] + (labels[0] ? 1 : -1), lv[1] + (labels[1] ? 1 : -1),
                       lv[2] + (labels[2] ? 1 : -1), lv[3] + (labels[3] ? 1 : -1),
                       lv[4] + (labels[4] ? 1 : -1), lv[5] + (labels[5] ? 1 : -1)});
    CHECK(weighted_ce(better, labels, 2.0).item() <
          weighted_ce(logits, labels, 2.0).item());
}

TEST_CASE("loss schedule and total loss") {
    LossSchedule sched{0.5, 10};
    CHECK(sched.lambda_at(0) == doctest::Approx(0.5));
    CHECK(sched.lambda_at(5) == doctest::Approx(0.25));
    CHECK(sched.lambda_at(10) == 0.0);
    CHECK(sched.lambda_at(50) == 0.0);
    for (int t = 1; t <= 12; ++t)
        CHECK(sched.lambda_at(t) <= sched.lambda_at(t - 1));

    Tensor lc = Tensor::scalar(1.25);
    Tensor lcont = Tensor::scalar(0.5);
    CHECK(total_loss(lc, lcont, 0, sched).item() ==
          doctest::Approx(1.25 + 0.5 * 0.5));
    CHECK(total_loss(lc, lcont, 10, sched).item() == 1.25);  // exactly L_c
    CHECK(total_loss(lc, lcont, 99, sched).item() == 1.25);
}

TEST_CASE("losses are non-negative and differentiable, including through the temperature") {
    Rng rng(77);
    ParamStore ps;
    ContrastiveConfig cfg;
    ContrastiveParams cp = build_contrastive(ps, "loss.", cfg);

    // params feeding the stage tensors so the fd-check has leaves to probe
    Tensor w1 = rand_rows(3, 12, rng).set_requires_grad();
    Tensor w2 = rand_rows(3, 12, rng).set_requires_grad();
    Tensor w3 = rand_rows(3, 12, rng).set_requires_grad();
    std::vector<int> labels = {0, 1, 0};

    auto stages = [&] {
        Tensor f1 = reshape(w1, Shape::of(3, 2, 6));
        Tensor f2 = reshape(gelu(w2), Shape::of(3, 2, 6));
        Tensor f3 = reshape(tanh(w3), Shape::of(3, 2, 6));
        return std::array<Tensor, 3>{f1, f2, f3};
    };
    auto f = [&] {
        auto s = stages();
        return hierarchical_loss(s[0], s[1], s[2], labels, cp, cfg);
    };
    CHECK(f().item() >= 0.0);
    CHECK(finite_diff_check(f, {w1, w2, w3, cp.gamma_raw}, {1e-5, 6, 3}) <
          1e-4);

    Tensor logits = rand_rows(1, 5, rng);
    Tensor lg = reshape(logits, Shape::of(5)).set_requires_grad();
    std::vector<int> ll = {1, 0, 1, 1, 0};
    auto ff = [&] { return focal_loss(lg, ll, {2.0, 0.25}); };
    CHECK(ff().item() >= 0.0);
    CHECK(finite_diff_check(ff, {lg}, {1e-5, 5, 7}) < 1e-4);
    auto fw = [&] { return weighted_ce(lg, ll, 2.5); };
    CHECK(fw().item() >= 0.0);
    CHECK(finite_diff_check(fw, {lg}, {1e-5, 5, 9}) < 1e-4);
}

TEST_CASE("temperature stays above its floor") {
    ParamStore ps;
    ContrastiveConfig cfg;
    ContrastiveParams cp = build_contrastive(ps, "loss.", cfg);
    for (double raw : {-50.0, -5.0, 0.0, 3.0}) {
        cp.gamma_raw.values()[0] = raw;
        CHECK(contrastive_temperature(cp, cfg).item() >= cfg.temperature_floor);
    }
}
