#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "uniptms/metrics.hpp"
#include "uniptms/rng.hpp"

using namespace uniptms;

namespace {

// O(n^2) pairwise AUC oracle: ties count 1/2.
double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0;
    long long pairs = 0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j) {
            if (!(y[i] == 1 && y[j] == 0)) continue;
            ++pairs;
            if (s[i] > s[j])
                wins += 1.0;
            else if (s[i] == s[j])
                wins += 0.5;
        }
    return wins / pairs;
}

// Exhaustive-threshold AP oracle over distinct score values, descending.
double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    std::set<double, std::greater<double>> thresholds(s.begin(), s.end());
    long long npos = 0;
    for (int v : y) npos += v;
    double ap = 0, prev_r = 0;
    for (double t : thresholds) {
        long long tp = 0, fp = 0;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) (y[i] ? ++tp : ++fp);
        }
        double r = static_cast<double>(tp) / npos;
        double p = static_cast<double>(tp) / (tp + fp);
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    return ap;
}

double mcc_oracle(long long tp, long long tn, long long fp, long long fn) {
    double f1 = tp + fp, f2 = tp + fn, f3 = tn + fp, f4 = tn + fn;
    if (f1 == 0 || f2 == 0 || f3 == 0 || f4 == 0) return 0.0;
    return (static_cast<double>(tp) * tn - static_cast<double>(fp) * fn) /
           std::sqrt(f1 * f2 * f3 * f4);
}

}  // namespace

TEST_CASE("perfect separation gives MCC/AUC/AP of one") {
    std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
    std::vector<int> y = {1, 1, 0, 0};
    auto r = compute_metrics(s, y, 0.5);
    CHECK(r.mcc == doctest::Approx(1.0));
    CHECK(r.auc == doctest::Approx(1.0));
    CHECK(r.ap == doctest::Approx(1.0));
    CHECK(r.acc == doctest::Approx(1.0));
}

TEST_CASE("MCC of (2,2,1,1) is exactly one third") {
    // scores chosen so the confusion at 0.5 is tp=2 tn=2 fp=1 fn=1
    std::vector<double> s = {0.9, 0.8, 0.1, 0.6, 0.2, 0.3};
    std::vector<int> y = {1, 1, 1, 0, 0, 0};
    auto r = compute_metrics(s, y, 0.5);
    CHECK(r.tp == 2);
    CHECK(r.tn == 2);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.mcc == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("spec AUC and AP worked example") {
    std::vector<double> s = {0.9, 0.4, 0.8, 0.3};
    std::vector<int> y = {1, 1, 0, 0};
    auto r = compute_metrics(s, y, 0.5);
    CHECK(r.auc == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(r.ap == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("metrics agree with brute-force oracles on random instances") {
    Rng rng(2024);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng.next_u64() % 11);  // 2..12
        std::vector<double> s(n);
        std::vector<int> y(n);
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            // quantized scores generate plenty of ties
            s[i] = static_cast<double>(rng.next_u64() % 5) / 4.0;
            y[i] = static_cast<int>(rng.next_u64() % 2);
            (y[i] ? has_pos : has_neg) = true;
        }
        auto r = compute_metrics(s, y, 0.5);
        CHECK(r.mcc == doctest::Approx(mcc_oracle(r.tp, r.tn, r.fp, r.fn))
                           .epsilon(1e-12));
        if (has_pos && has_neg) {
            REQUIRE(r.auc_defined);
            REQUIRE(r.ap_defined);
            CHECK(std::abs(r.auc - auc_oracle(s, y)) < 1e-12);
            CHECK(std::abs(r.ap - ap_oracle(s, y)) < 1e-12);
            ++checked;
        } else {
            CHECK_FALSE(r.auc_defined);
            CHECK_FALSE(r.ap_defined);
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("MCC is invariant under label-and-prediction complement") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 4 + static_cast<int>(rng.next_u64() % 9);
        std::vector<double> s(n), sc(n);
        std::vector<int> y(n), yc(n);
        for (int i = 0; i < n; ++i) {
            s[i] = rng.uniform();
            y[i] = static_cast<int>(rng.next_u64() % 2);
            sc[i] = 1.0 - s[i] - 1e-12;  // complemented prediction
            yc[i] = 1 - y[i];
        }
        auto a = compute_metrics(s, y, 0.5);
        auto b = compute_metrics(sc, yc, 0.5);
        CHECK(a.mcc == doctest::Approx(b.mcc).epsilon(1e-9));
    }
}

TEST_CASE("length mismatch raises a usage error") {
    CHECK_THROWS_AS(compute_metrics({0.5, 0.6}, {1}), UsageError);
}
