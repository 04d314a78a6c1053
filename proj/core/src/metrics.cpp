#include "uniptms/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace uniptms {

std::string MetricsReport::tsv_header() {
    return "config\tACC\tSEN\tSPEC\tMCC\tAUC\tAP\tparams\tms/sample";
}

std::string MetricsReport::tsv_row(const std::string& config, long long params,
                                   double ms_per_sample) const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << config << '\t' << acc << '\t' << sen << '\t' << spec << '\t' << mcc
       << '\t';
    if (auc_defined)
        os << auc;
    else
        os << "NA";
    os << '\t';
    if (ap_defined)
        os << ap;
    else
        os << "NA";
    os << '\t' << params << '\t' << ms_per_sample;
    return os.str();
}

MetricsReport compute_metrics(const std::vector<double>& scores,
                              const std::vector<int>& labels,
                              double threshold) {
    if (scores.size() != labels.size())
        throw UsageError("compute_metrics: " + std::to_string(scores.size()) +
                         " scores vs " + std::to_string(labels.size()) +
                         " labels");
    MetricsReport r;
    r.threshold = threshold;
    long long n = static_cast<long long>(scores.size());
    long long npos = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (labels[i]) {
            ++npos;
            pred ? ++r.tp : ++r.fn;
        } else {
            pred ? ++r.fp : ++r.tn;
        }
    }
    long long nneg = n - npos;
    r.acc = n > 0 ? static_cast<double>(r.tp + r.tn) / n : 0.0;
    r.sen = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
    r.spec = (r.tn + r.fp) > 0 ? static_cast<double>(r.tn) / (r.tn + r.fp) : 0.0;
    double f1 = static_cast<double>(r.tp + r.fp), f2 = static_cast<double>(r.tp + r.fn);
    double f3 = static_cast<double>(r.tn + r.fp), f4 = static_cast<double>(r.tn + r.fn);
    if (f1 > 0 && f2 > 0 && f3 > 0 && f4 > 0) {
        r.mcc = (static_cast<double>(r.tp) * r.tn -
                 static_cast<double>(r.fp) * r.fn) /
                std::sqrt(f1 * f2 * f3 * f4);
    } else {
        r.mcc = 0.0;
    }

    if (npos == 0 || nneg == 0) return r;

    // tie-aware AUC via average ranks (ties contribute 1/2 per pair)
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() &&
               scores[order[j + 1]] == scores[order[i]])
            ++j;
        double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;  // 1-based
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0;
    for (size_t k = 0; k < scores.size(); ++k)
        if (labels[k]) rank_sum_pos += rank[k];
    double u = rank_sum_pos - static_cast<double>(npos) * (npos + 1) / 2.0;
    r.auc = u / (static_cast<double>(npos) * nneg);
    r.auc_defined = true;

    // AP: sweep distinct thresholds in descending score order
    std::vector<size_t> desc(order.rbegin(), order.rend());
    double ap = 0.0, prev_recall = 0.0;
    long long tp_run = 0, seen = 0;
    size_t k = 0;
    while (k < desc.size()) {
        size_t j = k;
        while (j + 1 < desc.size() && scores[desc[j + 1]] == scores[desc[k]])
            ++j;
        for (size_t q = k; q <= j; ++q) {
            ++seen;
            if (labels[desc[q]]) ++tp_run;
        }
        double recall = static_cast<double>(tp_run) / npos;
        double precision = static_cast<double>(tp_run) / seen;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        k = j + 1;
    }
    r.ap = ap;
    r.ap_defined = true;
    return r;
}

}  // namespace uniptms
