#pragma once

#include <string>
#include <vector>

#include "uniptms/error.hpp"

namespace uniptms {

struct MetricsReport {
    long long tp = 0, tn = 0, fp = 0, fn = 0;
    double acc = 0, sen = 0, spec = 0, mcc = 0;
    double auc = 0, ap = 0;
    bool auc_defined = false, ap_defined = false;
    double threshold = 0.5;

    std::string tsv_row(const std::string& config, long long params,
                        double ms_per_sample) const;
    static std::string tsv_header();
};

// Confusion metrics at the threshold (prediction = score >= threshold),
// tie-aware Mann-Whitney AUC and step-interpolated AP over the descending
// score sweep. AUC/AP are undefined unless both classes are present.
MetricsReport compute_metrics(const std::vector<double>& scores,
                              const std::vector<int>& labels,
                              double threshold = 0.5);

}  // namespace uniptms
