#pragma once

#include <functional>
#include <string>
#include <vector>

#include "uniptms/metrics.hpp"
#include "uniptms/model.hpp"

namespace uniptms {

// Adam with bias correction; state order follows the ParamStore.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    long long t = 0;
};

void adam_step(ParamStore& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Runs fn(i) for i in [0, n) on up to `workers` threads (UPTM_THREADS caps
// the count; workers <= 1 runs inline). fn must be thread-safe.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);
int worker_count();

struct Dataset {
    std::vector<FeatureBundle> bundles;
    std::vector<int> labels;
    std::vector<std::string> ids;
};

// Class-conditional Gaussian features: every stream gets a class mean offset
// of +-separation/2 along a per-stream random unit direction.
Dataset synth_dataset(uint64_t seed, int n_per_class, double separation,
                      const ModelConfig& cfg);

// Model scores (sigmoid of the logit) in dataset order; evaluation mode,
// no gradients, fanned out across worker threads.
std::vector<double> predict_scores(Model& model, const Dataset& ds,
                                   int batch_size = 16);
MetricsReport evaluate(Model& model, const Dataset& ds, double threshold);

struct EpochStats {
    int epoch = 0;
    double loss_cls = 0, loss_cont = 0, lambda = 0;
    MetricsReport val;
    double wall_seconds = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// Deterministic full training loop: shuffled minibatches, focal or weighted
// CE plus the scheduled hierarchical contrastive term, Adam updates,
// per-epoch validation. Throws NumericError naming the epoch on divergence.
TrainHistory train(Model& model, const Dataset& train_set,
                   const Dataset& val_set);

}  // namespace uniptms
