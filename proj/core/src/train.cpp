#include "uniptms/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace uniptms {

void adam_step(ParamStore& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    const auto& all = params.all();
    if (state.m.empty()) {
        state.m.resize(all.size());
        state.v.resize(all.size());
        for (size_t i = 0; i < all.size(); ++i) {
            state.m[i].assign(all[i].tensor.numel(), 0.0);
            state.v[i].assign(all[i].tensor.numel(), 0.0);
        }
    }
    ++state.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < all.size(); ++i) {
        Tensor t = all[i].tensor;
        const std::vector<double>& g = t.grad_raw();
        if (g.empty()) continue;  // unreached parameter: grad is zero
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& w = t.values();
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1 * m[j] + (1 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1 - beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("UPTM_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1 && cap < n) n = cap;
    }
    return n;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

Dataset synth_dataset(uint64_t seed, int n_per_class, double separation,
                      const ModelConfig& cfg) {
    if (separation < 0)
        throw ConfigError("synth_dataset: separation must be >= 0");
    Rng rng(seed);
    int L = cfg.window;
    struct Stream {
        Tensor FeatureBundle::*field;
        int dim;
    };
    const Stream streams[] = {
        {&FeatureBundle::master_a, cfg.master_a_dim},
        {&FeatureBundle::master_b, cfg.master_b_dim},
        {&FeatureBundle::aux_ember, cfg.ember_dim},
        {&FeatureBundle::aux_pseaac, cfg.pseaac_dim()},
        {&FeatureBundle::aux_blosum, 20},
        {&FeatureBundle::aux_aaindex, cfg.aaindex_count},
    };

    // one random unit direction per stream
    std::vector<std::vector<double>> dirs;
    for (const auto& s : streams) {
        std::vector<double> u(s.dim);
        double norm = 0;
        for (auto& x : u) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : u) x /= norm;
        dirs.push_back(std::move(u));
    }

    Dataset ds;
    int total = 2 * n_per_class;
    ds.bundles.reserve(total);
    for (int i = 0; i < total; ++i) {
        int label = i % 2;
        double off = (label ? 0.5 : -0.5) * separation;
        FeatureBundle fb;
        for (size_t si = 0; si < std::size(streams); ++si) {
            int d = streams[si].dim;
            std::vector<double> v(static_cast<size_t>(L) * d);
            for (int r = 0; r < L; ++r)
                for (int c = 0; c < d; ++c)
                    v[static_cast<size_t>(r) * d + c] =
                        rng.normal() + off * dirs[si][c];
            fb.*streams[si].field = Tensor::from(Shape::of(L, d), std::move(v));
        }
        ds.bundles.push_back(std::move(fb));
        ds.labels.push_back(label);
        ds.ids.push_back("synth" + std::to_string(i));
    }
    return ds;
}

std::vector<double> predict_scores(Model& model, const Dataset& ds,
                                   int batch_size) {
    int n = static_cast<int>(ds.bundles.size());
    std::vector<double> scores(n, 0.0);
    int n_batches = (n + batch_size - 1) / batch_size;
    ForwardMode mode{false, false, 0.1};
    parallel_for(n_batches, worker_count(), [&](int bi) {
        NoGradGuard ng;
        std::vector<int> idx;
        for (int i = bi * batch_size; i < std::min n_batches_end(bi, batch_size, n); ++i)
            idx.push_back(i);
        BatchInput in = stack_bundles(ds.bundles, idx);
        ModelOutput out = model_forward(model, in, mode);
        Tensor probs = sigmoid(out.logits);
        for (size_t k = 0; k < idx.size(); ++k)
            scores[idx[k]] = probs.values()[k];
    });
    return scores;
}

MetricsReport evaluate(Model& model, const Dataset& ds, double threshold) {
    return compute_metrics(predict_scores(model, ds), ds.labels, threshold);
}

TrainHistory train(Model& model, const Dataset& train_set,
                   const Dataset& val_set) {
    const ModelConfig& cfg = model.cfg;
    if (train_set.bundles.empty())
        throw UsageError("train: empty training set");
    long long n_pos = 0;
    for (int l : train_set.labels) n_pos += l;
    long long n_neg = static_cast<long long>(train_set.labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UsageError("train: both classes must be present");
    double pos_weight = cfg.pos_weight > 0
                            ? cfg.pos_weight
                            : static_cast<double>(n_neg) / n_pos;

    LossSchedule sched{cfg.lambda0, cfg.epochs};
    AdamState adam;
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    int n = static_cast<int>(train_set.bundles.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    TrainHistory history;
    double best_mcc = -2.0;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        // Fisher-Yates with the dedicated rng keeps runs reproducible
        for (int i = n - 1; i > 0; --i) {
            int j = shuffle_rng.uniform_int(0, i);
            std::swap(order[i], order[j]);
        }
        double lam = sched.lambda_at(epoch);
        double sum_cls = 0, sum_cont = 0;
        int batches = 0;
        try {
            for (int start = 0; start < n; start += cfg.batch_size) {
                std::vector<int> idx(
                    order.begin() + start,
                    order.begin() + std::min(n, start + cfg.batch_size));
                if (static_cast<int>(idx.size()) < 2) continue;
                std::vector<int> labels;
                for (int i : idx) labels.push_back(train_set.labels[i]);

                BatchInput in = stack_bundles(train_set.bundles, idx);
                ForwardMode mode{true, true, 0.1};
                ModelOutput out = model_forward(model, in, mode);
                Tensor l_c =
                    cfg.loss == LossKind::Focal
                        ? focal_loss(out.logits, labels, cfg.focal)
                        : weighted_ce(out.logits, labels, pos_weight);
                Tensor l_total = l_c;
                double cont_val = 0;
                if (lam > 0) {
                    Tensor l_cont =
                        hierarchical_loss(out.f1, out.f2, out.f3, labels,
                                          model.contrastive, cfg.contrastive);
                    cont_val = l_cont.item();
                    l_total = total_loss(l_c, l_cont, epoch, sched);
                }
                if (!std::isfinite(l_total.item()))
                    throw NumericError("non-finite loss");
                model.params.zero_grads();
                backward(l_total);
                adam_step(model.params, adam, cfg.learning_rate);
                sum_cls += l_c.item();
                sum_cont += cont_val;
                ++batches;
            }
        } catch (const NumericError& e) {
            throw NumericError("training diverged at epoch " +
                               std::to_string(epoch) + ": " + e.what());
        }

        EpochStats st;
        st.epoch = epoch;
        st.loss_cls = batches ? sum_cls / batches : 0;
        st.loss_cont = batches ? sum_cont / batches : 0;
        st.lambda = lam;
        if (!val_set.bundles.empty())
            st.val = evaluate(model, val_set, cfg.threshold);
        st.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        history.epochs.push_back(st);

        if (!val_set.bundles.empty()) {
            if (cfg.stop_mcc > 0 && st.val.mcc >= cfg.stop_mcc) break;
            if (cfg.early_stopping) {
                if (st.val.mcc > best_mcc) {
                    best_mcc = st.val.mcc;
                    since_best = 0;
                } else if (++since_best >= cfg.patience) {
                    break;
                }
            }
        }
    }
    return history;
}

}  // namespace uniptms
