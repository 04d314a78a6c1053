#include "uniptms/params.hpp"

#include <cmath>

#include "uniptms/error.hpp"

namespace uniptms {

Tensor ParamStore::add(const std::string& path, Tensor t) {
    if (index_.count(path))
        throw UsageError("ParamStore: duplicate parameter path '" + path + "'");
    t.set_requires_grad(true);
    index_[path] = order_.size();
    order_.push_back(Param{path, t});
    return t;
}

bool ParamStore::has(const std::string& path) const {
    return index_.count(path) != 0;
}

Tensor ParamStore::at(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end())
        throw UsageError("ParamStore: unknown parameter path '" + path + "'");
    return order_[it->second].tensor;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(order_.size());
    for (const auto& p : order_) out.push_back(p.tensor);
    return out;
}

std::vector<Tensor> ParamStore::tensors_with_prefix(
    const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& p : order_)
        if (p.path.rfind(prefix, 0) == 0) out.push_back(p.tensor);
    return out;
}

long long ParamStore::total_count() const {
    long long n = 0;
    for (const auto& p : order_) n += p.tensor.numel();
    return n;
}

long long ParamStore::count_prefix(const std::string& prefix) const {
    long long n = 0;
    for (const auto& p : order_)
        if (p.path.rfind(prefix, 0) == 0) n += p.tensor.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& p : order_) p.tensor.zero_grad();
}

Tensor init_normal(const Shape& s, Rng& rng, double stddev) {
    std::vector<double> v(s.numel());
    for (auto& x : v) x = rng.normal() * stddev;
    return Tensor::from(s, std::move(v));
}

Tensor init_xavier(const Shape& s, Rng& rng) {
    long long fan_in = 1, fan_out = s.dim(s.rank() - 1);
    for (int i = 0; i + 1 < s.rank(); ++i) fan_in *= s.dim(i);
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return init_normal(s, rng, stddev);
}

Tensor init_zeros(const Shape& s) { return Tensor::zeros(s); }

Tensor init_full(const Shape& s, double v) { return Tensor::full(s, v); }

}  // namespace uniptms
