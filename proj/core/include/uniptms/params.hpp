#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "uniptms/rng.hpp"
#include "uniptms/tensor.hpp"

namespace uniptms {

struct Param {
    std::string path;
    Tensor tensor;  // leaf with requires_grad
};

// Ordered collection of named parameters. Iteration order is insertion
// order, which the model builder keeps deterministic, so optimizer state
// and checkpoints are reproducible.
class ParamStore {
  public:
    Tensor add(const std::string& path, Tensor t);
    bool has(const std::string& path) const;
    Tensor at(const std::string& path) const;

    const std::vector<Param>& all() const { return order_; }
    std::vector<Tensor> tensors() const;
    // Tensors whose path starts with one of the given prefixes.
    std::vector<Tensor> tensors_with_prefix(const std::string& prefix) const;

    long long total_count() const;
    long long count_prefix(const std::string& prefix) const;

    void zero_grads();
    size_t size() const { return order_.size(); }

  private:
    std::vector<Param> order_;
    std::unordered_map<std::string, size_t> index_;
};

// Weight initializers (all driven by the shared Rng).
Tensor init_normal(const Shape& s, Rng& rng, double stddev);
Tensor init_xavier(const Shape& s, Rng& rng);  // fan_in/fan_out from shape
Tensor init_zeros(const Shape& s);
Tensor init_full(const Shape& s, double v);

}  // namespace uniptms
