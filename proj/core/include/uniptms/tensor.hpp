#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uniptms/error.hpp"

namespace uniptms {

// Dense row-major shape of rank 1..3. Rank-3 tensors are laid out as
// [batch, length, channels]; unused leading extents are reported as 1 by
// dim() so broadcasting code can treat every tensor as rank 3.
class Shape {
  public:
    Shape() = default;
    Shape(std::initializer_list<int> dims);
    static Shape of(int a);
    static Shape of(int a, int b);
    static Shape of(int a, int b, int c);

    int rank() const { return rank_; }
    // Extent of axis i counted from the last axis: dim(rank()-1) is the
    // channel axis. Out-of-range leading axes read as 1.
    int dim(int i) const;
    // Extent counted from the back with rank-3 padding: back(0) = channels.
    int back(int i) const;
    long long numel() const;
    bool operator==(const Shape& o) const;
    bool operator!=(const Shape& o) const { return !(*this == o); }
    std::string str() const;

  private:
    int rank_ = 0;
    std::array<int, 3> d_{1, 1, 1};  // right-aligned: d_[2] = last axis
};

struct TensorNode;

// Value-semantics handle over a node in the autodiff graph. Ops record
// their inputs on the node so a later backward() can replay the tape in
// exact reverse execution order. Copying a Tensor aliases the node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, double v);
    static Tensor from(const Shape& s, std::vector<double> data);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return shape().rank(); }
    long long numel() const { return shape().numel(); }

    const std::vector<double>& values() const;
    std::vector<double>& values();  // leaf mutation only (params, inputs)
    double item() const;            // value of a one-element tensor

    Tensor& set_requires_grad(bool b = true);
    bool requires_grad() const;
    // Accumulated gradient of a leaf; zeros if backward never reached it.
    std::vector<double> grad() const;
    // Internal accumulator without copying; empty when never reached.
    const std::vector<double>& grad_raw() const;
    void zero_grad();

    uint64_t node_seq() const;
    TensorNode* node() const { return node_.get(); }

  private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op(const Shape& shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward_fn,
                          const char* op_name);
    friend void backward(const Tensor& loss);
};

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // persistent accumulator, leaves only
    std::vector<double> adj;   // scratch adjoint during one backward pass
    bool requires_grad = false;
    uint64_t seq = 0;  // global creation order, drives reverse replay
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    const char* op = "leaf";
};

// Adds `contrib` into the scratch adjoint of `parent` (no-op when the
// parent does not require grad). Backward rules are built from this.
void accumulate_adj(TensorNode& parent, const std::vector<double>& contrib);
void accumulate_adj(TensorNode& parent, long long index, double v);

// Low-level node factory. Public so tests can inject custom ops (including
// deliberately wrong gradients for negative controls).
Tensor make_op(const Shape& shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn,
               const char* op_name);

// While alive, ops do not record parents or backward functions, so
// intermediate values are freed as soon as expressions complete.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};
bool grad_enabled();

// Toggles the NaN/Inf scan that runs after every forward op (on by default).
void set_finite_checks(bool on);
bool finite_checks_enabled();

// ---- primitive ops -------------------------------------------------------
// Binary ops broadcast NumPy-style: aligned from the last axis, extents must
// match or be 1. Mismatched non-unit extents raise DimError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k] -> [m,n]
Tensor bmm(const Tensor& a, const Tensor& b);        // [B,m,k]x[B,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);     // [B,m,k]x[B,n,k]

// y = x.W + b with x of rank 2 [N,Ci] or rank 3 [B,L,Ci]; bias optional
// (pass an undefined Tensor to skip).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// "Same" 1D convolution over the length axis. x [B,L,Ci], kernel
// [K,Ci,Co] with K odd, optional bias [Co]; zero padding, stride 1.
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int dilation = 1);
// Depthwise variant: kernel [K,C], x [B,L,C].
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel,
                        const Tensor& bias);
// y[b,t,c] = x[b,t-offset,c], zero outside; building block for
// sample-dependent depthwise kernels.
Tensor shift_length(const Tensor& x, int offset);

// softmax(scale * x) along the last axis, max-subtracted.
Tensor softmax_lastdim(const Tensor& x, double scale = 1.0);

// Normalizes over the channel axis then applies gain/bias [C].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor mean_over_length(const Tensor& x);    // [B,L,C] -> [B,1,C]
Tensor mean_over_channels(const Tensor& x);  // [B,L,C] -> [B,L,1]
Tensor mean_all(const Tensor& x);            // -> scalar [1]
Tensor sum_all(const Tensor& x);             // -> scalar [1]
Tensor sum_lastdim(const Tensor& x);         // [..,C] -> [..,1]

Tensor concat_lastdim(const std::vector<Tensor>& xs);
Tensor slice_lastdim(const Tensor& x, int from, int len);
Tensor concat_length(const std::vector<Tensor>& xs);  // rank-3 only
Tensor slice_length(const Tensor& x, int from, int len);
Tensor reshape(const Tensor& x, const Shape& s);

// Batch norm over (batch, length) per channel. In batch mode the statistics
// come from x itself (differentiable); otherwise the given running mean/var
// are used as constants.
Tensor batch_norm_channels(const Tensor& x, const Tensor& gain,
                           const Tensor& bias, bool use_batch_stats,
                           const std::vector<double>& running_mean,
                           const std::vector<double>& running_var,
                           double eps = 1e-5,
                           std::vector<double>* batch_mean_out = nullptr,
                           std::vector<double>* batch_var_out = nullptr);

// Seeds d(loss)=1 and replays the tape in reverse execution order,
// accumulating adjoints additively; leaf nodes with requires_grad receive
// the result in their persistent grad. Throws UsageError on non-scalars.
void backward(const Tensor& loss);

struct FiniteDiffOptions {
    double h = 1e-5;
    int max_coords_per_tensor = 8;
    uint64_t seed = 0x5eed;
};

// Compares analytic gradients of f() against central differences on a
// sampled subset of coordinates of `params`. Returns
// max |analytic - numeric| / (|analytic| + 1e-12) over the sample.
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params,
                         const FiniteDiffOptions& opts = {});

}  // namespace uniptms
