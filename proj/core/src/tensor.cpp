#include "uniptms/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>
#include <unordered_set>

namespace uniptms {

// ---- Shape -----------------------------------------------------------------

Shape::Shape(std::initializer_list<int> dims) {
    if (dims.size() < 1 || dims.size() > 3)
        throw DimError("Shape: rank must be 1..3, got " +
                       std::to_string(dims.size()));
    rank_ = static_cast<int>(dims.size());
    int i = 3 - rank_;
    for (int v : dims) {
        if (v <= 0)
            throw DimError("Shape: extents must be positive, got " +
                           std::to_string(v));
        d_[i++] = v;
    }
}

Shape Shape::of(int a) { return Shape{a}; }
Shape Shape::of(int a, int b) { return Shape{a, b}; }
Shape Shape::of(int a, int b, int c) { return Shape{a, b, c}; }

int Shape::dim(int i) const {
    if (i < 0 || i >= rank_) throw DimError("Shape::dim: axis out of range");
    return d_[3 - rank_ + i];
}

int Shape::back(int i) const { return i < 3 ? d_[2 - i] : 1; }

long long Shape::numel() const {
    return static_cast<long long>(d_[0]) * d_[1] * d_[2];
}

bool Shape::operator==(const Shape& o) const {
    return rank_ == o.rank_ && d_ == o.d_;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << dim(i);
    os << ']';
    return os.str();
}

// ---- node plumbing ----------------------------------------------------------

namespace {

std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;
std::atomic<bool> g_finite_checks{true};

std::shared_ptr<TensorNode> new_node(const Shape& s, std::vector<double> v) {
    auto n = std::make_shared<TensorNode>();
    n->shape = s;
    n->value = std::move(v);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return n;
}

void check_finite(const TensorNode& n) {
    if (!g_finite_checks.load(std::memory_order_relaxed)) return;
    for (double v : n.value) {
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by op '") +
                               n.op + "'");
    }
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

// ---- Tensor ------------------------------------------------------------------

Tensor make_op(const Shape& shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn,
               const char* op_name) {
    if (static_cast<long long>(value.size()) != shape.numel())
        throw DimError(std::string("make_op(") + op_name +
                       "): value size does not match shape " + shape.str());
    auto n = new_node(shape, std::move(value));
    n->op = op_name;
    check_finite(*n);
    if (g_grad_enabled) {
        bool req = false;
        for (const Tensor& p : parents) {
            if (!p.defined())
                throw UsageError(std::string("make_op(") + op_name +
                                 "): undefined parent tensor");
            if (p.node_->requires_grad) req = true;
        }
        if (req) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (const Tensor& p : parents) n->parents.push_back(p.node_);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(const Shape& s) {
    return Tensor(new_node(s, std::vector<double>(s.numel(), 0.0)));
}

Tensor Tensor::full(const Shape& s, double v) {
    return Tensor(new_node(s, std::vector<double>(s.numel(), v)));
}

Tensor Tensor::from(const Shape& s, std::vector<double> data) {
    if (static_cast<long long>(data.size()) != s.numel())
        throw DimError("Tensor::from: data size " + std::to_string(data.size()) +
                       " does not match shape " + s.str());
    return Tensor(new_node(s, std::move(data)));
}

Tensor Tensor::scalar(double v) { return from(Shape::of(1), {v}); }

const Shape& Tensor::shape() const {
    if (!node_) throw UsageError("shape() on undefined tensor");
    return node_->shape;
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw UsageError("values() on undefined tensor");
    return node_->value;
}

std::vector<double>& Tensor::values() {
    if (!node_) throw UsageError("values() on undefined tensor");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1)
        throw UsageError("item() requires a one-element tensor, got " +
                         shape().str());
    return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
    if (!node_) throw UsageError("set_requires_grad on undefined tensor");
    if (b && !node_->parents.empty())
        throw UsageError("requires_grad can only be enabled on leaf tensors");
    node_->requires_grad = b;
    return *this;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<double> Tensor::grad() const {
    if (!node_) throw UsageError("grad() on undefined tensor");
    if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
    return node_->grad;
}

const std::vector<double>& Tensor::grad_raw() const {
    if (!node_) throw UsageError("grad_raw() on undefined tensor");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

uint64_t Tensor::node_seq() const { return node_ ? node_->seq : 0; }

void accumulate_adj(TensorNode& parent, const std::vector<double>& contrib) {
    if (!parent.requires_grad) return;
    if (parent.adj.empty()) parent.adj.assign(parent.value.size(), 0.0);
    for (size_t i = 0; i < contrib.size(); ++i) parent.adj[i] += contrib[i];
}

void accumulate_adj(TensorNode& parent, long long index, double v) {
    if (!parent.requires_grad) return;
    if (parent.adj.empty()) parent.adj.assign(parent.value.size(), 0.0);
    parent.adj[index] += v;
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw UsageError("backward on undefined tensor");
    if (loss.numel() != 1)
        throw UsageError("backward requires a scalar loss, got shape " +
                         loss.shape().str());
    TensorNode* root = loss.node();

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.push_back(p.get());
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](TensorNode* a, TensorNode* b) { return a->seq > b->seq; });

    root->adj.assign(1, 1.0);
    for (TensorNode* n : order) {
        if (!n->requires_grad || n->adj.empty()) continue;
        if (n->backward_fn) n->backward_fn(*n);
        if (n->parents.empty()) {
            if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
            for (size_t i = 0; i < n->adj.size(); ++i) n->grad[i] += n->adj[i];
        }
        n->adj.clear();
        n->adj.shrink_to_fit();
    }
}

// ---- broadcast helpers -------------------------------------------------------

namespace {

struct B3 {
    int b, l, c;  // padded rank-3 extents [batch, length, channels]
};

B3 padded(const Shape& s) { return {s.back(2), s.back(1), s.back(0)}; }

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    B3 pa = padded(a), pb = padded(b);
    auto join = [&](int x, int y) {
        if (x == y) return x;
        if (x == 1) return y;
        if (y == 1) return x;
        throw DimError(std::string(op) + ": shapes not broadcastable: " +
                       a.str() + " vs " + b.str());
    };
    int ob = join(pa.b, pb.b), ol = join(pa.l, pb.l), oc = join(pa.c, pb.c);
    int rank = std::max(a.rank(), b.rank());
    if (rank == 1) return Shape::of(oc);
    if (rank == 2) return Shape::of(ol, oc);
    return Shape::of(ob, ol, oc);
}

// Reduces a gradient over the broadcast output extents back onto the
// (possibly size-1) extents of one input.
std::vector<double> reduce_to(const std::vector<double>& g, const B3& out,
                              const B3& in) {
    std::vector<double> r(static_cast<size_t>(in.b) * in.l * in.c, 0.0);
    long long idx = 0;
    for (int b = 0; b < out.b; ++b) {
        int ib = in.b == 1 ? 0 : b;
        for (int l = 0; l < out.l; ++l) {
            int il = in.l == 1 ? 0 : l;
            long long base = (static_cast<long long>(ib) * in.l + il) * in.c;
            for (int c = 0; c < out.c; ++c, ++idx)
                r[base + (in.c == 1 ? 0 : c)] += g[idx];
        }
    }
    return r;
}

template <typename FwdFn, typename DaFn, typename DbFn>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdFn f,
                 DaFn dfa, DbFn dfb) {
    Shape os = broadcast_shape(a.shape(), b.shape(), name);
    B3 po = padded(os), pa = padded(a.shape()), pb = padded(b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(os.numel());
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    } else {
        long long idx = 0;
        for (int bb = 0; bb < po.b; ++bb) {
            long long ab = (pa.b == 1 ? 0 : bb), bbb = (pb.b == 1 ? 0 : bb);
            for (int l = 0; l < po.l; ++l) {
                long long al = (ab * pa.l + (pa.l == 1 ? 0 : l)) * pa.c;
                long long bl = (bbb * pb.l + (pb.l == 1 ? 0 : l)) * pb.c;
                for (int c = 0; c < po.c; ++c, ++idx)
                    out[idx] = f(av[al + (pa.c == 1 ? 0 : c)],
                                 bv[bl + (pb.c == 1 ? 0 : c)]);
            }
        }
    }
    return make_op(
        os, std::move(out), {a, b},
        [po, pa, pb, dfa, dfb](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            const auto& g = self.adj;
            long long idx = 0;
            std::vector<double> ga(na.requires_grad ? g.size() : 0);
            std::vector<double> gb(nb.requires_grad ? g.size() : 0);
            for (int bb = 0; bb < po.b; ++bb) {
                long long ab = (pa.b == 1 ? 0 : bb), bbb = (pb.b == 1 ? 0 : bb);
                for (int l = 0; l < po.l; ++l) {
                    long long al = (ab * pa.l + (pa.l == 1 ? 0 : l)) * pa.c;
                    long long bl = (bbb * pb.l + (pb.l == 1 ? 0 : l)) * pb.c;
                    for (int c = 0; c < po.c; ++c, ++idx) {
                        double x = na.value[al + (pa.c == 1 ? 0 : c)];
                        double y = nb.value[bl + (pb.c == 1 ? 0 : c)];
                        if (!ga.empty()) ga[idx] = dfa(x, y) * g[idx];
                        if (!gb.empty()) gb[idx] = dfb(x, y) * g[idx];
                    }
                }
            }
            if (!ga.empty())
                accumulate_adj(na, reduce_to(ga, po, pa));
            if (!gb.empty())
                accumulate_adj(nb, reduce_to(gb, po, pb));
        },
        name);
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& x, const char* name, F f, DF df) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    Shape s = x.shape();
    return make_op(
        s, std::move(out), {x},
        [df](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(self.adj.size());
            for (size_t i = 0; i < gx.size(); ++i)
                gx[i] = df(nx.value[i], self.value[i]) * self.adj[i];
            accumulate_adj(nx, gx);
        },
        name);
}

double stable_sigmoid(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

// ---- arithmetic ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, "add_scalar", [c](double x) { return x + c; },
        [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_op(
        a, "mul_scalar", [c](double x) { return x * c; },
        [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---- matmul family --------------------------------------------------------------

namespace {
// c[m,n] += a[m,k] * b[k,n], row-major, k-outer ordering for contiguous rows
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<long long>(i) * k;
        double* crow = c + static_cast<long long>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<long long>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<long long>(i) * k;
        double* crow = c + static_cast<long long>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<long long>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<long long>(i) * k;
        const double* brow = b + static_cast<long long>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + static_cast<long long>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimError("matmul expects rank-2 operands, got " + a.shape().str() +
                       " and " + b.shape().str());
    int m = a.shape().dim(0), k = a.shape().dim(1);
    int k2 = b.shape().dim(0), n = b.shape().dim(1);
    if (k != k2)
        throw DimError("matmul: inner extents differ: " + a.shape().str() +
                       " vs " + b.shape().str());
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    mm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_op(
        Shape::of(m, n), std::move(out), {a, b},
        [m, k, n](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            if (na.requires_grad) {
                std::vector<double> ga(na.value.size(), 0.0);
                mm_nt_acc(self.adj.data(), nb.value.data(), ga.data(), m, n, k);
                accumulate_adj(na, ga);
            }
            if (nb.requires_grad) {
                std::vector<double> gb(nb.value.size(), 0.0);
                mm_tn_acc(na.value.data(), self.adj.data(), gb.data(), m, k, n);
                accumulate_adj(nb, gb);
            }
        },
        "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimError("matmul_nt expects rank-2 operands, got " +
                       a.shape().str() + " and " + b.shape().str());
    int m = a.shape().dim(0), k = a.shape().dim(1);
    int n = b.shape().dim(0), k2 = b.shape().dim(1);
    if (k != k2)
        throw DimError("matmul_nt: inner extents differ: " + a.shape().str() +
                       " vs " + b.shape().str());
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    mm_nt_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_op(
        Shape::of(m, n), std::move(out), {a, b},
        [m, k, n](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            if (na.requires_grad) {  // dA = G * B
                std::vector<double> ga(na.value.size(), 0.0);
                mm_acc(self.adj.data(), nb.value.data(), ga.data(), m, n, k);
                accumulate_adj(na, ga);
            }
            if (nb.requires_grad) {  // dB = G^T * A
                std::vector<double> gb(nb.value.size(), 0.0);
                mm_tn_acc(self.adj.data(), na.value.data(), gb.data(), m, n, k);
                accumulate_adj(nb, gb);
            }
        },
        "matmul_nt");
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3)
        throw DimError("bmm expects rank-3 operands, got " + a.shape().str() +
                       " and " + b.shape().str());
    int B = a.shape().dim(0), m = a.shape().dim(1), k = a.shape().dim(2);
    if (b.shape().dim(0) != B || b.shape().dim(1) != k)
        throw DimError("bmm: incompatible shapes: " + a.shape().str() + " vs " +
                       b.shape().str());
    int n = b.shape().dim(2);
    std::vector<double> out(static_cast<size_t>(B) * m * n, 0.0);
    for (int bb = 0; bb < B; ++bb)
        mm_acc(a.values().data() + static_cast<long long>(bb) * m * k,
               b.values().data() + static_cast<long long>(bb) * k * n,
               out.data() + static_cast<long long>(bb) * m * n, m, k, n);
    return make_op(
        Shape::of(B, m, n), std::move(out), {a, b},
        [B, m, k, n](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            if (na.requires_grad) {
                std::vector<double> ga(na.value.size(), 0.0);
                for (int bb = 0; bb < B; ++bb)
                    mm_nt_acc(self.adj.data() + static_cast<long long>(bb) * m * n,
                              nb.value.data() + static_cast<long long>(bb) * k * n,
                              ga.data() + static_cast<long long>(bb) * m * k, m, n,
                              k);
                accumulate_adj(na, ga);
            }
            if (nb.requires_grad) {
                std::vector<double> gb(nb.value.size(), 0.0);
                for (int bb = 0; bb < B; ++bb)
                    mm_tn_acc(na.value.data() + static_cast<long long>(bb) * m * k,
                              self.adj.data() + static_cast<long long>(bb) * m * n,
                              gb.data() + static_cast<long long>(bb) * k * n, m, k,
                              n);
                accumulate_adj(nb, gb);
            }
        },
        "bmm");
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3)
        throw DimError("bmm_nt expects rank-3 operands, got " + a.shape().str() +
                       " and " + b.shape().str());
    int B = a.shape().dim(0), m = a.shape().dim(1), k = a.shape().dim(2);
    if (b.shape().dim(0) != B || b.shape().dim(2) != k)
        throw DimError("bmm_nt: incompatible shapes: " + a.shape().str() +
                       " vs " + b.shape().str());
    int n = b.shape().dim(1);
    std::vector<double> out(static_cast<size_t>(B) * m * n, 0.0);
    for (int bb = 0; bb < B; ++bb)
        mm_nt_acc(a.values().data() + static_cast<long long>(bb) * m * k,
                  b.values().data() + static_cast<long long>(bb) * n * k,
                  out.data() + static_cast<long long>(bb) * m * n, m, k, n);
    return make_op(
        Shape::of(B, m, n), std::move(out), {a, b},
        [B, m, k, n](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            if (na.requires_grad) {  // dA_b = G_b * B_b
                std::vector<double> ga(na.value.size(), 0.0);
                for (int bb = 0; bb < B; ++bb)
                    mm_acc(self.adj.data() + static_cast<long long>(bb) * m * n,
                           nb.value.data() + static_cast<long long>(bb) * n * k,
                           ga.data() + static_cast<long long>(bb) * m * k, m, n, k);
                accumulate_adj(na, ga);
            }
            if (nb.requires_grad) {  // dB_b = G_b^T * A_b
                std::vector<double> gb(nb.value.size(), 0.0);
                for (int bb = 0; bb < B; ++bb)
                    mm_tn_acc(self.adj.data() + static_cast<long long>(bb) * m * n,
                              na.value.data() + static_cast<long long>(bb) * m * k,
                              gb.data() + static_cast<long long>(bb) * n * k, m, n,
                              k);
                accumulate_adj(nb, gb);
            }
        },
        "bmm_nt");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2)
        throw DimError("linear: weight must be rank 2, got " + w.shape().str());
    int ci = w.shape().dim(0), co = w.shape().dim(1);
    int last = x.shape().dim(x.rank() - 1);
    if (last != ci)
        throw DimError("linear: input channels " + x.shape().str() +
                       " do not match weight " + w.shape().str());
    if (b.defined() && (b.rank() != 1 || b.shape().dim(0) != co))
        throw DimError("linear: bias shape " + b.shape().str() +
                       " does not match out channels " + std::to_string(co));
    long long rows = x.numel() / ci;
    std::vector<double> out(rows * co, 0.0);
    mm_acc(x.values().data(), w.values().data(), out.data(),
           static_cast<int>(rows), ci, co);
    if (b.defined()) {
        const auto& bv = b.values();
        for (long long r = 0; r < rows; ++r)
            for (int j = 0; j < co; ++j) out[r * co + j] += bv[j];
    }
    Shape os = x.rank() == 3 ? Shape::of(x.shape().dim(0), x.shape().dim(1), co)
               : x.rank() == 2 ? Shape::of(x.shape().dim(0), co)
                               : Shape::of(co);
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w};
    return make_op(
        os, std::move(out), std::move(parents),
        [rows, ci, co](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            TensorNode& nw = *self.parents[1];
            if (nx.requires_grad) {  // dX = G * W^T
                std::vector<double> gx(nx.value.size(), 0.0);
                mm_nt_acc(self.adj.data(), nw.value.data(), gx.data(),
                          static_cast<int>(rows), co, ci);
                accumulate_adj(nx, gx);
            }
            if (nw.requires_grad) {  // dW = X^T * G
                std::vector<double> gw(nw.value.size(), 0.0);
                mm_tn_acc(nx.value.data(), self.adj.data(), gw.data(),
                          static_cast<int>(rows), ci, co);
                accumulate_adj(nw, gw);
            }
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                std::vector<double> gb(co, 0.0);
                for (long long r = 0; r < rows; ++r)
                    for (int j = 0; j < co; ++j) gb[j] += self.adj[r * co + j];
                accumulate_adj(*self.parents[2], gb);
            }
        },
        "linear");
}

// ---- convolution -----------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int dilation) {
    if (x.rank() != 3 || kernel.rank() != 3)
        throw DimError("conv1d expects x rank 3 and kernel rank 3, got " +
                       x.shape().str() + " and " + kernel.shape().str());
    int B = x.shape().dim(0), L = x.shape().dim(1), ci = x.shape().dim(2);
    int K = kernel.shape().dim(0), kci = kernel.shape().dim(1),
        co = kernel.shape().dim(2);
    if (K % 2 == 0)
        throw ConfigError("conv1d: kernel size must be odd, got " +
                          std::to_string(K));
    if (kci != ci)
        throw DimError("conv1d: channel mismatch: x " + x.shape().str() +
                       " vs kernel " + kernel.shape().str());
    if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");
    if (bias.defined() && (bias.rank() != 1 || bias.shape().dim(0) != co))
        throw DimError("conv1d: bias shape mismatch");
    int c = K / 2;
    std::vector<double> out(static_cast<size_t>(B) * L * co, 0.0);
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < L; ++t) {
            double* orow = out.data() + (static_cast<long long>(b) * L + t) * co;
            for (int j = 0; j < K; ++j) {
                int s = t + (j - c) * dilation;
                if (s < 0 || s >= L) continue;
                const double* xrow =
                    xv.data() + (static_cast<long long>(b) * L + s) * ci;
                const double* krow = kv.data() + static_cast<long long>(j) * ci * co;
                for (int q = 0; q < ci; ++q) {
                    double xq = xrow[q];
                    if (xq == 0.0) continue;
                    const double* kr = krow + static_cast<long long>(q) * co;
                    for (int o = 0; o < co; ++o) orow[o] += xq * kr[o];
                }
            }
        }
    }
    if (bias.defined()) {
        const auto& bv = bias.values();
        for (long long r = 0; r < static_cast<long long>(B) * L; ++r)
            for (int o = 0; o < co; ++o) out[r * co + o] += bv[o];
    }
    std::vector<Tensor> parents = bias.defined()
                                      ? std::vector<Tensor>{x, kernel, bias}
                                      : std::vector<Tensor>{x, kernel};
    return make_op(
        Shape::of(B, L, co), std::move(out), std::move(parents),
        [B, L, ci, K, co, c, dilation](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            TensorNode& nk = *self.parents[1];
            const auto& g = self.adj;
            if (nx.requires_grad) {
                std::vector<double> gx(nx.value.size(), 0.0);
                for (int b = 0; b < B; ++b)
                    for (int t = 0; t < L; ++t) {
                        const double* grow =
                            g.data() + (static_cast<long long>(b) * L + t) * co;
                        for (int j = 0; j < K; ++j) {
                            int s = t + (j - c) * dilation;
                            if (s < 0 || s >= L) continue;
                            double* gxrow =
                                gx.data() + (static_cast<long long>(b) * L + s) * ci;
                            const double* krow =
                                nk.value.data() + static_cast<long long>(j) * ci * co;
                            for (int q = 0; q < ci; ++q) {
                                const double* kr = krow + static_cast<long long>(q) * co;
                                double acc = 0.0;
                                for (int o = 0; o < co; ++o) acc += grow[o] * kr[o];
                                gxrow[q] += acc;
                            }
                        }
                    }
                accumulate_adj(nx, gx);
            }
            if (nk.requires_grad) {
                std::vector<double> gk(nk.value.size(), 0.0);
                for (int b = 0; b < B; ++b)
                    for (int t = 0; t < L; ++t) {
                        const double* grow =
                            g.data() + (static_cast<long long>(b) * L + t) * co;
                        for (int j = 0; j < K; ++j) {
                            int s = t + (j - c) * dilation;
                            if (s < 0 || s >= L) continue;
                            const double* xrow =
                                nx.value.data() +
                                (static_cast<long long>(b) * L + s) * ci;
                            double* gkrow =
                                gk.data() + static_cast<long long>(j) * ci * co;
                            for (int q = 0; q < ci; ++q) {
                                double xq = xrow[q];
                                if (xq == 0.0) continue;
                                double* gkr = gkrow + static_cast<long long>(q) * co;
                                for (int o = 0; o < co; ++o) gkr[o] += xq * grow[o];
                            }
                        }
                    }
                accumulate_adj(nk, gk);
            }
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                std::vector<double> gb(co, 0.0);
                for (long long r = 0; r < static_cast<long long>(B) * L; ++r)
                    for (int o = 0; o < co; ++o) gb[o] += g[r * co + o];
                accumulate_adj(*self.parents[2], gb);
            }
        },
        "conv1d");
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel,
                        const Tensor& bias) {
    if (x.rank() != 3 || kernel.rank() != 2)
        throw DimError("depthwise_conv1d expects x rank 3 and kernel rank 2");
    int B = x.shape().dim(0), L = x.shape().dim(1), C = x.shape().dim(2);
    int K = kernel.shape().dim(0);
    if (K % 2 == 0)
        throw ConfigError("depthwise_conv1d: kernel size must be odd");
    if (kernel.shape().dim(1) != C)
        throw DimError("depthwise_conv1d: channel mismatch: x " +
                       x.shape().str() + " vs kernel " + kernel.shape().str());
    if (bias.defined() && (bias.rank() != 1 || bias.shape().dim(0) != C))
        throw DimError("depthwise_conv1d: bias shape mismatch");
    int c = K / 2;
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    std::vector<double> out(xv.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < L; ++t) {
            double* orow = out.data() + (static_cast<long long>(b) * L + t) * C;
            for (int j = 0; j < K; ++j) {
                int s = t + (j - c);
                if (s < 0 || s >= L) continue;
                const double* xrow =
                    xv.data() + (static_cast<long long>(b) * L + s) * C;
                const double* krow = kv.data() + static_cast<long long>(j) * C;
                for (int q = 0; q < C; ++q) orow[q] += xrow[q] * krow[q];
            }
        }
    if (bias.defined()) {
        const auto& bv = bias.values();
        for (long long r = 0; r < static_cast<long long>(B) * L; ++r)
            for (int q = 0; q < C; ++q) out[r * C + q] += bv[q];
    }
    std::vector<Tensor> parents = bias.defined()
                                      ? std::vector<Tensor>{x, kernel, bias}
                                      : std::vector<Tensor>{x, kernel};
    return make_op(
        x.shape(), std::move(out), std::move(parents),
        [B, L, C, K, c](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            TensorNode& nk = *self.parents[1];
            const auto& g = self.adj;
            if (nx.requires_grad) {
                std::vector<double> gx(nx.value.size(), 0.0);
                for (int b = 0; b < B; ++b)
                    for (int t = 0; t < L; ++t)
                        for (int j = 0; j < K; ++j) {
                            int s = t + (j - c);
                            if (s < 0 || s >= L) continue;
                            const double* grow =
                                g.data() + (static_cast<long long>(b) * L + t) * C;
                            double* gxrow =
                                gx.data() + (static_cast<long long>(b) * L + s) * C;
                            const double* krow =
                                nk.value.data() + static_cast<long long>(j) * C;
                            for (int q = 0; q < C; ++q) gxrow[q] += grow[q] * krow[q];
                        }
                accumulate_adj(nx, gx);
            }
            if (nk.requires_grad) {
                std::vector<double> gk(nk.value.size(), 0.0);
                for (int b = 0; b < B; ++b)
                    for (int t = 0; t < L; ++t)
                        for (int j = 0; j < K; ++j) {
                            int s = t + (j - c);
                            if (s < 0 || s >= L) continue;
                            const double* grow =
                                g.data() + (static_cast<long long>(b) * L + t) * C;
                            const double* xrow =
                                nx.value.data() +
                                (static_cast<long long>(b) * L + s) * C;
                            double* gkrow = gk.data() + static_cast<long long>(j) * C;
                            for (int q = 0; q < C; ++q) gkrow[q] += grow[q] * xrow[q];
                        }
                accumulate_adj(nk, gk);
            }
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                std::vector<double> gb(C, 0.0);
                for (long long r = 0; r < static_cast<long long>(B) * L; ++r)
                    for (int q = 0; q < C; ++q) gb[q] += g[r * C + q];
                accumulate_adj(*self.parents[2], gb);
            }
        },
        "depthwise_conv1d");
}

Tensor shift_length(const Tensor& x, int offset) {
    if (x.rank() != 3) throw DimError("shift_length expects rank-3 input");
    int B = x.shape().dim(0), L = x.shape().dim(1), C = x.shape().dim(2);
    const auto& xv = x.values();
    std::vector<double> out(xv.size(), 0.0);
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < L; ++t) {
            int s = t - offset;
            if (s < 0 || s >= L) continue;
            std::memcpy(out.data() + (static_cast<long long>(b) * L + t) * C,
                        xv.data() + (static_cast<long long>(b) * L + s) * C,
                        sizeof(double) * C);
        }
    return make_op(
        x.shape(), std::move(out), {x},
        [B, L, C, offset](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size(), 0.0);
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < L; ++t) {
                    int s = t - offset;
                    if (s < 0 || s >= L) continue;
                    const double* grow =
                        self.adj.data() + (static_cast<long long>(b) * L + t) * C;
                    double* gxrow =
                        gx.data() + (static_cast<long long>(b) * L + s) * C;
                    for (int q = 0; q < C; ++q) gxrow[q] += grow[q];
                }
            accumulate_adj(nx, gx);
        },
        "shift_length");
}

// ---- softmax / normalization -----------------------------------------------------

Tensor softmax_lastdim(const Tensor& x, double scale) {
    int C = x.shape().dim(x.rank() - 1);
    if (C < 1) throw DimError("softmax_lastdim: empty last axis");
    long long rows = x.numel() / C;
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (long long r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * C;
        double* yr = out.data() + r * C;
        double mx = -HUGE_VAL;
        for (int i = 0; i < C; ++i) mx = std::max(mx, scale * xr[i]);
        double sum = 0.0;
        for (int i = 0; i < C; ++i) {
            yr[i] = std::exp(scale * xr[i] - mx);
            sum += yr[i];
        }
        for (int i = 0; i < C; ++i) yr[i] /= sum;
    }
    return make_op(
        x.shape(), std::move(out), {x},
        [C, rows, scale](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(self.adj.size());
            for (long long r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * C;
                const double* g = self.adj.data() + r * C;
                double dot = 0.0;
                for (int i = 0; i < C; ++i) dot += y[i] * g[i];
                for (int i = 0; i < C; ++i)
                    gx[r * C + i] = scale * y[i] * (g[i] - dot);
            }
            accumulate_adj(nx, gx);
        },
        "softmax_lastdim");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
    int C = x.shape().dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.shape().dim(0) != C || bias.rank() != 1 ||
        bias.shape().dim(0) != C)
        throw DimError("layer_norm: gain/bias must be rank-1 of size " +
                       std::to_string(C));
    long long rows = x.numel() / C;
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    for (long long r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * C;
        double mu = 0.0;
        for (int i = 0; i < C; ++i) mu += xr[i];
        mu /= C;
        double var = 0.0;
        for (int i = 0; i < C; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        double* yr = out.data() + r * C;
        for (int i = 0; i < C; ++i) yr[i] = (xr[i] - mu) * inv * gv[i] + bv[i];
    }
    return make_op(
        x.shape(), std::move(out), {x, gain, bias},
        [C, rows, eps](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            TensorNode& ng = *self.parents[1];
            TensorNode& nb = *self.parents[2];
            const auto& g = self.adj;
            std::vector<double> gx(nx.requires_grad ? nx.value.size() : 0, 0.0);
            std::vector<double> ggain(ng.requires_grad ? (size_t)C : 0, 0.0);
            std::vector<double> gbias(nb.requires_grad ? (size_t)C : 0, 0.0);
            for (long long r = 0; r < rows; ++r) {
                const double* xr = nx.value.data() + r * C;
                const double* gr = g.data() + r * C;
                double mu = 0.0;
                for (int i = 0; i < C; ++i) mu += xr[i];
                mu /= C;
                double var = 0.0;
                for (int i = 0; i < C; ++i) var += (xr[i] - mu) * (xr[i] - mu);
                var /= C;
                double inv = 1.0 / std::sqrt(var + eps);
                double mean_gg = 0.0, mean_ggy = 0.0;
                for (int i = 0; i < C; ++i) {
                    double yn = (xr[i] - mu) * inv;
                    double gg = gr[i] * ng.value[i];
                    mean_gg += gg;
                    mean_ggy += gg * yn;
                    if (!ggain.empty()) ggain[i] += gr[i] * yn;
                    if (!gbias.empty()) gbias[i] += gr[i];
                }
                mean_gg /= C;
                mean_ggy /= C;
                if (!gx.empty()) {
                    for (int i = 0; i < C; ++i) {
                        double yn = (xr[i] - mu) * inv;
                        double gg = gr[i] * ng.value[i];
                        gx[r * C + i] = inv * (gg - mean_gg - yn * mean_ggy);
                    }
                }
            }
            if (!gx.empty()) accumulate_adj(nx, gx);
            if (!ggain.empty()) accumulate_adj(ng, ggain);
            if (!gbias.empty()) accumulate_adj(nb, gbias);
        },
        "layer_norm");
}

Tensor batch_norm_channels(const Tensor& x, const Tensor& gain,
                           const Tensor& bias, bool use_batch_stats,
                           const std::vector<double>& running_mean,
                           const std::vector<double>& running_var, double eps,
                           std::vector<double>* batch_mean_out,
                           std::vector<double>* batch_var_out) {
    if (x.rank() != 3) throw DimError("batch_norm_channels expects rank-3 input");
    int B = x.shape().dim(0), L = x.shape().dim(1), C = x.shape().dim(2);
    if (gain.shape().dim(0) != C || bias.shape().dim(0) != C)
        throw DimError("batch_norm_channels: gain/bias size mismatch");
    long long N = static_cast<long long>(B) * L;
    const auto& xv = x.values();
    std::vector<double> mu(C, 0.0), var(C, 0.0);
    if (use_batch_stats) {
        for (long long r = 0; r < N; ++r)
            for (int q = 0; q < C; ++q) mu[q] += xv[r * C + q];
        for (int q = 0; q < C; ++q) mu[q] /= static_cast<double>(N);
        for (long long r = 0; r < N; ++r)
            for (int q = 0; q < C; ++q) {
                double d = xv[r * C + q] - mu[q];
                var[q] += d * d;
            }
        for (int q = 0; q < C; ++q) var[q] /= static_cast<double>(N);
    } else {
        if (static_cast<int>(running_mean.size()) != C ||
            static_cast<int>(running_var.size()) != C)
            throw DimError("batch_norm_channels: running stats size mismatch");
        mu = running_mean;
        var = running_var;
    }
    if (batch_mean_out) *batch_mean_out = mu;
    if (batch_var_out) *batch_var_out = var;
    std::vector<double> inv(C);
    for (int q = 0; q < C; ++q) inv[q] = 1.0 / std::sqrt(var[q] + eps);
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(xv.size());
    for (long long r = 0; r < N; ++r)
        for (int q = 0; q < C; ++q)
            out[r * C + q] = (xv[r * C + q] - mu[q]) * inv[q] * gv[q] + bv[q];
    return make_op(
        x.shape(), std::move(out), {x, gain, bias},
        [N, C, mu, inv, use_batch_stats](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            TensorNode& ng = *self.parents[1];
            TensorNode& nb = *self.parents[2];
            const auto& g = self.adj;
            if (ng.requires_grad || nb.requires_grad) {
                std::vector<double> ggain(C, 0.0), gbias(C, 0.0);
                for (long long r = 0; r < N; ++r)
                    for (int q = 0; q < C; ++q) {
                        double xh = (nx.value[r * C + q] - mu[q]) * inv[q];
                        ggain[q] += g[r * C + q] * xh;
                        gbias[q] += g[r * C + q];
                    }
                if (ng.requires_grad) accumulate_adj(ng, ggain);
                if (nb.requires_grad) accumulate_adj(nb, gbias);
            }
            if (nx.requires_grad) {
                std::vector<double> gx(nx.value.size());
                if (use_batch_stats) {
                    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
                    for (long long r = 0; r < N; ++r)
                        for (int q = 0; q < C; ++q) {
                            double gg = g[r * C + q] * ng.value[q];
                            double xh = (nx.value[r * C + q] - mu[q]) * inv[q];
                            sum_g[q] += gg;
                            sum_gx[q] += gg * xh;
                        }
                    double n = static_cast<double>(N);
                    for (long long r = 0; r < N; ++r)
                        for (int q = 0; q < C; ++q) {
                            double gg = g[r * C + q] * ng.value[q];
                            double xh = (nx.value[r * C + q] - mu[q]) * inv[q];
                            gx[r * C + q] =
                                inv[q] * (gg - sum_g[q] / n - xh * sum_gx[q] / n);
                        }
                } else {
                    for (long long r = 0; r < N; ++r)
                        for (int q = 0; q < C; ++q)
                            gx[r * C + q] = g[r * C + q] * ng.value[q] * inv[q];
                }
                accumulate_adj(nx, gx);
            }
        },
        "batch_norm_channels");
}

// ---- pointwise -------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, "sigmoid", [](double v) { return stable_sigmoid(v); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
    return unary_op(
        x, "gelu",
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v, double) {
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, "exp", [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        x, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(
        x, "sqrt", [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

Tensor softplus(const Tensor& x) {
    return unary_op(
        x, "softplus",
        [](double v) {
            if (v > 30.0) return v;
            if (v < -30.0) return std::exp(v);
            return std::log1p(std::exp(v));
        },
        [](double v, double) { return stable_sigmoid(v); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary_op(
        x, "clamp",
        [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------------

Tensor mean_over_length(const Tensor& x) {
    if (x.rank() != 3) throw DimError("mean_over_length expects rank-3 input");
    int B = x.shape().dim(0), L = x.shape().dim(1), C = x.shape().dim(2);
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(B) * C, 0.0);
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < L; ++t)
            for (int q = 0; q < C; ++q)
                out[static_cast<long long>(b) * C + q] +=
                    xv[(static_cast<long long>(b) * L + t) * C + q];
    for (auto& v : out) v /= L;
    return make_op(
        Shape::of(B, 1, C), std::move(out), {x},
        [B, L, C](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size());
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < L; ++t)
                    for (int q = 0; q < C; ++q)
                        gx[(static_cast<long long>(b) * L + t) * C + q] =
                            self.adj[static_cast<long long>(b) * C + q] / L;
            accumulate_adj(nx, gx);
        },
        "mean_over_length");
}

Tensor mean_over_channels(const Tensor& x) {
    if (x.rank() != 3) throw DimError("mean_over_channels expects rank-3 input");
    int B = x.shape().dim(0), L = x.shape().dim(1), C = x.shape().dim(2);
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(B) * L, 0.0);
    for (long long r = 0; r < static_cast<long long>(B) * L; ++r) {
        double s = 0.0;
        for (int q = 0; q < C; ++q) s += xv[r * C + q];
        out[r] = s / C;
    }
    return make_op(
        Shape::of(B, L, 1), std::move(out), {x},
        [B, L, C](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size());
            for (long long r = 0; r < static_cast<long long>(B) * L; ++r)
                for (int q = 0; q < C; ++q) gx[r * C + q] = self.adj[r] / C;
            accumulate_adj(nx, gx);
        },
        "mean_over_channels");
}

Tensor mean_all(const Tensor& x) {
    long long n = x.numel();
    double s = 0.0;
    for (double v : x.values()) s += v;
    s /= static_cast<double>(n);
    return make_op(
        Shape::of(1), {s}, {x},
        [n](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size(),
                                   self.adj[0] / static_cast<double>(n));
            accumulate_adj(nx, gx);
        },
        "mean_all");
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return make_op(
        Shape::of(1), {s}, {x},
        [](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size(), self.adj[0]);
            accumulate_adj(nx, gx);
        },
        "sum_all");
}

Tensor sum_lastdim(const Tensor& x) {
    int C = x.shape().dim(x.rank() - 1);
    long long rows = x.numel() / C;
    const auto& xv = x.values();
    std::vector<double> out(rows, 0.0);
    for (long long r = 0; r < rows; ++r)
        for (int q = 0; q < C; ++q) out[r] += xv[r * C + q];
    Shape os = x.rank() == 3
                   ? Shape::of(x.shape().dim(0), x.shape().dim(1), 1)
               : x.rank() == 2 ? Shape::of(x.shape().dim(0), 1)
                               : Shape::of(1);
    return make_op(
        os, std::move(out), {x},
        [rows, C](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size());
            for (long long r = 0; r < rows; ++r)
                for (int q = 0; q < C; ++q) gx[r * C + q] = self.adj[r];
            accumulate_adj(nx, gx);
        },
        "sum_lastdim");
}

// ---- layout ops ------------------------------------------------------------------

Tensor concat_lastdim(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw UsageError("concat_lastdim: empty input list");
    int rank = xs[0].rank();
    long long rows = 1;
    for (int i = 0; i + 1 < rank; ++i) rows *= xs[0].shape().dim(i);
    int total = 0;
    for (const auto& t : xs) {
        if (t.rank() != rank)
            throw DimError("concat_lastdim: rank mismatch");
        long long r = 1;
        for (int i = 0; i + 1 < rank; ++i) r *= t.shape().dim(i);
        if (r != rows)
            throw DimError("concat_lastdim: leading extents mismatch: " +
                           xs[0].shape().str() + " vs " + t.shape().str());
        total += t.shape().dim(rank - 1);
    }
    std::vector<double> out(rows * total);
    int off = 0;
    for (const auto& t : xs) {
        int c = t.shape().dim(rank - 1);
        const auto& tv = t.values();
        for (long long r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * total + off, tv.data() + r * c,
                        sizeof(double) * c);
        off += c;
    }
    Shape os = rank == 3 ? Shape::of(xs[0].shape().dim(0), xs[0].shape().dim(1),
                                     total)
               : rank == 2 ? Shape::of(xs[0].shape().dim(0), total)
                           : Shape::of(total);
    std::vector<int> widths;
    for (const auto& t : xs) widths.push_back(t.shape().dim(rank - 1));
    return make_op(
        os, std::move(out), xs,
        [rows, total, widths](TensorNode& self) {
            int off = 0;
            for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                TensorNode& np = *self.parents[pi];
                int c = widths[pi];
                if (np.requires_grad) {
                    std::vector<double> gp(np.value.size());
                    for (long long r = 0; r < rows; ++r)
                        std::memcpy(gp.data() + r * c,
                                    self.adj.data() + r * total + off,
                                    sizeof(double) * c);
                    accumulate_adj(np, gp);
                }
                off += c;
            }
        },
        "concat_lastdim");
}

Tensor slice_lastdim(const Tensor& x, int from, int len) {
    int rank = x.rank();
    int C = x.shape().dim(rank - 1);
    if (from < 0 || len <= 0 || from + len > C)
        throw DimError("slice_lastdim: range [" + std::to_string(from) + "," +
                       std::to_string(from + len) + ") out of " +
                       std::to_string(C));
    long long rows = x.numel() / C;
    const auto& xv = x.values();
    std::vector<double> out(rows * len);
    for (long long r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * len, xv.data() + r * C + from,
                    sizeof(double) * len);
    Shape os = rank == 3
                   ? Shape::of(x.shape().dim(0), x.shape().dim(1), len)
               : rank == 2 ? Shape::of(x.shape().dim(0), len)
                           : Shape::of(len);
    return make_op(
        os, std::move(out), {x},
        [rows, C, from, len](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size(), 0.0);
            for (long long r = 0; r < rows; ++r)
                std::memcpy(gx.data() + r * C + from, self.adj.data() + r * len,
                            sizeof(double) * len);
            accumulate_adj(nx, gx);
        },
        "slice_lastdim");
}

Tensor concat_length(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw UsageError("concat_length: empty input list");
    int B = xs[0].shape().dim(0), C = xs[0].shape().dim(2), Ltot = 0;
    for (const auto& t : xs) {
        if (t.rank() != 3 || t.shape().dim(0) != B || t.shape().dim(2) != C)
            throw DimError("concat_length: incompatible shapes");
        Ltot += t.shape().dim(1);
    }
    std::vector<double> out(static_cast<size_t>(B) * Ltot * C);
    int loff = 0;
    for (const auto& t : xs) {
        int l = t.shape().dim(1);
        const auto& tv = t.values();
        for (int b = 0; b < B; ++b)
            std::memcpy(out.data() + (static_cast<long long>(b) * Ltot + loff) * C,
                        tv.data() + static_cast<long long>(b) * l * C,
                        sizeof(double) * l * C);
        loff += l;
    }
    std::vector<int> lens;
    for (const auto& t : xs) lens.push_back(t.shape().dim(1));
    return make_op(
        Shape::of(B, Ltot, C), std::move(out), xs,
        [B, Ltot, C, lens](TensorNode& self) {
            int loff = 0;
            for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                TensorNode& np = *self.parents[pi];
                int l = lens[pi];
                if (np.requires_grad) {
                    std::vector<double> gp(np.value.size());
                    for (int b = 0; b < B; ++b)
                        std::memcpy(
                            gp.data() + static_cast<long long>(b) * l * C,
                            self.adj.data() +
                                (static_cast<long long>(b) * Ltot + loff) * C,
                            sizeof(double) * l * C);
                    accumulate_adj(np, gp);
                }
                loff += l;
            }
        },
        "concat_length");
}

Tensor slice_length(const Tensor& x, int from, int len) {
    if (x.rank() != 3) throw DimError("slice_length expects rank-3 input");
    int B = x.shape().dim(0), L = x.shape().dim(1), C = x.shape().dim(2);
    if (from < 0 || len <= 0 || from + len > L)
        throw DimError("slice_length: range out of bounds");
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(B) * len * C);
    for (int b = 0; b < B; ++b)
        std::memcpy(out.data() + static_cast<long long>(b) * len * C,
                    xv.data() + (static_cast<long long>(b) * L + from) * C,
                    sizeof(double) * len * C);
    return make_op(
        Shape::of(B, len, C), std::move(out), {x},
        [B, L, C, from, len](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            std::vector<double> gx(nx.value.size(), 0.0);
            for (int b = 0; b < B; ++b) {
                const double* g =
                    self.adj.data() + static_cast<long long>(b) * len * C;
                double* gxr =
                    gx.data() + (static_cast<long long>(b) * L + from) * C;
                for (long long i = 0; i < static_cast<long long>(len) * C; ++i)
                    gxr[i] += g[i];
            }
            accumulate_adj(nx, gx);
        },
        "slice_length");
}

Tensor reshape(const Tensor& x, const Shape& s) {
    if (s.numel() != x.numel())
        throw DimError("reshape: element count mismatch: " + x.shape().str() +
                       " -> " + s.str());
    return make_op(
        s, x.values(), {x},
        [](TensorNode& self) {
            TensorNode& nx = *self.parents[0];
            if (!nx.requires_grad) return;
            accumulate_adj(nx, self.adj);
        },
        "reshape");
}

// ---- finite differences -----------------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params,
                         const FiniteDiffOptions& opts) {
    if (opts.h < 1e-7 || opts.h > 1e-3)
        throw UsageError("finite_diff_check: h must lie in [1e-7, 1e-3]");
    for (Tensor p : params) p.zero_grad();  // handles share nodes
    Tensor loss = f();
    if (loss.numel() != 1)
        throw UsageError("finite_diff_check: f must return a scalar");
    if (!std::isfinite(loss.item()))
        throw NumericError("finite_diff_check: non-finite loss");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    std::mt19937_64 rng(opts.seed);
    double max_err = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];  // shares the node
        long long n = p.numel();
        std::vector<long long> coords;
        if (n <= opts.max_coords_per_tensor) {
            for (long long i = 0; i < n; ++i) coords.push_back(i);
        } else {
            std::unordered_set<long long> picked;
            while (static_cast<int>(picked.size()) < opts.max_coords_per_tensor)
                picked.insert(static_cast<long long>(rng() % n));
            coords.assign(picked.begin(), picked.end());
            std::sort(coords.begin(), coords.end());
        }
        for (long long idx : coords) {
            double orig = p.values()[idx];
            double fp, fm;
            {
                NoGradGuard ng;
                p.values()[idx] = orig + opts.h;
                fp = f().item();
                p.values()[idx] = orig - opts.h;
                fm = f().item();
            }
            p.values()[idx] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("finite_diff_check: non-finite perturbed loss");
            double numeric = (fp - fm) / (2.0 * opts.h);
            double a = analytic[pi][idx];
            double err = std::abs(a - numeric) / (std::abs(a) + 1e-12);
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace uniptms
