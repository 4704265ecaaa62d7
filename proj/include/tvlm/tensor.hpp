#pragma once

// Minimal dense tensor with reverse-mode autodiff. Single-threaded per graph;
// nodes are immutable after construction except for grad accumulation.
// Reductions accumulate left-to-right over the flat index so repeated runs of
// the same binary are bit-identical.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tvlm/error.hpp"

namespace tvlm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {
inline std::atomic<std::uint64_t> g_next_tensor_id{1};
inline thread_local int g_no_grad_depth = 0;
inline thread_local std::uint64_t g_visit_epoch = 0;
}  // namespace detail

inline bool grad_enabled() { return detail::g_no_grad_depth == 0; }

// RAII guard: ops built under it record no graph (inference mode).
struct NoGradGuard {
    NoGradGuard() { ++detail::g_no_grad_depth; }
    ~NoGradGuard() { --detail::g_no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct NodeT {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // lazily allocated, same length as data
    bool requires_grad = false;  // leaf flag
    bool needs_grad = false;     // this node or an ancestor requires grad
    std::uint64_t visit_mark = 0;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void()> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
};

template <class S>
void check_finite(const std::vector<S>& v, const char* op, std::uint64_t id) {
    for (const S x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw NumericError(std::string("non-finite value produced by op '") + op +
                               "' (tensor id " + std::to_string(id) + ")");
        }
    }
}

template <class S>
class TensorT {
  public:
    using Scalar = S;

    TensorT() = default;

    static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
            throw IncompatError("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
        }
        TensorT t;
        t.node_ = std::make_shared<NodeT<S>>();
        t.node_->id = detail::g_next_tensor_id.fetch_add(1);
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        t.node_->needs_grad = requires_grad;
        check_finite(t.node_->data, "from_data", t.node_->id);
        return t;
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), S(0), requires_grad);
    }

    static TensorT full(Shape shape, S value, bool requires_grad = false) {
        const auto n = static_cast<std::size_t>(shape_numel(shape));
        return from_data(std::move(shape), std::vector<S>(n, value), requires_grad);
    }

    static TensorT scalar(S value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::uint64_t id() const { return node_->id; }

    const S* data() const { return node_->data.data(); }
    S* mutable_data() { return node_->data.data(); }
    const std::vector<S>& vec() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) {
        node_->requires_grad = v;
        node_->needs_grad = v;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const S* grad() const { return node_->grad.data(); }
    std::vector<S>& grad_vec() { return node_->grad; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    S item() const {
        if (numel() != 1) throw IncompatError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    std::shared_ptr<NodeT<S>> node() const { return node_; }

    // Reverse-mode sweep from this scalar. seed is the upstream gradient
    // (1/batch when averaging per-example losses outside the graph).
    void backward(S seed = S(1)) const {
        if (numel() != 1) throw IncompatError("backward() root must be a scalar");
        if (!node_->needs_grad) return;
        std::vector<NodeT<S>*> order;
        topo_collect(order);
        node_->ensure_grad();
        node_->grad[0] += seed;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn();
        }
    }

  private:
    explicit TensorT(std::shared_ptr<NodeT<S>> n) : node_(std::move(n)) {}

    template <class T>
    friend TensorT<T> detail_wrap(std::shared_ptr<NodeT<T>> n);

    void topo_collect(std::vector<NodeT<S>*>& order) const {
        // Iterative post-order DFS over the needs_grad subgraph; visit marks
        // use a per-thread epoch so no per-sweep clearing is needed.
        const std::uint64_t epoch = ++detail::g_visit_epoch;
        std::vector<std::pair<NodeT<S>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        node_->visit_mark = epoch;
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                NodeT<S>* p = n->parents[next].get();
                ++next;
                if (p->needs_grad && p->visit_mark != epoch) {
                    p->visit_mark = epoch;
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<NodeT<S>> node_;
};

template <class T>
TensorT<T> detail_wrap(std::shared_ptr<NodeT<T>> n) {
    return TensorT<T>(std::move(n));
}

namespace detail {

// Linear scan in topo_collect is quadratic in graph size; swap the `seen`
// vector for a hash set if graphs ever exceed a few thousand nodes.

template <class S>
std::shared_ptr<NodeT<S>> make_node(const char* op, Shape shape, std::vector<S> data,
                                    std::vector<std::shared_ptr<NodeT<S>>> parents) {
    auto n = std::make_shared<NodeT<S>>();
    n->id = g_next_tensor_id.fetch_add(1);
    n->shape = std::move(shape);
    n->data = std::move(data);
    if (grad_enabled()) {
        for (const auto& p : parents) {
            if (p->needs_grad) {
                n->needs_grad = true;
                break;
            }
        }
        if (n->needs_grad) n->parents = std::move(parents);
    }
    check_finite(n->data, op, n->id);
    return n;
}

template <class S>
TensorT<S> wrap(std::shared_ptr<NodeT<S>> n) {
    return detail_wrap(std::move(n));
}

template <class S>
void accum(NodeT<S>* n, const std::vector<S>& g) {
    n->ensure_grad();
    S* dst = n->grad.data();
    const S* src = g.data();
    const std::int64_t len = n->numel();
    for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
}

}  // namespace detail

// ---- op kernels ----

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw IncompatError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
    }
    const std::int64_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
    std::vector<S> out(static_cast<std::size_t>(rows * cols), S(0));
    {
        const S* pa = a.data();
        const S* pb = b.data();
        S* pc = out.data();
        for (std::int64_t i = 0; i < rows; ++i) {
            const S* arow = pa + i * inner;
            S* crow = pc + i * cols;
            for (std::int64_t k = 0; k < inner; ++k) {
                const S av = arow[k];
                const S* brow = pb + k * cols;
                for (std::int64_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
            }
        }
    }
    auto node = detail::make_node<S>("matmul", {rows, cols}, std::move(out), {a.node(), b.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        NodeT<S>* nb = b.node().get();
        node->backward_fn = [self, na, nb, rows, inner, cols]() {
            const S* dc = self->grad.data();
            if (na->needs_grad) {
                // dA = dC * B^T; transpose B once so inner loops stay contiguous.
                std::vector<S> bt(static_cast<std::size_t>(inner * cols));
                const S* pb = nb->data.data();
                for (std::int64_t k = 0; k < inner; ++k)
                    for (std::int64_t j = 0; j < cols; ++j) bt[j * inner + k] = pb[k * cols + j];
                na->ensure_grad();
                S* da = na->grad.data();
                for (std::int64_t i = 0; i < rows; ++i) {
                    const S* dcrow = dc + i * cols;
                    S* darow = da + i * inner;
                    for (std::int64_t j = 0; j < cols; ++j) {
                        const S dv = dcrow[j];
                        const S* btrow = bt.data() + j * inner;
                        for (std::int64_t k = 0; k < inner; ++k) darow[k] += dv * btrow[k];
                    }
                }
            }
            if (nb->needs_grad) {
                // dB = A^T * dC
                nb->ensure_grad();
                S* db = nb->grad.data();
                const S* pa = na->data.data();
                for (std::int64_t i = 0; i < rows; ++i) {
                    const S* arow = pa + i * inner;
                    const S* dcrow = dc + i * cols;
                    for (std::int64_t k = 0; k < inner; ++k) {
                        const S av = arow[k];
                        S* dbrow = db + k * cols;
                        for (std::int64_t j = 0; j < cols; ++j) dbrow[j] += av * dcrow[j];
                    }
                }
            }
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
    if (a.ndim() != 2) throw IncompatError("transpose expects 2-D, got " + shape_str(a.shape()));
    const std::int64_t r = a.dim(0), c = a.dim(1);
    std::vector<S> out(static_cast<std::size_t>(r * c));
    const S* pa = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = pa[i * c + j];
    auto node = detail::make_node<S>("transpose", {c, r}, std::move(out), {a.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        node->backward_fn = [self, na, r, c]() {
            if (!na->needs_grad) return;
            na->ensure_grad();
            const S* dg = self->grad.data();
            S* da = na->grad.data();
            for (std::int64_t j = 0; j < c; ++j)
                for (std::int64_t i = 0; i < r; ++i) da[i * c + j] += dg[j * r + i];
        };
    }
    return detail::wrap(std::move(node));
}

namespace detail {
template <class S, class Fwd, class Bwd>
TensorT<S> binary_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b, Fwd fwd, Bwd bwd) {
    if (a.shape() != b.shape()) {
        throw IncompatError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
    const std::int64_t n = a.numel();
    std::vector<S> out(static_cast<std::size_t>(n));
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
    auto node = make_node<S>(op, a.shape(), std::move(out), {a.node(), b.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        NodeT<S>* nb = b.node().get();
        node->backward_fn = [self, na, nb, n, bwd]() {
            const S* dg = self->grad.data();
            for (std::int64_t i = 0; i < n; ++i) {
                S da, db;
                bwd(na->data[static_cast<std::size_t>(i)], nb->data[static_cast<std::size_t>(i)], dg[i], da, db);
                if (na->needs_grad) {
                    na->ensure_grad();
                    na->grad[static_cast<std::size_t>(i)] += da;
                }
                if (nb->needs_grad) {
                    nb->ensure_grad();
                    nb->grad[static_cast<std::size_t>(i)] += db;
                }
            }
        };
    }
    return wrap(std::move(node));
}
}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_same_shape<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [](S, S, S dg, S& da, S& db) {
            da = dg;
            db = dg;
        });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_same_shape<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [](S x, S y, S dg, S& da, S& db) {
            da = dg * y;
            db = dg * x;
        });
}

// Broadcast-add a length-d row vector across the rows of a [r, d] matrix.
template <class S>
TensorT<S> add_rowvec(const TensorT<S>& a, const TensorT<S>& v) {
    if (a.ndim() != 2 || v.ndim() != 1 || a.dim(1) != v.dim(0)) {
        throw IncompatError("add_rowvec shape mismatch: " + shape_str(a.shape()) + " + " +
                            shape_str(v.shape()));
    }
    const std::int64_t r = a.dim(0), d = a.dim(1);
    std::vector<S> out(static_cast<std::size_t>(r * d));
    const S* pa = a.data();
    const S* pv = v.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = pa[i * d + j] + pv[j];
    auto node = detail::make_node<S>("add_rowvec", a.shape(), std::move(out), {a.node(), v.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        NodeT<S>* nv = v.node().get();
        node->backward_fn = [self, na, nv, r, d]() {
            const S* dg = self->grad.data();
            if (na->needs_grad) detail::accum(na, self->grad);
            if (nv->needs_grad) {
                nv->ensure_grad();
                S* dv = nv->grad.data();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < d; ++j) dv[j] += dg[i * d + j];
            }
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S k) {
    const std::int64_t n = a.numel();
    std::vector<S> out(static_cast<std::size_t>(n));
    const S* pa = a.data();
    for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * k;
    auto node = detail::make_node<S>("scale", a.shape(), std::move(out), {a.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        node->backward_fn = [self, na, n, k]() {
            if (!na->needs_grad) return;
            na->ensure_grad();
            const S* dg = self->grad.data();
            S* da = na->grad.data();
            for (std::int64_t i = 0; i < n; ++i) da[i] += dg[i] * k;
        };
    }
    return detail::wrap(std::move(node));
}

// tanh-approximation GELU (GPT-2 flavor).
template <class S>
TensorT<S> gelu(const TensorT<S>& a) {
    const std::int64_t n = a.numel();
    std::vector<S> out(static_cast<std::size_t>(n));
    const S* pa = a.data();
    const S c0 = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    const S c1 = static_cast<S>(0.044715);
    for (std::int64_t i = 0; i < n; ++i) {
        const S x = pa[i];
        const S t = std::tanh(c0 * (x + c1 * x * x * x));
        out[i] = S(0.5) * x * (S(1) + t);
    }
    auto node = detail::make_node<S>("gelu", a.shape(), std::move(out), {a.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        node->backward_fn = [self, na, n, c0, c1]() {
            if (!na->needs_grad) return;
            na->ensure_grad();
            const S* dg = self->grad.data();
            const S* px = na->data.data();
            S* da = na->grad.data();
            for (std::int64_t i = 0; i < n; ++i) {
                const S x = px[i];
                const S u = c0 * (x + c1 * x * x * x);
                const S t = std::tanh(u);
                const S du = c0 * (S(1) + S(3) * c1 * x * x);
                const S d = S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
                da[i] += dg[i] * d;
            }
        };
    }
    return detail::wrap(std::move(node));
}

// Per-last-axis normalization to zero mean / unit variance, then affine.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias, S eps) {
    if (x.ndim() < 1 || gain.ndim() != 1 || bias.ndim() != 1) {
        throw IncompatError("layer_norm expects x[..,d], gain[d], bias[d]");
    }
    const std::int64_t d = x.dim(x.ndim() - 1);
    if (gain.dim(0) != d || bias.dim(0) != d) {
        throw IncompatError("layer_norm width mismatch: x " + shape_str(x.shape()) + ", gain " +
                            shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    }
    if (eps <= S(0)) throw ConfigError("layer_norm eps must be > 0");
    const std::int64_t rows = x.numel() / d;
    std::vector<S> out(static_cast<std::size_t>(rows * d));
    std::vector<S> inv_std(static_cast<std::size_t>(rows));
    std::vector<S> xhat(static_cast<std::size_t>(rows * d));
    const S* px = x.data();
    const S* pg = gain.data();
    const S* pb = bias.data();
    for (std::int64_t i = 0; i < rows; ++i) {
        const S* r = px + i * d;
        S mean = S(0);
        for (std::int64_t j = 0; j < d; ++j) mean += r[j];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const S c = r[j] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S is = S(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const S h = (r[j] - mean) * is;
            xhat[static_cast<std::size_t>(i * d + j)] = h;
            out[static_cast<std::size_t>(i * d + j)] = h * pg[j] + pb[j];
        }
    }
    auto node = detail::make_node<S>("layer_norm", x.shape(), std::move(out),
                                     {x.node(), gain.node(), bias.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* nx = x.node().get();
        NodeT<S>* ng = gain.node().get();
        NodeT<S>* nb = bias.node().get();
        node->backward_fn = [self, nx, ng, nb, rows, d, inv_std = std::move(inv_std),
                             xhat = std::move(xhat)]() {
            const S* dg = self->grad.data();
            const S* pg2 = ng->data.data();
            if (ng->needs_grad) ng->ensure_grad();
            if (nb->needs_grad) nb->ensure_grad();
            if (nx->needs_grad) nx->ensure_grad();
            for (std::int64_t i = 0; i < rows; ++i) {
                const S* dr = dg + i * d;
                const S* hr = xhat.data() + i * d;
                if (ng->needs_grad || nb->needs_grad) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        if (ng->needs_grad) ng->grad[static_cast<std::size_t>(j)] += dr[j] * hr[j];
                        if (nb->needs_grad) nb->grad[static_cast<std::size_t>(j)] += dr[j];
                    }
                }
                if (nx->needs_grad) {
                    // dxhat = dy * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                    S sum_dh = S(0), sum_dh_h = S(0);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const S dh = dr[j] * pg2[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    const S is = inv_std[static_cast<std::size_t>(i)];
                    const S inv_d = S(1) / static_cast<S>(d);
                    S* dx = nx->grad.data() + i * d;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const S dh = dr[j] * pg2[j];
                        dx[j] += (dh - sum_dh * inv_d - hr[j] * sum_dh_h * inv_d) * is;
                    }
                }
            }
        };
    }
    return detail::wrap(std::move(node));
}

// Softmax over the last axis, max-subtracted.
template <class S>
TensorT<S> softmax(const TensorT<S>& x) {
    if (x.ndim() < 1) throw IncompatError("softmax expects at least 1-D input");
    const std::int64_t d = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / d;
    std::vector<S> out(static_cast<std::size_t>(rows * d));
    const S* px = x.data();
    for (std::int64_t i = 0; i < rows; ++i) {
        const S* r = px + i * d;
        S mx = r[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, r[j]);
        S sum = S(0);
        S* o = out.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) {
            o[j] = std::exp(r[j] - mx);
            sum += o[j];
        }
        const S inv = S(1) / sum;
        for (std::int64_t j = 0; j < d; ++j) o[j] *= inv;
    }
    auto node = detail::make_node<S>("softmax", x.shape(), std::move(out), {x.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* nx = x.node().get();
        node->backward_fn = [self, nx, rows, d]() {
            if (!nx->needs_grad) return;
            nx->ensure_grad();
            const S* y = self->data.data();
            const S* dy = self->grad.data();
            S* dx = nx->grad.data();
            for (std::int64_t i = 0; i < rows; ++i) {
                const S* yr = y + i * d;
                const S* dyr = dy + i * d;
                S dot = S(0);
                for (std::int64_t j = 0; j < d; ++j) dot += yr[j] * dyr[j];
                S* dxr = dx + i * d;
                for (std::int64_t j = 0; j < d; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
            }
        };
    }
    return detail::wrap(std::move(node));
}

// Row lookup: out[i, :] = table[ids[i], :]. Gradient scatter-adds into table.
template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<std::int32_t>& ids) {
    if (table.ndim() != 2) throw IncompatError("embedding table must be 2-D");
    const std::int64_t vocab = table.dim(0), d = table.dim(1);
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    std::vector<S> out(static_cast<std::size_t>(n * d));
    const S* pt = table.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= vocab) {
            throw IncompatError("embedding id " + std::to_string(id) + " out of range [0," +
                                std::to_string(vocab) + ")");
        }
        std::copy(pt + id * d, pt + (id + 1) * d, out.begin() + i * d);
    }
    auto node = detail::make_node<S>("embedding", {n, d}, std::move(out), {table.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* nt = table.node().get();
        node->backward_fn = [self, nt, ids, d]() {
            if (!nt->needs_grad) return;
            nt->ensure_grad();
            const S* dg = self->grad.data();
            S* dt = nt->grad.data();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                S* row = dt + static_cast<std::int64_t>(ids[i]) * d;
                const S* g = dg + static_cast<std::int64_t>(i) * d;
                for (std::int64_t j = 0; j < d; ++j) row[j] += g[j];
            }
        };
    }
    return detail::wrap(std::move(node));
}

// Column slice [c0, c1) of a 2-D tensor.
template <class S>
TensorT<S> slice_cols(const TensorT<S>& a, std::int64_t c0, std::int64_t c1) {
    if (a.ndim() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw IncompatError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                            ") invalid for shape " + shape_str(a.shape()));
    }
    const std::int64_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
    std::vector<S> out(static_cast<std::size_t>(r * w));
    const S* pa = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        std::copy(pa + i * c + c0, pa + i * c + c1, out.begin() + i * w);
    auto node = detail::make_node<S>("slice_cols", {r, w}, std::move(out), {a.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        node->backward_fn = [self, na, r, c, c0, w]() {
            if (!na->needs_grad) return;
            na->ensure_grad();
            const S* dg = self->grad.data();
            S* da = na->grad.data();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < w; ++j) da[i * c + c0 + j] += dg[i * w + j];
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw IncompatError("concat_cols of zero tensors");
    const std::int64_t r = parts[0].dim(0);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != r) throw IncompatError("concat_cols row mismatch");
        total += p.dim(1);
    }
    std::vector<S> out(static_cast<std::size_t>(r * total));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p.dim(1);
        const S* pp = p.data();
        for (std::int64_t i = 0; i < r; ++i)
            std::copy(pp + i * w, pp + (i + 1) * w, out.begin() + i * total + off);
        off += w;
    }
    std::vector<std::shared_ptr<NodeT<S>>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    auto node = detail::make_node<S>("concat_cols", {r, total}, std::move(out), std::move(parents));
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        std::vector<NodeT<S>*> srcs;
        for (const auto& p : parts) srcs.push_back(p.node().get());
        node->backward_fn = [self, srcs, r, total]() {
            const S* dg = self->grad.data();
            std::int64_t off2 = 0;
            for (NodeT<S>* src : srcs) {
                const std::int64_t w = src->shape[1];
                if (src->needs_grad) {
                    src->ensure_grad();
                    S* da = src->grad.data();
                    for (std::int64_t i = 0; i < r; ++i)
                        for (std::int64_t j = 0; j < w; ++j) da[i * w + j] += dg[i * total + off2 + j];
                }
                off2 += w;
            }
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw IncompatError("concat_rows of zero tensors");
    const std::int64_t c = parts[0].dim(1);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(1) != c) throw IncompatError("concat_rows col mismatch");
        total += p.dim(0);
    }
    std::vector<S> out;
    out.reserve(static_cast<std::size_t>(total * c));
    for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
    std::vector<std::shared_ptr<NodeT<S>>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    auto node = detail::make_node<S>("concat_rows", {total, c}, std::move(out), std::move(parents));
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        std::vector<NodeT<S>*> srcs;
        for (const auto& p : parts) srcs.push_back(p.node().get());
        node->backward_fn = [self, srcs, c]() {
            const S* dg = self->grad.data();
            std::int64_t off = 0;
            for (NodeT<S>* src : srcs) {
                const std::int64_t rows = src->shape[0];
                if (src->needs_grad) {
                    src->ensure_grad();
                    S* da = src->grad.data();
                    for (std::int64_t i = 0; i < rows * c; ++i) da[i] += dg[off + i];
                }
                off += rows * c;
            }
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> sum(const TensorT<S>& a) {
    const std::int64_t n = a.numel();
    const S* pa = a.data();
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
    auto node = detail::make_node<S>("sum", {1}, std::vector<S>{acc}, {a.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* na = a.node().get();
        node->backward_fn = [self, na, n]() {
            if (!na->needs_grad) return;
            na->ensure_grad();
            const S g = self->grad[0];
            S* da = na->grad.data();
            for (std::int64_t i = 0; i < n; ++i) da[i] += g;
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> mean(const TensorT<S>& a) {
    return scale(sum(a), S(1) / static_cast<S>(a.numel()));
}

// Mean negative log-likelihood over positions with weight > 0; weight 0
// positions contribute exactly zero loss and zero gradient (they are skipped,
// so the result is bit-invariant to their target ids).
template <class S>
TensorT<S> weighted_cross_entropy(const TensorT<S>& logits, const std::vector<std::int32_t>& targets,
                                  const std::vector<S>& weights) {
    if (logits.ndim() != 2) throw IncompatError("cross_entropy logits must be [seq, vocab]");
    const std::int64_t seq = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != seq ||
        static_cast<std::int64_t>(weights.size()) != seq) {
        throw IncompatError("cross_entropy targets/weights length mismatch");
    }
    S wsum = S(0);
    for (const S w : weights) wsum += w;
    if (!(wsum > S(0))) {
        throw ConfigError("cross_entropy: no supervised positions (all-zero mask)");
    }
    const S* pl = logits.data();
    S loss = S(0);
    for (std::int64_t i = 0; i < seq; ++i) {
        const S w = weights[static_cast<std::size_t>(i)];
        if (w == S(0)) continue;
        const std::int32_t t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= vocab) throw IncompatError("cross_entropy target id out of range");
        const S* r = pl + i * vocab;
        S mx = r[0];
        for (std::int64_t j = 1; j < vocab; ++j) mx = std::max(mx, r[j]);
        S sum_exp = S(0);
        for (std::int64_t j = 0; j < vocab; ++j) sum_exp += std::exp(r[j] - mx);
        loss += w * (std::log(sum_exp) + mx - r[t]);
    }
    loss /= wsum;
    auto node = detail::make_node<S>("cross_entropy", {1}, std::vector<S>{loss}, {logits.node()});
    if (node->needs_grad) {
        NodeT<S>* self = node.get();
        NodeT<S>* nl = logits.node().get();
        node->backward_fn = [self, nl, targets, weights, wsum, seq, vocab]() {
            if (!nl->needs_grad) return;
            nl->ensure_grad();
            const S g = self->grad[0] / wsum;
            const S* pl2 = nl->data.data();
            S* dl = nl->grad.data();
            for (std::int64_t i = 0; i < seq; ++i) {
                const S w = weights[static_cast<std::size_t>(i)];
                if (w == S(0)) continue;
                const S* r = pl2 + i * vocab;
                S mx = r[0];
                for (std::int64_t j = 1; j < vocab; ++j) mx = std::max(mx, r[j]);
                S sum_exp = S(0);
                for (std::int64_t j = 0; j < vocab; ++j) sum_exp += std::exp(r[j] - mx);
                const S inv = S(1) / sum_exp;
                S* dr = dl + i * vocab;
                const std::int32_t t = targets[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < vocab; ++j) {
                    S p = std::exp(r[j] - mx) * inv;
                    if (j == t) p -= S(1);
                    dr[j] += g * w * p;
                }
            }
        };
    }
    return detail::wrap(std::move(node));
}

template <class S>
TensorT<S> masked_cross_entropy(const TensorT<S>& logits, const std::vector<std::int32_t>& targets,
                                const std::vector<bool>& mask) {
    std::vector<S> w(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? S(1) : S(0);
    return weighted_cross_entropy(logits, targets, w);
}

// Index of the max element. Not differentiable; detaches from the graph.
template <class S>
std::int64_t argmax(const S* row, std::int64_t n) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace tvlm
