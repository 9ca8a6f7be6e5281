#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace mlfs {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& m) : std::invalid_argument(m) {}
};

class IndexError : public std::out_of_range {
public:
    explicit IndexError(const std::string& m) : std::out_of_range(m) {}
};

class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& m) : std::logic_error(m) {}
};

// raised when a divergence is mathematically infinite (support mismatch)
class DivergenceError : public std::domain_error {
public:
    explicit DivergenceError(const std::string& m) : std::domain_error(m) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << "(";
    for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << ")";
    return o.str();
}

inline std::vector<std::size_t> row_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// ---------------------------------------------------------------------------
// graph node

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // pulls this node's grad into its parents' grads
    std::function<void(const Node&)> backprop;

    std::size_t size() const { return value.size(); }
};

inline void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

// ---------------------------------------------------------------------------
// tensor handle (value semantics over a shared node)

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (numel(shape) != data.size())
            throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(data.size()));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(n);
    }

    static Tensor full(Shape shape, double v) {
        std::vector<double> d(numel(shape), v);
        return from_data(std::move(shape), std::move(d));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

    static Tensor scalar(double v) { return from_data(Shape{}, {v}); }

    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
        std::vector<double> d(numel(shape));
        for (auto& x : d) x = rng.uniform(lo, hi);
        return from_data(std::move(shape), std::move(d));
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node()->shape; }
    std::size_t rank() const { return node()->shape.size(); }
    std::size_t size() const { return node()->value.size(); }

    const std::vector<double>& values() const { return node()->value; }
    // in-place value access; reserved for leaf parameters (optimizer updates,
    // initialization). Mutating an interior node invalidates recorded graphs.
    std::vector<double>& values_mut() { return node()->value; }

    double item() const {
        if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
        return node()->value[0];
    }

    double at(std::initializer_list<std::size_t> idx) const {
        const Node& n = *node();
        if (idx.size() != n.shape.size())
            throw IndexError("at: rank " + std::to_string(n.shape.size()) + " tensor indexed with " +
                             std::to_string(idx.size()) + " indices");
        auto st = row_strides(n.shape);
        std::size_t flat = 0, i = 0;
        for (std::size_t v : idx) {
            if (v >= n.shape[i])
                throw IndexError("at: index " + std::to_string(v) + " out of range for dim " +
                                 std::to_string(i) + " of " + shape_str(n.shape));
            flat += v * st[i++];
        }
        return n.value[flat];
    }

    bool requires_grad() const { return node()->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node()->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !node()->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw ContractError("grad: no gradient accumulated on this tensor");
        return node()->grad;
    }
    void zero_grad() { node()->grad.clear(); }

    // leaf copy, cut off from the graph
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node()->shape;
        n->value = node()->value;
        return Tensor(n);
    }

    void backward(double seed = 1.0) const;

    const std::shared_ptr<Node>& node() const {
        if (!node_) throw ContractError("use of an undefined tensor");
        return node_;
    }

private:
    std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// tape: deterministic topological linearization of the reachable grad graph

class Tape {
public:
    static Tape record(const Tensor& root) {
        Tape t;
        t.root_ = root.node();
        Node* r = t.root_.get();
        if (!r->requires_grad) {
            t.order_.push_back(r);
            return t;
        }
        struct Frame {
            Node* n;
            std::size_t next;
        };
        std::unordered_set<Node*> seen;
        std::vector<Frame> stack;
        stack.push_back({r, 0});
        seen.insert(r);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                Node* p = f.n->parents[f.next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                t.order_.push_back(f.n);
                stack.pop_back();
            }
        }
        return t;
    }

    // parents precede consumers
    const std::vector<Node*>& order() const { return order_; }

    void sweep(double seed) const {
        // Interior grads are per-sweep messages; only leaves accumulate
        // across backward calls. Without this reset a second sweep over the
        // same graph would re-propagate already-delivered gradient.
        for (Node* n : order_)
            if (n->backprop) n->grad.clear();
        Node* r = root_.get();
        ensure_grad(*r);
        for (double& g : r->grad) g += seed;
        for (std::size_t i = order_.size(); i-- > 0;) {
            Node* n = order_[i];
            if (n->backprop && !n->grad.empty()) n->backprop(*n);
        }
    }

private:
    std::shared_ptr<Node> root_;
    std::vector<Node*> order_;
};

inline void Tensor::backward(double seed) const {
    if (size() != 1) throw ContractError("backward: root must be a scalar, got " + shape_str(shape()));
    Tape::record(*this).sweep(seed);
}

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<std::shared_ptr<Node>> parents,
                      std::function<void(const Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

// b broadcasts over a iff b's shape is a trailing suffix of a's shape
inline bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops (with trailing-suffix broadcast of the second operand)

inline Tensor add(const Tensor& a, const Tensor& b) {
    auto pa = a.node(), pb = b.node();
    if (!detail::is_suffix(pa->shape, pb->shape))
        throw ShapeError("add: " + shape_str(pb->shape) + " does not broadcast over " + shape_str(pa->shape));
    std::size_t bs = pb->size();
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pb->value[i % bs];
    return detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb, bs](const Node& self) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i % bs] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    auto pa = a.node(), pb = b.node();
    if (!detail::is_suffix(pa->shape, pb->shape))
        throw ShapeError("sub: " + shape_str(pb->shape) + " does not broadcast over " + shape_str(pa->shape));
    std::size_t bs = pb->size();
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] - pb->value[i % bs];
    return detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb, bs](const Node& self) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i % bs] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    auto pa = a.node(), pb = b.node();
    if (!detail::is_suffix(pa->shape, pb->shape))
        throw ShapeError("mul: " + shape_str(pb->shape) + " does not broadcast over " + shape_str(pa->shape));
    std::size_t bs = pb->size();
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * pb->value[i % bs];
    return detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb, bs](const Node& self) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i % bs];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i % bs] += self.grad[i] * pa->value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    auto pa = a.node();
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * s;
    return detail::make_op(pa->shape, std::move(out), {pa}, [pa, s](const Node& self) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * s;
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    auto pa = a.node();
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + s;
    return detail::make_op(pa->shape, std::move(out), {pa}, [pa](const Node& self) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// matmul: (..., m, k) @ (k, n) or (..., m, k) @ (..., k, n)

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    auto pa = a.node(), pb = b.node();
    const Shape& sa = pa->shape;
    const Shape& sb = pb->shape;
    if (sa.size() < 2 || sb.size() < 2)
        throw ShapeError("matmul: need rank >= 2, got " + shape_str(sa) + " @ " + shape_str(sb));
    bool shared_rhs = (sb.size() == 2 && sa.size() >= 2);
    if (!shared_rhs && sa.size() != sb.size())
        throw ShapeError("matmul: rank mismatch " + shape_str(sa) + " @ " + shape_str(sb));
    std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    std::size_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(sa) + " @ " + shape_str(sb));
    if (!shared_rhs)
        for (std::size_t i = 0; i + 2 < sa.size(); ++i)
            if (sa[i] != sb[i])
                throw ShapeError("matmul: batch dimensions differ, " + shape_str(sa) + " @ " + shape_str(sb));

    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    Shape so(sa.begin(), sa.end() - 2);
    so.push_back(m);
    so.push_back(n);

    std::vector<double> out(batch * m * n, 0.0);
    const double* A = pa->value.data();
    const double* B = pb->value.data();
    for (std::size_t t = 0; t < batch; ++t) {
        const double* At = A + t * m * k;
        const double* Bt = shared_rhs ? B : B + t * k * n;
        double* Ct = out.data() + t * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = At[i * k + p];
                if (av == 0.0) continue;
                const double* Brow = Bt + p * n;
                double* Crow = Ct + i * n;
                for (std::size_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
            }
    }

    return detail::make_op(std::move(so), std::move(out), {pa, pb},
                           [pa, pb, batch, m, k, n, shared_rhs](const Node& self) {
        const double* G = self.grad.data();
        const double* A = pa->value.data();
        const double* B = pb->value.data();
        if (pa->requires_grad) {
            ensure_grad(*pa);
            double* dA = pa->grad.data();
            for (std::size_t t = 0; t < batch; ++t) {
                const double* Gt = G + t * m * n;
                const double* Bt = shared_rhs ? B : B + t * k * n;
                double* dAt = dA + t * m * k;
                // dA = G @ B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* Grow = Gt + i * n;
                        const double* Brow = Bt + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += Grow[j] * Brow[j];
                        dAt[i * k + p] += s;
                    }
            }
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            double* dB = pb->grad.data();
            for (std::size_t t = 0; t < batch; ++t) {
                const double* Gt = G + t * m * n;
                const double* At = A + t * m * k;
                double* dBt = shared_rhs ? dB : dB + t * k * n;
                // dB (+)= A^T @ G
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double av = At[i * k + p];
                        if (av == 0.0) continue;
                        const double* Grow = Gt + i * n;
                        double* dBrow = dBt + p * n;
                        for (std::size_t j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
                    }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// layout ops

namespace detail {

inline void apply_permutation(const Shape& in_shape, const double* in, const std::vector<std::size_t>& axes,
                              double* out) {
    Shape out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
    auto ist = row_strides(in_shape);
    auto ost = row_strides(out_shape);
    std::size_t n = numel(in_shape);
    for (std::size_t f = 0; f < n; ++f) {
        std::size_t rem = f, src = 0;
        for (std::size_t d = 0; d < out_shape.size(); ++d) {
            std::size_t idx = rem / ost[d];
            rem %= ost[d];
            src += idx * ist[axes[d]];
        }
        out[f] = in[src];
    }
}

}  // namespace detail

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
    auto pa = a.node();
    const Shape& sa = pa->shape;
    if (axes.size() != sa.size())
        throw ShapeError("permute: axes count " + std::to_string(axes.size()) + " vs rank " +
                         std::to_string(sa.size()));
    std::vector<bool> used(sa.size(), false);
    for (std::size_t ax : axes) {
        if (ax >= sa.size() || used[ax]) throw ShapeError("permute: invalid axes for rank " + std::to_string(sa.size()));
        used[ax] = true;
    }
    Shape so(sa.size());
    for (std::size_t i = 0; i < axes.size(); ++i) so[i] = sa[axes[i]];
    std::vector<double> out(pa->size());
    detail::apply_permutation(sa, pa->value.data(), axes, out.data());
    return detail::make_op(std::move(so), std::move(out), {pa}, [pa, axes](const Node& self) {
        ensure_grad(*pa);
        // scatter: out flat index f came from input index src(f)
        const Shape& sa = pa->shape;
        Shape so(axes.size());
        for (std::size_t i = 0; i < axes.size(); ++i) so[i] = sa[axes[i]];
        auto ist = row_strides(sa);
        auto ost = row_strides(so);
        for (std::size_t f = 0; f < self.grad.size(); ++f) {
            std::size_t rem = f, src = 0;
            for (std::size_t d = 0; d < so.size(); ++d) {
                std::size_t idx = rem / ost[d];
                rem %= ost[d];
                src += idx * ist[axes[d]];
            }
            pa->grad[src] += self.grad[f];
        }
    });
}

// swap the last two dims
inline Tensor transpose(const Tensor& a) {
    std::size_t r = a.rank();
    if (r < 2) throw ShapeError("transpose: need rank >= 2, got " + shape_str(a.shape()));
    std::vector<std::size_t> axes(r);
    for (std::size_t i = 0; i < r; ++i) axes[i] = i;
    std::swap(axes[r - 2], axes[r - 1]);
    return permute(a, axes);
}

inline Tensor reshape(const Tensor& a, Shape s) {
    auto pa = a.node();
    if (numel(s) != pa->size())
        throw ShapeError("reshape: cannot view " + shape_str(pa->shape) + " as " + shape_str(s));
    std::vector<double> out = pa->value;
    return detail::make_op(std::move(s), std::move(out), {pa}, [pa](const Node& self) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

// leading block: out[i0..] = a[i0..] for i_d < extents[d] in every dim
inline Tensor slice_leading(const Tensor& a, const Shape& extents) {
    auto pa = a.node();
    const Shape& sa = pa->shape;
    if (extents.size() != sa.size())
        throw ShapeError("slice_leading: rank mismatch, extents " + shape_str(extents) + " on " + shape_str(sa));
    for (std::size_t d = 0; d < sa.size(); ++d)
        if (extents[d] > sa[d])
            throw ShapeError("slice_leading: extents " + shape_str(extents) + " exceed " + shape_str(sa));
    auto ist = row_strides(sa);
    auto ost = row_strides(extents);
    std::size_t n = numel(extents);
    std::vector<double> out(n);
    for (std::size_t f = 0; f < n; ++f) {
        std::size_t rem = f, src = 0;
        for (std::size_t d = 0; d < extents.size(); ++d) {
            std::size_t idx = rem / ost[d];
            rem %= ost[d];
            src += idx * ist[d];
        }
        out[f] = pa->value[src];
    }
    return detail::make_op(extents, std::move(out), {pa}, [pa, extents](const Node& self) {
        ensure_grad(*pa);
        auto ist = row_strides(pa->shape);
        auto ost = row_strides(extents);
        for (std::size_t f = 0; f < self.grad.size(); ++f) {
            std::size_t rem = f, src = 0;
            for (std::size_t d = 0; d < extents.size(); ++d) {
                std::size_t idx = rem / ost[d];
                rem %= ost[d];
                src += idx * ist[d];
            }
            pa->grad[src] += self.grad[f];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
    auto pa = a.node();
    double s = 0.0;
    for (double v : pa->value) s += v;
    return detail::make_op(Shape{}, {s}, {pa}, [pa](const Node& self) {
        ensure_grad(*pa);
        for (double& g : pa->grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    auto pa = a.node();
    if (pa->size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : pa->value) s += v;
    double inv = 1.0 / static_cast<double>(pa->size());
    return detail::make_op(Shape{}, {s * inv}, {pa}, [pa, inv](const Node& self) {
        ensure_grad(*pa);
        for (double& g : pa->grad) g += self.grad[0] * inv;
    });
}

inline Tensor mean_axis(const Tensor& a, std::size_t axis) {
    auto pa = a.node();
    const Shape& sa = pa->shape;
    if (axis >= sa.size()) throw ShapeError("mean_axis: axis " + std::to_string(axis) + " on " + shape_str(sa));
    std::size_t outer = 1, inner = 1, n = sa[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= sa[i];
    for (std::size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
    if (n == 0) throw ShapeError("mean_axis: zero-length axis");
    Shape so;
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (i != axis) so.push_back(sa[i]);
    std::vector<double> out(outer * inner, 0.0);
    double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < inner; ++i)
                out[o * inner + i] += pa->value[(o * n + j) * inner + i];
    for (double& v : out) v *= inv;
    return detail::make_op(std::move(so), std::move(out), {pa}, [pa, outer, inner, n, inv](const Node& self) {
        ensure_grad(*pa);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < inner; ++i)
                    pa->grad[(o * n + j) * inner + i] += self.grad[o * inner + i] * inv;
    });
}

// ---------------------------------------------------------------------------
// nonlinearities

// softmax over the last dim, stabilized by max subtraction
inline Tensor softmax(const Tensor& a) {
    auto pa = a.node();
    const Shape& sa = pa->shape;
    if (sa.empty()) throw ShapeError("softmax: need rank >= 1");
    std::size_t v = sa.back();
    if (v == 0) throw ShapeError("softmax: empty last dim");
    std::size_t rows = pa->size() / v;
    std::vector<double> out(pa->size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pa->value.data() + r * v;
        double* y = out.data() + r * v;
        double m = x[0];
        for (std::size_t i = 1; i < v; ++i) m = std::max(m, x[i]);
        double s = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
            y[i] = std::exp(x[i] - m);
            s += y[i];
        }
        double inv = 1.0 / s;
        for (std::size_t i = 0; i < v; ++i) y[i] *= inv;
    }
    return detail::make_op(sa, std::move(out), {pa}, [pa, rows, v](const Node& self) {
        ensure_grad(*pa);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * v;
            const double* g = self.grad.data() + r * v;
            double* dx = pa->grad.data() + r * v;
            double dot = 0.0;
            for (std::size_t i = 0; i < v; ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < v; ++i) dx[i] += y[i] * (g[i] - dot);
        }
    });
}

// layer norm over the last dim with learnable gain/bias of shape (d)
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    auto px = x.node(), pg = gain.node(), pb = bias.node();
    const Shape& sx = px->shape;
    if (sx.empty()) throw ShapeError("layer_norm: need rank >= 1");
    std::size_t d = sx.back();
    if (pg->shape != Shape{d} || pb->shape != Shape{d})
        throw ShapeError("layer_norm: gain " + shape_str(pg->shape) + " / bias " + shape_str(pb->shape) +
                         " must be (" + std::to_string(d) + ")");
    std::size_t rows = px->size() / d;
    std::vector<double> out(px->size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px->value.data() + r * d;
        double* yr = out.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * inv * pg->value[i] + pb->value[i];
    }
    return detail::make_op(sx, std::move(out), {px, pg, pb}, [px, pg, pb, rows, d, eps](const Node& self) {
        if (px->requires_grad) ensure_grad(*px);
        if (pg->requires_grad) ensure_grad(*pg);
        if (pb->requires_grad) ensure_grad(*pb);
        std::vector<double> xhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = px->value.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double mu = 0.0;
            for (std::size_t i = 0; i < d; ++i) mu += xr[i];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
            var /= static_cast<double>(d);
            double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t i = 0; i < d; ++i) xhat[i] = (xr[i] - mu) * inv;
            if (pb->requires_grad)
                for (std::size_t i = 0; i < d; ++i) pb->grad[i] += g[i];
            if (pg->requires_grad)
                for (std::size_t i = 0; i < d; ++i) pg->grad[i] += g[i] * xhat[i];
            if (px->requires_grad) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    double h = g[i] * pg->value[i];
                    m1 += h;
                    m2 += h * xhat[i];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                double* dx = px->grad.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) {
                    double h = g[i] * pg->value[i];
                    dx[i] += inv * (h - m1 - xhat[i] * m2);
                }
            }
        }
    });
}

// exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
inline Tensor gelu(const Tensor& a) {
    auto pa = a.node();
    std::vector<double> out(pa->size());
    const double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = pa->value[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return detail::make_op(pa->shape, std::move(out), {pa}, [pa, inv_sqrt2](const Node& self) {
        ensure_grad(*pa);
        const double inv_sqrt2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double x = pa->value[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// embedding

// table (V, d), ids laid out as (B, T) -> output (B, T, d)
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, std::size_t batch,
                               std::size_t seq) {
    auto pt = table.node();
    if (pt->shape.size() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(pt->shape));
    if (ids.size() != batch * seq)
        throw ShapeError("embedding_lookup: " + std::to_string(ids.size()) + " ids for batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
    std::size_t V = pt->shape[0], d = pt->shape[1];
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= V)
            throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside vocab " + std::to_string(V));
    std::vector<double> out(batch * seq * d);
    for (std::size_t p = 0; p < ids.size(); ++p) {
        const double* row = pt->value.data() + static_cast<std::size_t>(ids[p]) * d;
        std::copy(row, row + d, out.data() + p * d);
    }
    return detail::make_op(Shape{batch, seq, d}, std::move(out), {pt}, [pt, ids, d](const Node& self) {
        ensure_grad(*pt);
        for (std::size_t p = 0; p < ids.size(); ++p) {
            double* row = pt->grad.data() + static_cast<std::size_t>(ids[p]) * d;
            const double* g = self.grad.data() + p * d;
            for (std::size_t i = 0; i < d; ++i) row[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// losses

namespace detail {

inline double logsumexp_row(const double* x, std::size_t v) {
    double m = x[0];
    for (std::size_t i = 1; i < v; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < v; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

}  // namespace detail

// mean negative log-likelihood over rows; logits (..., v), one target id per row
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    auto pz = logits.node();
    const Shape& sz = pz->shape;
    if (sz.size() < 1 || sz.back() == 0) throw ShapeError("cross_entropy: bad logits shape " + shape_str(sz));
    std::size_t v = sz.back();
    std::size_t rows = pz->size() / v;
    if (targets.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows of " + shape_str(sz));
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw IndexError("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(v) +
                             " classes");
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pz->value.data() + r * v;
        total += detail::logsumexp_row(x, v) - x[targets[r]];
    }
    double inv = 1.0 / static_cast<double>(rows);
    return detail::make_op(Shape{}, {total * inv}, {pz}, [pz, targets, v, rows, inv](const Node& self) {
        ensure_grad(*pz);
        double g0 = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r) {
            const double* x = pz->value.data() + r * v;
            double* dx = pz->grad.data() + r * v;
            double m = x[0];
            for (std::size_t i = 1; i < v; ++i) m = std::max(m, x[i]);
            double s = 0.0;
            for (std::size_t i = 0; i < v; ++i) s += std::exp(x[i] - m);
            double invs = 1.0 / s;
            for (std::size_t i = 0; i < v; ++i) {
                double soft = std::exp(x[i] - m) * invs;
                double ind = (static_cast<std::size_t>(targets[r]) == i) ? 1.0 : 0.0;
                dx[i] += g0 * (soft - ind) * inv;
            }
        }
    });
}

// soft-target variant: mean over rows of -sum_i p_i log softmax(z)_i
inline Tensor cross_entropy(const Tensor& logits, const Tensor& target_dist) {
    auto pz = logits.node(), pp = target_dist.node();
    if (pz->shape != pp->shape)
        throw ShapeError("cross_entropy: logits " + shape_str(pz->shape) + " vs targets " + shape_str(pp->shape));
    std::size_t v = pz->shape.back();
    std::size_t rows = pz->size() / v;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pz->value.data() + r * v;
        const double* p = pp->value.data() + r * v;
        double lse = detail::logsumexp_row(x, v);
        for (std::size_t i = 0; i < v; ++i) total += p[i] * (lse - x[i]);
    }
    double inv = 1.0 / static_cast<double>(rows);
    return detail::make_op(Shape{}, {total * inv}, {pz, pp}, [pz, pp, v, rows, inv](const Node& self) {
        double g0 = self.grad[0];
        if (pz->requires_grad) ensure_grad(*pz);
        if (pp->requires_grad) ensure_grad(*pp);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* x = pz->value.data() + r * v;
            const double* p = pp->value.data() + r * v;
            double m = x[0];
            for (std::size_t i = 1; i < v; ++i) m = std::max(m, x[i]);
            double s = 0.0, psum = 0.0;
            for (std::size_t i = 0; i < v; ++i) {
                s += std::exp(x[i] - m);
                psum += p[i];
            }
            double lse = m + std::log(s), invs = 1.0 / s;
            if (pz->requires_grad) {
                double* dx = pz->grad.data() + r * v;
                for (std::size_t i = 0; i < v; ++i)
                    dx[i] += g0 * inv * (psum * std::exp(x[i] - m) * invs - p[i]);
            }
            if (pp->requires_grad) {
                double* dp = pp->grad.data() + r * v;
                for (std::size_t i = 0; i < v; ++i) dp[i] += g0 * inv * (lse - x[i]);
            }
        }
    });
}

// mean over rows of sum_i p_i log(p_i/q_i); 0 log 0 := 0; infinite when some
// q_i == 0 with p_i > 0 (raises instead of returning inf)
inline Tensor kl_divergence(const Tensor& p, const Tensor& q) {
    auto pp = p.node(), pq = q.node();
    if (pp->shape != pq->shape)
        throw ShapeError("kl_divergence: " + shape_str(pp->shape) + " vs " + shape_str(pq->shape));
    if (pp->shape.empty() || pp->shape.back() == 0) throw ShapeError("kl_divergence: bad shape " + shape_str(pp->shape));
    std::size_t v = pp->shape.back();
    std::size_t rows = pp->size() / v;
    double total = 0.0;
    for (std::size_t i = 0; i < pp->size(); ++i) {
        double pi = pp->value[i], qi = pq->value[i];
        if (pi == 0.0) continue;
        if (qi == 0.0)
            throw DivergenceError("kl_divergence: infinite divergence, q has zero mass where p > 0");
        total += pi * std::log(pi / qi);
    }
    double inv = 1.0 / static_cast<double>(rows);
    return detail::make_op(Shape{}, {total * inv}, {pp, pq}, [pp, pq, inv](const Node& self) {
        double g0 = self.grad[0];
        if (pp->requires_grad) ensure_grad(*pp);
        if (pq->requires_grad) ensure_grad(*pq);
        for (std::size_t i = 0; i < pp->size(); ++i) {
            double pi = pp->value[i], qi = pq->value[i];
            if (pi == 0.0) continue;  // subgradient convention at p = 0
            if (pp->requires_grad) pp->grad[i] += g0 * inv * (std::log(pi / qi) + 1.0);
            if (pq->requires_grad) pq->grad[i] += g0 * inv * (-pi / qi);
        }
    });
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
    auto pa = a.node(), pb = b.node();
    if (pa->shape != pb->shape)
        throw ShapeError("mse: " + shape_str(pa->shape) + " vs " + shape_str(pb->shape));
    if (pa->size() == 0) throw ShapeError("mse: empty tensors");
    double total = 0.0;
    for (std::size_t i = 0; i < pa->size(); ++i) {
        double d = pa->value[i] - pb->value[i];
        total += d * d;
    }
    double inv = 1.0 / static_cast<double>(pa->size());
    return detail::make_op(Shape{}, {total * inv}, {pa, pb}, [pa, pb, inv](const Node& self) {
        double g0 = self.grad[0];
        if (pa->requires_grad) ensure_grad(*pa);
        if (pb->requires_grad) ensure_grad(*pb);
        for (std::size_t i = 0; i < pa->size(); ++i) {
            double d = 2.0 * (pa->value[i] - pb->value[i]) * inv * g0;
            if (pa->requires_grad) pa->grad[i] += d;
            if (pb->requires_grad) pb->grad[i] -= d;
        }
    });
}

}  // namespace mlfs
