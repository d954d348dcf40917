#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "numkit/gemm.hpp"

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// Ops record onto the thread-local active tape (see TapeScope) whenever an
// input participates in gradients; with no active tape every op is a pure
// function and tensors are immutable values.

namespace numkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // persistent accumulator; leaves only, lazily sized
    bool requires_grad = false;
    bool leaf = true;
};

template <typename T>
inline thread_local Tape<T>* g_active_tape = nullptr;

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<detail::Node<T>>();
        n->data.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.n_->data.begin(), t.n_->data.end(), value);
        return t;
    }

    static Tensor from_vector(Shape shape, std::vector<T> values) {
        check(shape_numel(shape) == values.size(),
              "tensor: data length " + std::to_string(values.size()) +
                  " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value) { return from_vector({}, {value}); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t numel() const { return n_->data.size(); }

    const std::vector<T>& values() const { return n_->data; }
    const T* data() const { return n_->data.data(); }
    // Direct mutation is for initialization, optimizer updates and I/O; never
    // mutate a tensor that is already part of a recorded graph.
    T* mutable_data() { return n_->data.data(); }
    std::vector<T>& mutable_values() { return n_->data; }

    T at(std::size_t i) const { return n_->data[i]; }

    T item() const {
        check(numel() == 1, "item: tensor has " + std::to_string(numel()) + " elements");
        return n_->data[0];
    }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    bool is_leaf() const { return n_ && n_->leaf; }

    Tensor& set_requires_grad(bool b) {
        check(n_->leaf, "set_requires_grad: only leaf tensors");
        n_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return n_ && !n_->grad.empty(); }

    const std::vector<T>& grad() const {
        if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
        return n_->grad;
    }

    std::vector<T>& mutable_grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
        return n_->grad;
    }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    Tensor clone() const {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = n_->shape;
        n->data = n_->data;
        return Tensor(std::move(n));
    }

    // Same values in a fresh leaf of another scalar type (64-bit check mode).
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(n_->data.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(n_->data[i]);
        return Tensor<U>::from_vector(n_->shape, std::move(out));
    }

    std::shared_ptr<detail::Node<T>> node() const { return n_; }
    static Tensor wrap(std::shared_ptr<detail::Node<T>> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node<T>> n_;
};

// ---------------------------------------------------------------- tape

template <typename T>
class Tape {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return detail::g_active_tape<T>; }

    void record(NodePtr out, std::function<void(Tape&)> back) {
        outputs_.insert(out.get());
        steps_.push_back({std::move(out), std::move(back)});
    }

    std::size_t size() const { return steps_.size(); }

    void clear() {
        steps_.clear();
        outputs_.clear();
        tgrad_.clear();
    }

    // Reverse sweep from a scalar loss. Leaf gradients accumulate into the
    // tensors' persistent buffers (call zero_grad between steps); gradients of
    // intermediates are transient per call, so backward can run once per loss
    // term on a shared graph.
    void backward(const Tensor<T>& loss) {
        check(loss.numel() == 1,
              "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        check(outputs_.count(loss.node().get()) != 0, "backward: loss is not a tape output");
        tgrad_.clear();
        tgrad_[loss.node().get()] = {T(1)};
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
            if (tgrad_.find(it->out.get()) != tgrad_.end()) {
                it->back(*this);
            }
        }
        tgrad_.clear();
    }

    // -- helpers used by op backward closures --

    const std::vector<T>* grad_of(const detail::Node<T>* n) const {
        auto it = tgrad_.find(n);
        return it == tgrad_.end() ? nullptr : &it->second;
    }

    // Accumulate into the right place for this node: persistent buffer for
    // leaves, transient map entry for intermediates.
    std::vector<T>& sink(const NodePtr& n) {
        if (n->leaf) {
            if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
            return n->grad;
        }
        auto& g = tgrad_[n.get()];
        if (g.empty()) g.assign(n->data.size(), T(0));
        return g;
    }

    void add_grad(const NodePtr& n, const std::vector<T>& g) {
        auto& dst = sink(n);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }

private:
    struct Step {
        NodePtr out;
        std::function<void(Tape&)> back;
    };
    std::vector<Step> steps_;
    std::unordered_set<const detail::Node<T>*> outputs_;
    std::unordered_map<const detail::Node<T>*, std::vector<T>> tgrad_;
};

template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(detail::g_active_tape<T>) {
        detail::g_active_tape<T> = &tape;
    }
    ~TapeScope() { detail::g_active_tape<T> = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

namespace detail {

template <typename T>
Tensor<T> make_op_output(Shape shape, bool track) {
    Tensor<T> out = Tensor<T>::zeros(std::move(shape));
    if (track) {
        out.node()->requires_grad = true;
        out.node()->leaf = false;
    }
    return out;
}

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> ins) {
    if (!Tape<T>::active()) return false;
    for (const Tensor<T>* t : ins) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const bool track = detail::tracking<T>({&a, &b});
    Tensor<T> out = detail::make_op_output<T>(a.shape(), track);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape<T>::active()->record(on, [an, bn, on](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (an->requires_grad) tp.add_grad(an, go);
            if (bn->requires_grad) tp.add_grad(bn, go);
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const bool track = detail::tracking<T>({&a, &b});
    Tensor<T> out = detail::make_op_output<T>(a.shape(), track);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape<T>::active()->record(on, [an, bn, on](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (an->requires_grad) tp.add_grad(an, go);
            if (bn->requires_grad) {
                auto& dst = tp.sink(bn);
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const bool track = detail::tracking<T>({&a, &b});
    Tensor<T> out = detail::make_op_output<T>(a.shape(), track);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape<T>::active()->record(on, [an, bn, on](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (an->requires_grad) {
                auto& dst = tp.sink(an);
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += go[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                auto& dst = tp.sink(bn);
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += go[i] * an->data[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    const bool track = detail::tracking<T>({&a});
    Tensor<T> out = detail::make_op_output<T>(a.shape(), track);
    const T* pa = a.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * s;
    if (track) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record(on, [an, on, s](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(an);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += go[i] * s;
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    const bool track = detail::tracking<T>({&a});
    Tensor<T> out = detail::make_op_output<T>(a.shape(), track);
    const T* pa = a.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + s;
    if (track) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record(on, [an, on](Tape<T>& tp) {
            tp.add_grad(an, *tp.grad_of(on.get()));
        });
    }
    return out;
}

// x[d0, rest...] * v[d0], broadcasting v over trailing dims.
template <typename T>
Tensor<T> mul_axis0(const Tensor<T>& x, const Tensor<T>& v) {
    check(x.rank() >= 1 && v.rank() == 1 && v.dim(0) == x.dim(0),
          "mul_axis0: shapes " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
    const std::size_t d0 = x.dim(0);
    const std::size_t inner = x.numel() / d0;
    const bool track = detail::tracking<T>({&x, &v});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), track);
    const T* px = x.data();
    const T* pv = v.data();
    T* po = out.mutable_data();
    for (std::size_t c = 0; c < d0; ++c) {
        for (std::size_t i = 0; i < inner; ++i) po[c * inner + i] = px[c * inner + i] * pv[c];
    }
    if (track) {
        auto xn = x.node(), vn = v.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, vn, on, d0, inner](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (xn->requires_grad) {
                auto& dst = tp.sink(xn);
                for (std::size_t c = 0; c < d0; ++c) {
                    for (std::size_t i = 0; i < inner; ++i) {
                        dst[c * inner + i] += go[c * inner + i] * vn->data[c];
                    }
                }
            }
            if (vn->requires_grad) {
                auto& dst = tp.sink(vn);
                for (std::size_t c = 0; c < d0; ++c) {
                    T acc = 0;
                    for (std::size_t i = 0; i < inner; ++i) {
                        acc += go[c * inner + i] * xn->data[c * inner + i];
                    }
                    dst[c] += acc;
                }
            }
        });
    }
    return out;
}

// x[d0, rest...] + v[d0]
template <typename T>
Tensor<T> add_axis0(const Tensor<T>& x, const Tensor<T>& v) {
    check(x.rank() >= 1 && v.rank() == 1 && v.dim(0) == x.dim(0),
          "add_axis0: shapes " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
    const std::size_t d0 = x.dim(0);
    const std::size_t inner = x.numel() / d0;
    const bool track = detail::tracking<T>({&x, &v});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), track);
    const T* px = x.data();
    const T* pv = v.data();
    T* po = out.mutable_data();
    for (std::size_t c = 0; c < d0; ++c) {
        for (std::size_t i = 0; i < inner; ++i) po[c * inner + i] = px[c * inner + i] + pv[c];
    }
    if (track) {
        auto xn = x.node(), vn = v.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, vn, on, d0, inner](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (xn->requires_grad) tp.add_grad(xn, go);
            if (vn->requires_grad) {
                auto& dst = tp.sink(vn);
                for (std::size_t c = 0; c < d0; ++c) {
                    T acc = 0;
                    for (std::size_t i = 0; i < inner; ++i) acc += go[c * inner + i];
                    dst[c] += acc;
                }
            }
        });
    }
    return out;
}

// x[N,D] + v[D], broadcasting v over rows (bias add).
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    check(x.rank() == 2 && v.rank() == 1 && v.dim(0) == x.dim(1),
          "add_rowvec: shapes " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    const bool track = detail::tracking<T>({&x, &v});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), track);
    const T* px = x.data();
    const T* pv = v.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pv[j];
    }
    if (track) {
        auto xn = x.node(), vn = v.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, vn, on, n, d](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (xn->requires_grad) tp.add_grad(xn, go);
            if (vn->requires_grad) {
                auto& dst = tp.sink(vn);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j) dst[j] += go[i * d + j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- activations

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn dydx) {
    const bool track = tracking<T>({&a});
    Tensor<T> out = make_op_output<T>(a.shape(), track);
    const T* pa = a.data();
    T* po = out.mutable_data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = fwd(pa[i]);
    if (track) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record(on, [an, on, dydx](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(an);
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += go[i] * dydx(an->data[i], on->data[i]);
            }
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.7071067811865475244);
    constexpr T inv_sqrt2pi = T(0.3989422804014326779);
    return detail::unary_op(
        a,
        [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x, T) {
            const T phi = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            return phi + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------- softmax

// Stable softmax along `axis`; rows sum to 1 within round-off.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    check(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " +
                               shape_str(x.shape()));
    const std::size_t extent = x.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), track);
    const T* px = x.data();
    T* po = out.mutable_data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = px[base];
            for (std::size_t k = 1; k < extent; ++k) mx = std::max(mx, px[base + k * inner]);
            if (std::isnan(mx)) throw std::domain_error("softmax: NaN in input");
            T sum = 0;
            for (std::size_t k = 0; k < extent; ++k) {
                const T e = std::exp(px[base + k * inner] - mx);
                po[base + k * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::size_t k = 0; k < extent; ++k) po[base + k * inner] *= inv;
        }
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, on, outer, inner, extent](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(xn);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * extent * inner + in;
                    T dot = 0;
                    for (std::size_t k = 0; k < extent; ++k) {
                        dot += go[base + k * inner] * on->data[base + k * inner];
                    }
                    for (std::size_t k = 0; k < extent; ++k) {
                        const std::size_t idx = base + k * inner;
                        dst[idx] += (go[idx] - dot) * on->data[idx];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- matmul

// a[m,k] @ b[k,n]; batched [B,m,k] @ [B,k,n]; broadcast [B,m,k] @ [k,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const std::string err = "matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape());
    check((a.rank() == 2 || a.rank() == 3) && (b.rank() == 2 || b.rank() == 3), err);
    check(b.rank() <= a.rank(), err);
    const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
    const bool b_batched = b.rank() == 3;
    if (b_batched) check(a.rank() == 3 && b.dim(0) == batch, err);
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    check(k == kb, err);

    Shape out_shape = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
    const bool track = detail::tracking<T>({&a, &b});
    Tensor<T> out = detail::make_op_output<T>(std::move(out_shape), track);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        detail::gemm_nn(m, k, n, a.data() + bi * m * k, b.data() + (b_batched ? bi * k * n : 0),
                        out.mutable_data() + bi * m * n, false);
    }
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape<T>::active()->record(on, [an, bn, on, batch, b_batched, m, k, n](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (an->requires_grad) {
                auto& da = tp.sink(an);
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    // da += go @ b^T
                    std::vector<T> tmp(m * k);
                    detail::gemm_nt(m, n, k, go.data() + bi * m * n,
                                    bn->data.data() + (b_batched ? bi * k * n : 0), tmp.data(),
                                    false);
                    T* dst = da.data() + bi * m * k;
                    for (std::size_t i = 0; i < m * k; ++i) dst[i] += tmp[i];
                }
            }
            if (bn->requires_grad) {
                auto& db = tp.sink(bn);
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    // db += a^T @ go (accumulates over batch when b is broadcast)
                    detail::gemm_tn(m, k, n, an->data.data() + bi * m * k,
                                    go.data() + bi * m * n,
                                    db.data() + (b_batched ? bi * k * n : 0), true);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    check(shape_numel(new_shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>(std::move(new_shape), track);
    std::copy(x.data(), x.data() + x.numel(), out.mutable_data());
    if (track) {
        auto xn = x.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, on](Tape<T>& tp) {
            tp.add_grad(xn, *tp.grad_of(on.get()));
        });
    }
    return out;
}

// General axis permutation, rank <= 4.
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    check(perm.size() == x.rank() && x.rank() <= 4,
          "permute: bad permutation for " + shape_str(x.shape()));
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);

    const std::size_t r = x.rank();
    Shape xs = x.shape();
    std::vector<std::size_t> xstride(r, 1);
    for (std::size_t i = r; i-- > 1;) xstride[i - 1] = xstride[i] * xs[i];

    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>(out_shape, track);
    const T* px = x.data();
    T* po = out.mutable_data();
    std::vector<std::size_t> idx(r, 0);
    const std::size_t total = x.numel();
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t acc = flat, src = 0;
        for (std::size_t d = r; d-- > 0;) {
            idx[d] = acc % out_shape[d];
            acc /= out_shape[d];
        }
        for (std::size_t d = 0; d < r; ++d) src += idx[d] * xstride[perm[d]];
        po[flat] = px[src];
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        std::vector<std::size_t> p = perm;
        Tape<T>::active()->record(on, [xn, on, p, out_shape, xstride](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(xn);
            const std::size_t r2 = p.size();
            std::vector<std::size_t> idx2(r2, 0);
            for (std::size_t flat = 0; flat < go.size(); ++flat) {
                std::size_t acc = flat, src = 0;
                for (std::size_t d = r2; d-- > 0;) {
                    idx2[d] = acc % out_shape[d];
                    acc /= out_shape[d];
                }
                for (std::size_t d = 0; d < r2; ++d) src += idx2[d] * xstride[p[d]];
                dst[src] += go[flat];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    check(x.rank() == 2, "transpose2d: need rank 2, got " + shape_str(x.shape()));
    return permute(x, {1, 0});
}

// Concatenate along axis 0; trailing dims must match.
template <typename T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == b.rank() && a.rank() >= 1,
          "concat0: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (std::size_t i = 1; i < a.rank(); ++i) {
        check(a.dim(i) == b.dim(i), "concat0: trailing dims differ " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
    }
    Shape out_shape = a.shape();
    out_shape[0] += b.dim(0);
    const bool track = detail::tracking<T>({&a, &b});
    Tensor<T> out = detail::make_op_output<T>(std::move(out_shape), track);
    std::copy(a.data(), a.data() + a.numel(), out.mutable_data());
    std::copy(b.data(), b.data() + b.numel(), out.mutable_data() + a.numel());
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        const std::size_t na = a.numel();
        Tape<T>::active()->record(on, [an, bn, on, na](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            if (an->requires_grad) {
                auto& dst = tp.sink(an);
                for (std::size_t i = 0; i < na; ++i) dst[i] += go[i];
            }
            if (bn->requires_grad) {
                auto& dst = tp.sink(bn);
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += go[na + i];
            }
        });
    }
    return out;
}

// Slice [start, start+count) along axis 0.
template <typename T>
Tensor<T> slice0(const Tensor<T>& x, std::size_t start, std::size_t count) {
    check(x.rank() >= 1 && start + count <= x.dim(0),
          "slice0: range [" + std::to_string(start) + "," + std::to_string(start + count) +
              ") out of bounds for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[0] = count;
    const std::size_t inner = x.numel() / x.dim(0);
    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>(std::move(out_shape), track);
    std::copy(x.data() + start * inner, x.data() + (start + count) * inner, out.mutable_data());
    if (track) {
        auto xn = x.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, on, start, inner](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(xn);
            for (std::size_t i = 0; i < go.size(); ++i) dst[start * inner + i] += go[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>({}, track);
    T acc = 0;
    const T* px = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    out.mutable_data()[0] = acc;
    if (track) {
        auto xn = x.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, on](Tape<T>& tp) {
            const T g = (*tp.grad_of(on.get()))[0];
            auto& dst = tp.sink(xn);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return mul_scalar(sum_all(x), T(1) / T(x.numel()));
}

// Sum of squared differences (the diffusion losses sum over elements).
template <typename T>
Tensor<T> sq_error_sum(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> d = sub(a, b);
    return sum_all(mul(d, d));
}

// ---------------------------------------------------------------- conv2d

namespace detail {

// x[C,H,W] -> col[C*kh*kw, oh*ow]
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* col) {
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                T* dst = col + ((ch * kh + ki) * kw + kj) * oh * ow;
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                                              static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        T v = 0;
                        if (yi >= 0 && yi < static_cast<std::ptrdiff_t>(h) && xj >= 0 &&
                            xj < static_cast<std::ptrdiff_t>(w)) {
                            v = x[(ch * h + yi) * w + xj];
                        }
                        dst[oi * ow + oj] = v;
                    }
                }
            }
        }
    }
}

// col[C*kh*kw, oh*ow] scatter-added back into x[C,H,W]
template <typename T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow, T* x) {
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const T* src = col + ((ch * kh + ki) * kw + kj) * oh * ow;
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(w)) continue;
                        x[(ch * h + yi) * w + xj] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D convolution. x is [C,H,W] or [B,C,H,W]; w is [O,C,kh,kw]; b is [O] or
// undefined. Output extents must divide exactly: (H + 2*pad - kh) % stride == 0.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, std::size_t pad = 0) {
    check(x.rank() == 3 || x.rank() == 4,
          "conv2d: input must be [C,H,W] or [B,C,H,W], got " + shape_str(x.shape()));
    check(w.rank() == 4, "conv2d: weight must be [O,C,kh,kw], got " + shape_str(w.shape()));
    const bool batched = x.rank() == 4;
    const std::size_t bs = batched ? x.dim(0) : 1;
    const std::size_t c = x.dim(batched ? 1 : 0);
    const std::size_t h = x.dim(batched ? 2 : 1);
    const std::size_t wd = x.dim(batched ? 3 : 2);
    const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == c, "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                             " vs weight " + shape_str(w.shape()));
    check(stride >= 1, "conv2d: stride must be >= 1");
    check(kh <= h + 2 * pad && kw <= wd + 2 * pad,
          "conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
              shape_str(x.shape()));
    check((h + 2 * pad - kh) % stride == 0 && (wd + 2 * pad - kw) % stride == 0,
          "conv2d: non-integral output extent for input " + shape_str(x.shape()) + ", kernel " +
              shape_str(w.shape()) + ", stride " + std::to_string(stride) + ", pad " +
              std::to_string(pad));
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
    if (b.defined()) {
        check(b.rank() == 1 && b.dim(0) == o,
              "conv2d: bias shape " + shape_str(b.shape()) + " does not match " +
                  std::to_string(o) + " output channels");
    }

    Shape out_shape = batched ? Shape{bs, o, oh, ow} : Shape{o, oh, ow};
    const bool track = b.defined() ? detail::tracking<T>({&x, &w, &b})
                                   : detail::tracking<T>({&x, &w});
    Tensor<T> out = detail::make_op_output<T>(std::move(out_shape), track);

    const std::size_t ckk = c * kh * kw;
    std::vector<T> col(ckk * oh * ow);
    for (std::size_t bi = 0; bi < bs; ++bi) {
        detail::im2col(x.data() + bi * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                       col.data());
        T* po = out.mutable_data() + bi * o * oh * ow;
        detail::gemm_nn(o, ckk, oh * ow, w.data(), col.data(), po, false);
        if (b.defined()) {
            for (std::size_t oc = 0; oc < o; ++oc) {
                const T bias = b.data()[oc];
                for (std::size_t i = 0; i < oh * ow; ++i) po[oc * oh * ow + i] += bias;
            }
        }
    }

    if (track) {
        auto xn = x.node(), wn = w.node(), on = out.node();
        auto bn = b.defined() ? b.node() : nullptr;
        Tape<T>::active()->record(on, [xn, wn, bn, on, bs, c, h, wd, o, kh, kw, stride, pad, oh,
                                       ow, ckk](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            std::vector<T> col(ckk * oh * ow);
            std::vector<T>* dx = xn->requires_grad ? &tp.sink(xn) : nullptr;
            std::vector<T>* dw = wn->requires_grad ? &tp.sink(wn) : nullptr;
            std::vector<T>* db = (bn && bn->requires_grad) ? &tp.sink(bn) : nullptr;
            std::vector<T> dcol(dx ? ckk * oh * ow : 0);
            for (std::size_t bi = 0; bi < bs; ++bi) {
                const T* g = go.data() + bi * o * oh * ow;
                if (dw || dx) {
                    detail::im2col(xn->data.data() + bi * c * h * wd, c, h, wd, kh, kw, stride,
                                   pad, oh, ow, col.data());
                }
                if (dw) {
                    // dW += g[o, ohw] @ col[ckk, ohw]^T
                    detail::gemm_nt(o, oh * ow, ckk, g, col.data(), dw->data(), true);
                }
                if (db) {
                    for (std::size_t oc = 0; oc < o; ++oc) {
                        T acc = 0;
                        for (std::size_t i = 0; i < oh * ow; ++i) acc += g[oc * oh * ow + i];
                        (*db)[oc] += acc;
                    }
                }
                if (dx) {
                    // dcol = W[o, ckk]^T @ g[o, ohw]
                    detail::gemm_tn(o, ckk, oh * ow, wn->data.data(), g, dcol.data(), false);
                    detail::col2im_add(dcol.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
                                       dx->data() + bi * c * h * wd);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- norms

// GroupNorm over [C,H,W]; gamma/beta are per-channel.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
    check(x.rank() == 3, "group_norm: input must be [C,H,W], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    check(groups >= 1 && c % groups == 0,
          "group_norm: channels " + std::to_string(c) + " not divisible by groups " +
              std::to_string(groups));
    check(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
          "group_norm: affine shape mismatch for " + shape_str(x.shape()));
    const std::size_t cpg = c / groups;
    const std::size_t gsize = cpg * hw;

    const bool track = detail::tracking<T>({&x, &gamma, &beta});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), track);
    std::vector<T> mean(groups), istd(groups);
    const T* px = x.data();
    T* po = out.mutable_data();
    for (std::size_t g = 0; g < groups; ++g) {
        const T* base = px + g * gsize;
        T m = 0;
        for (std::size_t i = 0; i < gsize; ++i) m += base[i];
        m /= T(gsize);
        T v = 0;
        for (std::size_t i = 0; i < gsize; ++i) {
            const T d = base[i] - m;
            v += d * d;
        }
        v /= T(gsize);
        mean[g] = m;
        istd[g] = T(1) / std::sqrt(v + eps);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t g = ch / cpg;
        const T gm = gamma.data()[ch], bt = beta.data()[ch];
        for (std::size_t i = 0; i < hw; ++i) {
            po[ch * hw + i] = (px[ch * hw + i] - mean[g]) * istd[g] * gm + bt;
        }
    }
    if (track) {
        auto xn = x.node(), gn = gamma.node(), btn = beta.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, gn, btn, on, groups, cpg, hw, mean, istd](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            const std::size_t gsize = cpg * hw;
            std::vector<T>* dx = xn->requires_grad ? &tp.sink(xn) : nullptr;
            std::vector<T>* dgamma = gn->requires_grad ? &tp.sink(gn) : nullptr;
            std::vector<T>* dbeta = btn->requires_grad ? &tp.sink(btn) : nullptr;
            for (std::size_t g = 0; g < groups; ++g) {
                const T m = mean[g], is = istd[g];
                // accumulate dgamma/dbeta and the two reductions for dx
                T sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (std::size_t cc = 0; cc < cpg; ++cc) {
                    const std::size_t ch = g * cpg + cc;
                    const T gm = gn->data[ch];
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t idx = ch * hw + i;
                        const T xhat = (xn->data[idx] - m) * is;
                        const T dy = go[idx];
                        if (dgamma) (*dgamma)[ch] += dy * xhat;
                        if (dbeta) (*dbeta)[ch] += dy;
                        const T dxhat = dy * gm;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                }
                if (dx) {
                    const T inv_n = T(1) / T(gsize);
                    for (std::size_t cc = 0; cc < cpg; ++cc) {
                        const std::size_t ch = g * cpg + cc;
                        const T gm = gn->data[ch];
                        for (std::size_t i = 0; i < hw; ++i) {
                            const std::size_t idx = ch * hw + i;
                            const T xhat = (xn->data[idx] - m) * is;
                            const T dxhat = go[idx] * gm;
                            (*dx)[idx] +=
                                is * (dxhat - inv_n * sum_dxhat - inv_n * xhat * sum_dxhat_xhat);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// LayerNorm over the last axis of [N,D].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    check(x.rank() == 2, "layer_norm: input must be [N,D], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    check(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm: affine shape mismatch for " + shape_str(x.shape()));

    const bool track = detail::tracking<T>({&x, &gamma, &beta});
    Tensor<T> out = detail::make_op_output<T>(x.shape(), track);
    std::vector<T> mean(n), istd(n);
    const T* px = x.data();
    T* po = out.mutable_data();
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = px + r * d;
        T m = 0;
        for (std::size_t j = 0; j < d; ++j) m += row[j];
        m /= T(d);
        T v = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const T diff = row[j] - m;
            v += diff * diff;
        }
        v /= T(d);
        mean[r] = m;
        istd[r] = T(1) / std::sqrt(v + eps);
        for (std::size_t j = 0; j < d; ++j) {
            po[r * d + j] = (row[j] - m) * istd[r] * gamma.data()[j] + beta.data()[j];
        }
    }
    if (track) {
        auto xn = x.node(), gn = gamma.node(), btn = beta.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, gn, btn, on, n, d, mean, istd](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            std::vector<T>* dx = xn->requires_grad ? &tp.sink(xn) : nullptr;
            std::vector<T>* dgamma = gn->requires_grad ? &tp.sink(gn) : nullptr;
            std::vector<T>* dbeta = btn->requires_grad ? &tp.sink(btn) : nullptr;
            for (std::size_t r = 0; r < n; ++r) {
                const T m = mean[r], is = istd[r];
                T sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const std::size_t idx = r * d + j;
                    const T xhat = (xn->data[idx] - m) * is;
                    const T dy = go[idx];
                    if (dgamma) (*dgamma)[j] += dy * xhat;
                    if (dbeta) (*dbeta)[j] += dy;
                    const T dxhat = dy * gn->data[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                if (dx) {
                    const T inv_d = T(1) / T(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::size_t idx = r * d + j;
                        const T xhat = (xn->data[idx] - m) * is;
                        const T dxhat = go[idx] * gn->data[j];
                        (*dx)[idx] +=
                            is * (dxhat - inv_d * sum_dxhat - inv_d * xhat * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- resampling

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    check(x.rank() == 3, "upsample_nearest2x: input must be [C,H,W], got " +
                             shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>({c, 2 * h, 2 * w}, track);
    const T* px = x.data();
    T* po = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                const T v = px[(ch * h + i) * w + j];
                T* dst = po + (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
                dst[0] = v;
                dst[1] = v;
                dst[2 * w] = v;
                dst[2 * w + 1] = v;
            }
        }
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, on, c, h, w](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(xn);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t i = 0; i < h; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        const T* src = go.data() + (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
                        dst[(ch * h + i) * w + j] +=
                            src[0] + src[1] + src[2 * w] + src[2 * w + 1];
                    }
                }
            }
        });
    }
    return out;
}

// Bilinear resize (half-pixel centers). Exact identity when extents match.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
    check(x.rank() == 3, "resize_bilinear: input must be [C,H,W], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check(oh >= 1 && ow >= 1, "resize_bilinear: output extents must be positive");
    if (oh == h && ow == w) {
        // no-op path keeps bit-exactness for aligned configurations
        return add_scalar(x, T(0));
    }

    struct Tap {
        std::size_t lo, hi;
        T wlo, whi;
    };
    auto make_taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> taps(out);
        for (std::size_t i = 0; i < out; ++i) {
            const double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                                   static_cast<double>(out) -
                               0.5;
            const double clamped = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
            const std::size_t lo = static_cast<std::size_t>(clamped);
            const std::size_t hi = std::min(lo + 1, in - 1);
            const T frac = static_cast<T>(clamped - static_cast<double>(lo));
            taps[i] = {lo, hi, T(1) - frac, frac};
        }
        return taps;
    };
    const auto ty = make_taps(h, oh);
    const auto tx = make_taps(w, ow);

    const bool track = detail::tracking<T>({&x});
    Tensor<T> out = detail::make_op_output<T>({c, oh, ow}, track);
    const T* px = x.data();
    T* po = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = px + ch * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                const Tap& a = ty[i];
                const Tap& b = tx[j];
                po[(ch * oh + i) * ow + j] =
                    a.wlo * (b.wlo * plane[a.lo * w + b.lo] + b.whi * plane[a.lo * w + b.hi]) +
                    a.whi * (b.wlo * plane[a.hi * w + b.lo] + b.whi * plane[a.hi * w + b.hi]);
            }
        }
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        Tape<T>::active()->record(on, [xn, on, c, h, w, oh, ow, ty, tx](Tape<T>& tp) {
            const auto& go = *tp.grad_of(on.get());
            auto& dst = tp.sink(xn);
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* plane = dst.data() + ch * h * w;
                for (std::size_t i = 0; i < oh; ++i) {
                    for (std::size_t j = 0; j < ow; ++j) {
                        const T g = go[(ch * oh + i) * ow + j];
                        const Tap& a = ty[i];
                        const Tap& b = tx[j];
                        plane[a.lo * w + b.lo] += g * a.wlo * b.wlo;
                        plane[a.lo * w + b.hi] += g * a.wlo * b.whi;
                        plane[a.hi * w + b.lo] += g * a.whi * b.wlo;
                        plane[a.hi * w + b.hi] += g * a.whi * b.whi;
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace numkit
