#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tailor/errors.hpp"

namespace tailor {

// Scalar type for all tensor math. Gradient checks assume f64 headroom;
// compile with TAILOR_REAL_FLOAT only for f32 training experiments.
#ifdef TAILOR_REAL_FLOAT
using real_t = float;
#else
using real_t = double;
#endif

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace detail

class Tensor;

// Result of Tape::backward: gradient per tape node id.
using GradientMap = std::unordered_map<int, Tensor>;

// Dense row-major tensor. Value semantics, immutable payload: every op
// allocates a fresh buffer, so concurrent readers never observe mutation.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<real_t> data, bool requires_grad = false) {
        if (detail::numel_of(shape) != data.size()) {
            throw ShapeMismatch("from(): shape " + detail::shape_str(shape) + " does not hold " +
                                std::to_string(data.size()) + " scalars");
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<const std::vector<real_t>>(std::move(data));
        t.requires_grad_ = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, real_t value, bool requires_grad = false) {
        std::vector<real_t> d(detail::numel_of(shape), value);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), real_t(0)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), real_t(1)); }
    static Tensor scalar(real_t v) { return from({1}, {v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    const std::vector<real_t>& data() const { return *data_; }

    real_t at(std::size_t i) const { return (*data_)[i]; }

    real_t item() const {
        if (numel() != 1) throw NotScalar("item() on tensor of shape " + detail::shape_str(shape_));
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    int node() const { return node_; }
    bool on_tape() const { return node_ >= 0; }

    // Same payload, no tape membership. Gradients stop here.
    Tensor detached() const {
        Tensor t = *this;
        t.node_ = -1;
        t.requires_grad_ = false;
        return t;
    }

    // Payload copy with one value replaced; used by finite-difference probes.
    Tensor with_value(std::size_t i, real_t v) const {
        std::vector<real_t> d = *data_;
        d[i] = v;
        return from(shape_, std::move(d), requires_grad_);
    }

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<real_t>> data_;
    bool requires_grad_ = false;
    int node_ = -1;
};

// Reverse-mode tape. One tape per training step; the constructor installs
// the tape as the thread's active recorder and the destructor restores the
// previous one. Ops record nodes only while a tape is active and at least
// one input lives on it.
class Tape {
public:
    using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

    Tape() : prev_(current_ref()) { current_ref() = this; }
    ~Tape() { current_ref() = prev_; }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_ref(); }

    // Registers a leaf. Returns a copy of `t` bound to a fresh node id; the
    // returned tensor is what gradient lookups key on.
    Tensor watch(const Tensor& t) {
        if (!t.requires_grad()) {
            throw DetachedTensor("watch() requires requires_grad=true");
        }
        Tensor bound = t;
        bound.node_ = record(Node{{}, nullptr, t.shape(), true});
        return bound;
    }

    // Binds an op result to the tape. `input_ids` lists the on-tape inputs;
    // `fn` maps the incoming gradient to per-input gradients in that order.
    Tensor adopt(Tensor result, std::vector<int> input_ids, BackwardFn fn) {
        result.node_ = record(Node{std::move(input_ids), std::move(fn), {}, false});
        result.requires_grad_ = true;
        return result;
    }

    std::size_t size() const { return nodes_.size(); }

    // Gradients of a scalar loss for every node the chain rule reaches.
    // Watched leaves always appear in the map (zeros if never reached).
    // Traversal is reverse node order, a topological order by construction;
    // each node is visited exactly once, so repeated calls are identical.
    GradientMap backward(const Tensor& loss) const {
        if (!loss.defined() || loss.numel() != 1) {
            throw NotScalar("backward() needs a scalar loss");
        }
        if (loss.node() < 0 || static_cast<std::size_t>(loss.node()) >= nodes_.size()) {
            throw DetachedTensor("backward() on a loss that is not on this tape");
        }
        std::vector<Tensor> grads(nodes_.size());
        grads[static_cast<std::size_t>(loss.node())] = Tensor::ones(loss.shape());

        for (int i = loss.node(); i >= 0; --i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            if (!grads[ui].defined()) continue;
            const Node& node = nodes_[ui];
            if (!node.fn) continue;  // leaf
            std::vector<Tensor> gins = node.fn(grads[ui]);
            for (std::size_t j = 0; j < node.inputs.size(); ++j) {
                if (j >= gins.size() || !gins[j].defined()) continue;
                accumulate(grads[static_cast<std::size_t>(node.inputs[j])], gins[j]);
            }
        }

        GradientMap out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (grads[i].defined()) {
                out.emplace(static_cast<int>(i), grads[i].detached());
            } else if (nodes_[i].is_leaf) {
                out.emplace(static_cast<int>(i), Tensor::zeros(nodes_[i].leaf_shape));
            }
        }
        return out;
    }

private:
    friend class TapeSuspend;

    struct Node {
        std::vector<int> inputs;
        BackwardFn fn;
        Shape leaf_shape;
        bool is_leaf = false;
    };

    static Tape*& current_ref() {
        thread_local Tape* current = nullptr;
        return current;
    }

    int record(Node node) {
        nodes_.push_back(std::move(node));
        return static_cast<int>(nodes_.size()) - 1;
    }

    static void accumulate(Tensor& slot, const Tensor& g) {
        if (!slot.defined()) {
            slot = g;
            return;
        }
        if (slot.shape() != g.shape()) {
            throw ShapeMismatch("gradient accumulation " + detail::shape_str(slot.shape()) +
                                " vs " + detail::shape_str(g.shape()));
        }
        std::vector<real_t> d(slot.numel());
        const auto& a = slot.data();
        const auto& b = g.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] + b[i];
        slot = Tensor::from(slot.shape(), std::move(d));
    }

    std::vector<Node> nodes_;
    Tape* prev_ = nullptr;
};

// Turns recording off for a scope; inference-time code paths use this so
// they never bloat a training tape.
class TapeSuspend {
public:
    TapeSuspend() : prev_(Tape::current_ref()) { Tape::current_ref() = nullptr; }
    ~TapeSuspend() { Tape::current_ref() = prev_; }
    TapeSuspend(const TapeSuspend&) = delete;
    TapeSuspend& operator=(const TapeSuspend&) = delete;

private:
    Tape* prev_;
};

// ---------------------------------------------------------------------------
// raw kernels — no tape participation; shared by forward ops and backward
// closures so backward never re-records
// ---------------------------------------------------------------------------

namespace detail {

// Trailing-dimension broadcast: align shapes at the right edge, missing
// leading dims count as 1, and each aligned pair must match or be 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeMismatch("broadcast " + shape_str(a) + " vs " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t acc = 1;
    const std::size_t offset = out.size() - in.size();
    for (std::size_t i = in.size(); i-- > 0;) {
        strides[i + offset] = (in[i] == 1) ? 0 : acc;
        acc *= in[i];
    }
    return strides;
}

template <typename F>
std::vector<real_t> broadcast_binary(const Tensor& a, const Tensor& b, const Shape& out_shape,
                                     F&& f) {
    const auto& ad = a.data();
    const auto& bd = b.data();
    const std::size_t n = numel_of(out_shape);
    std::vector<real_t> out(n);

    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
        return out;
    }
    if (b.numel() == 1) {
        const real_t bv = bd[0];
        for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bv);
        return out;
    }
    if (a.numel() == 1) {
        const real_t av = ad[0];
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av, bd[i]);
        return out;
    }

    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const std::size_t r = out_shape.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t lin = 0; lin < n; ++lin) {
        out[lin] = f(ad[ia], bd[ib]);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out_shape[d]) break;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return out;
}

// Sums `g` (shaped like a broadcast result) down to `to`, undoing expansion.
inline Tensor reduce_to_shape(const Tensor& g, const Shape& to) {
    if (g.shape() == to) return g;
    std::vector<real_t> out(numel_of(to), real_t(0));
    const auto strides = broadcast_strides(to, g.shape());
    const auto& gd = g.data();
    const std::size_t r = g.shape().size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t it = 0;
    for (std::size_t lin = 0; lin < gd.size(); ++lin) {
        out[it] += gd[lin];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            it += strides[d];
            if (idx[d] < g.shape()[d]) break;
            it -= strides[d] * g.shape()[d];
            idx[d] = 0;
        }
    }
    return Tensor::from(to, std::move(out));
}

inline void matmul_kernel(const real_t* a, const real_t* b, real_t* c, std::size_t m,
                          std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, real_t(0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const real_t av = a[i * k + p];
            const real_t* brow = b + p * n;
            real_t* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline std::vector<real_t> transpose_kernel(const std::vector<real_t>& a, std::size_t m,
                                            std::size_t n) {
    std::vector<real_t> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

inline real_t stable_sigmoid(real_t x) {
    if (x >= 0) {
        return real_t(1) / (real_t(1) + std::exp(-x));
    }
    const real_t e = std::exp(x);
    return e / (real_t(1) + e);
}

inline void check_finite(const std::vector<real_t>& d, const char* op) {
    for (real_t v : d) {
        if (!std::isfinite(v)) throw DomainError(std::string(op) + " produced a non-finite value");
    }
}

// outer * n * inner decomposition around one axis.
struct AxisSplit {
    std::size_t outer, n, inner;
};

inline AxisSplit axis_split(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw InvalidAxis("axis " + std::to_string(axis) + " for shape " + shape_str(s));
    }
    AxisSplit sp{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

// Attaches `result` to the active tape when any listed input is on it.
// Off-tape inputs are dropped from the node; the closure's slots stay
// aligned with the original input order via remapping.
inline Tensor wire(Tensor result, std::vector<const Tensor*> inputs, Tape::BackwardFn fn) {
    Tape* tape = Tape::current();
    if (!tape) return result;
    std::vector<int> kept_ids;
    std::vector<std::size_t> kept_slots;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i]->on_tape()) {
            kept_ids.push_back(inputs[i]->node());
            kept_slots.push_back(i);
        }
    }
    if (kept_ids.empty()) return result;
    auto remap = [fn = std::move(fn), kept_slots](const Tensor& g) {
        std::vector<Tensor> full = fn(g);
        std::vector<Tensor> kept;
        kept.reserve(kept_slots.size());
        for (std::size_t slot : kept_slots) {
            kept.push_back(slot < full.size() ? full[slot] : Tensor());
        }
        return kept;
    };
    return tape->adopt(std::move(result), std::move(kept_ids), std::move(remap));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

enum class Ew { add, sub, mul, div, exp, log, tanh, sigmoid, pow, sqrt, relu };

inline bool ew_is_binary(Ew k) {
    return k == Ew::add || k == Ew::sub || k == Ew::mul || k == Ew::div || k == Ew::pow;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    Tensor r = Tensor::from(out_shape, detail::broadcast_binary(a, b, out_shape,
                                                                [](real_t x, real_t y) { return x + y; }));
    const Shape as = a.shape(), bs = b.shape();
    return detail::wire(std::move(r), {&a, &b}, [as, bs](const Tensor& g) {
        return std::vector<Tensor>{detail::reduce_to_shape(g, as), detail::reduce_to_shape(g, bs)};
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    Tensor r = Tensor::from(out_shape, detail::broadcast_binary(a, b, out_shape,
                                                                [](real_t x, real_t y) { return x - y; }));
    const Shape as = a.shape(), bs = b.shape();
    return detail::wire(std::move(r), {&a, &b}, [as, bs](const Tensor& g) {
        std::vector<real_t> neg(g.numel());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -g.at(i);
        return std::vector<Tensor>{detail::reduce_to_shape(g, as),
                                   detail::reduce_to_shape(Tensor::from(g.shape(), std::move(neg)), bs)};
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    Tensor r = Tensor::from(out_shape, detail::broadcast_binary(a, b, out_shape,
                                                                [](real_t x, real_t y) { return x * y; }));
    Tensor ad = a.detached(), bd = b.detached();
    return detail::wire(std::move(r), {&a, &b}, [ad, bd](const Tensor& g) {
        const Shape gs = g.shape();
        Tensor ga = Tensor::from(gs, detail::broadcast_binary(g, bd, gs, [](real_t x, real_t y) { return x * y; }));
        Tensor gb = Tensor::from(gs, detail::broadcast_binary(g, ad, gs, [](real_t x, real_t y) { return x * y; }));
        return std::vector<Tensor>{detail::reduce_to_shape(ga, ad.shape()),
                                   detail::reduce_to_shape(gb, bd.shape())};
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    for (real_t v : b.data()) {
        if (std::fabs(v) < real_t(1e-12)) throw DomainError("div by zero (|denominator| < 1e-12)");
    }
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    Tensor r = Tensor::from(out_shape, detail::broadcast_binary(a, b, out_shape,
                                                                [](real_t x, real_t y) { return x / y; }));
    detail::check_finite(r.data(), "div");
    Tensor ad = a.detached(), bd = b.detached(), rd = r.detached();
    return detail::wire(std::move(r), {&a, &b}, [ad, bd, rd](const Tensor& g) {
        const Shape gs = g.shape();
        Tensor ga = Tensor::from(gs, detail::broadcast_binary(g, bd, gs, [](real_t x, real_t y) { return x / y; }));
        // d/db (a/b) = -a/b^2 = -r/b
        Tensor tmp = Tensor::from(gs, detail::broadcast_binary(g, rd, gs, [](real_t x, real_t y) { return x * y; }));
        Tensor gb = Tensor::from(gs, detail::broadcast_binary(tmp, bd, gs, [](real_t x, real_t y) { return -x / y; }));
        return std::vector<Tensor>{detail::reduce_to_shape(ga, ad.shape()),
                                   detail::reduce_to_shape(gb, bd.shape())};
    });
}

inline Tensor pow(const Tensor& a, const Tensor& b) {
    for (real_t v : a.data()) {
        if (v <= real_t(0)) throw DomainError("pow base must be positive");
    }
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    Tensor r = Tensor::from(out_shape, detail::broadcast_binary(a, b, out_shape,
                                                                [](real_t x, real_t y) { return std::pow(x, y); }));
    detail::check_finite(r.data(), "pow");
    Tensor ad = a.detached(), bd = b.detached(), rd = r.detached();
    return detail::wire(std::move(r), {&a, &b}, [ad, bd, rd](const Tensor& g) {
        const Shape gs = g.shape();
        // da = g * b * a^(b-1) = g * b * r / a
        Tensor gb_term = Tensor::from(gs, detail::broadcast_binary(g, bd, gs, [](real_t x, real_t y) { return x * y; }));
        Tensor gr = Tensor::from(gs, detail::broadcast_binary(gb_term, rd, gs, [](real_t x, real_t y) { return x * y; }));
        Tensor ga = Tensor::from(gs, detail::broadcast_binary(gr, ad, gs, [](real_t x, real_t y) { return x / y; }));
        // db = g * r * ln(a)
        Tensor grl = Tensor::from(gs, detail::broadcast_binary(g, rd, gs, [](real_t x, real_t y) { return x * y; }));
        Tensor gbv = Tensor::from(gs, detail::broadcast_binary(grl, ad, gs,
                                                               [](real_t x, real_t y) { return x * std::log(y); }));
        return std::vector<Tensor>{detail::reduce_to_shape(ga, ad.shape()),
                                   detail::reduce_to_shape(gbv, bd.shape())};
    });
}

namespace detail {

template <typename FwdF, typename GradF>
Tensor unary_op(const Tensor& a, const char* name, FwdF&& fwd, GradF&& grad_from_in_out,
                bool validate = false) {
    std::vector<real_t> d(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = fwd(ad[i]);
    if (validate) check_finite(d, name);
    Tensor r = Tensor::from(a.shape(), std::move(d));
    Tensor in = a.detached(), out = r.detached();
    return wire(std::move(r), {&a}, [in, out, grad_from_in_out](const Tensor& g) {
        std::vector<real_t> gd(g.numel());
        const auto& gg = g.data();
        const auto& xi = in.data();
        const auto& yo = out.data();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = gg[i] * grad_from_in_out(xi[i], yo[i]);
        return std::vector<Tensor>{Tensor::from(in.shape(), std::move(gd))};
    });
}

}  // namespace detail

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(a, "exp", [](real_t x) { return std::exp(x); },
                            [](real_t, real_t y) { return y; }, /*validate=*/true);
}

inline Tensor log(const Tensor& a) {
    for (real_t v : a.data()) {
        if (v <= real_t(0)) throw DomainError("log of non-positive value");
    }
    return detail::unary_op(a, "log", [](real_t x) { return std::log(x); },
                            [](real_t x, real_t) { return real_t(1) / x; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(a, "tanh", [](real_t x) { return std::tanh(x); },
                            [](real_t, real_t y) { return real_t(1) - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(a, "sigmoid", [](real_t x) { return detail::stable_sigmoid(x); },
                            [](real_t, real_t y) { return y * (real_t(1) - y); });
}

inline Tensor sqrt(const Tensor& a) {
    for (real_t v : a.data()) {
        if (v < real_t(0)) throw DomainError("sqrt of negative value");
    }
    return detail::unary_op(a, "sqrt", [](real_t x) { return std::sqrt(x); },
                            [](real_t, real_t y) { return y > real_t(0) ? real_t(0.5) / y : real_t(0); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, "relu", [](real_t x) { return x > real_t(0) ? x : real_t(0); },
                            [](real_t x, real_t) { return x > real_t(0) ? real_t(1) : real_t(0); });
}

inline Tensor neg(const Tensor& a) {
    return detail::unary_op(a, "neg", [](real_t x) { return -x; },
                            [](real_t, real_t) { return real_t(-1); });
}

// Dispatcher matching the op-kind surface; unary kinds ignore `b`.
inline Tensor elementwise(Ew kind, const Tensor& a, const Tensor* b = nullptr) {
    if (ew_is_binary(kind) && b == nullptr) {
        throw ShapeMismatch("elementwise: binary kind requires a second operand");
    }
    switch (kind) {
        case Ew::add: return add(a, *b);
        case Ew::sub: return sub(a, *b);
        case Ew::mul: return mul(a, *b);
        case Ew::div: return div(a, *b);
        case Ew::pow: return pow(a, *b);
        case Ew::exp: return exp(a);
        case Ew::log: return log(a);
        case Ew::tanh: return tanh(a);
        case Ew::sigmoid: return sigmoid(a);
        case Ew::sqrt: return sqrt(a);
        case Ew::relu: return relu(a);
    }
    throw Error("unreachable elementwise kind");
}

inline Tensor add(const Tensor& a, real_t s) { return add(a, Tensor::scalar(s)); }
inline Tensor sub(const Tensor& a, real_t s) { return sub(a, Tensor::scalar(s)); }
inline Tensor mul(const Tensor& a, real_t s) { return mul(a, Tensor::scalar(s)); }
inline Tensor div(const Tensor& a, real_t s) { return div(a, Tensor::scalar(s)); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// matmul / softmax / reductions
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeMismatch("matmul expects rank-2 operands, got " + detail::shape_str(a.shape()) +
                            " and " + detail::shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeMismatch("matmul inner dims " + detail::shape_str(a.shape()) + " x " +
                            detail::shape_str(b.shape()));
    }
    std::vector<real_t> c(m * n);
    detail::matmul_kernel(a.data().data(), b.data().data(), c.data(), m, k, n);
    Tensor r = Tensor::from({m, n}, std::move(c));
    Tensor ad = a.detached(), bd = b.detached();
    return detail::wire(std::move(r), {&a, &b}, [ad, bd, m, k, n](const Tensor& g) {
        // dA = dC . B^T ; dB = A^T . dC
        std::vector<real_t> bt = detail::transpose_kernel(bd.data(), k, n);
        std::vector<real_t> ga(m * k);
        detail::matmul_kernel(g.data().data(), bt.data(), ga.data(), m, n, k);
        std::vector<real_t> at = detail::transpose_kernel(ad.data(), m, k);
        std::vector<real_t> gb(k * n);
        detail::matmul_kernel(at.data(), g.data().data(), gb.data(), k, m, n);
        return std::vector<Tensor>{Tensor::from({m, k}, std::move(ga)),
                                   Tensor::from({k, n}, std::move(gb))};
    });
}

// Numerically stabilized softmax along one axis; each slice along that axis
// sums to 1. Max subtraction is unconditional.
inline Tensor softmax_axis(const Tensor& x, std::size_t axis) {
    const auto sp = detail::axis_split(x.shape(), axis);
    const auto& xd = x.data();
    std::vector<real_t> out(xd.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.n * sp.inner + in;
            real_t mx = xd[base];
            for (std::size_t j = 1; j < sp.n; ++j) mx = std::max(mx, xd[base + j * sp.inner]);
            real_t sum = 0;
            for (std::size_t j = 0; j < sp.n; ++j) {
                const real_t e = std::exp(xd[base + j * sp.inner] - mx);
                out[base + j * sp.inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= sum;
        }
    }
    Tensor r = Tensor::from(x.shape(), std::move(out));
    Tensor yd = r.detached();
    return detail::wire(std::move(r), {&x}, [yd, sp](const Tensor& g) {
        // dx = y * (g - sum(g*y over axis))
        const auto& y = yd.data();
        const auto& gg = g.data();
        std::vector<real_t> gx(y.size());
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.n * sp.inner + in;
                real_t dot = 0;
                for (std::size_t j = 0; j < sp.n; ++j) {
                    const std::size_t k = base + j * sp.inner;
                    dot += gg[k] * y[k];
                }
                for (std::size_t j = 0; j < sp.n; ++j) {
                    const std::size_t k = base + j * sp.inner;
                    gx[k] = y[k] * (gg[k] - dot);
                }
            }
        }
        return std::vector<Tensor>{Tensor::from(yd.shape(), std::move(gx))};
    });
}

enum class Reduce { sum, mean, l2norm };

namespace detail {

inline Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out.push_back(s[i]);
    }
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace detail

inline Tensor reduce(Reduce kind, const Tensor& x, std::optional<std::size_t> axis = std::nullopt);

inline Tensor reduce_sum(const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(Reduce::sum, x, axis);
}
inline Tensor reduce_mean(const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(Reduce::mean, x, axis);
}
inline Tensor l2norm(const Tensor& x, std::optional<std::size_t> axis = std::nullopt) {
    return reduce(Reduce::l2norm, x, axis);
}

inline Tensor reduce(Reduce kind, const Tensor& x, std::optional<std::size_t> axis) {
    if (!x.defined() || x.numel() == 0) throw EmptyReduction("reduce of an empty tensor");

    if (!axis.has_value()) {
        const auto& xd = x.data();
        real_t acc = 0;
        if (kind == Reduce::l2norm) {
            for (real_t v : xd) acc += v * v;
            acc = std::sqrt(acc);
        } else {
            for (real_t v : xd) acc += v;
            if (kind == Reduce::mean) acc /= static_cast<real_t>(xd.size());
        }
        Tensor r = Tensor::scalar(acc);
        Tensor in = x.detached();
        const real_t count = static_cast<real_t>(x.numel());
        const real_t norm_val = acc;
        return detail::wire(std::move(r), {&x}, [in, kind, count, norm_val](const Tensor& g) {
            const real_t gv = g.item();
            std::vector<real_t> gd(in.numel());
            const auto& xi = in.data();
            for (std::size_t i = 0; i < gd.size(); ++i) {
                switch (kind) {
                    case Reduce::sum: gd[i] = gv; break;
                    case Reduce::mean: gd[i] = gv / count; break;
                    case Reduce::l2norm:
                        gd[i] = norm_val > real_t(1e-30) ? gv * xi[i] / norm_val : real_t(0);
                        break;
                }
            }
            return std::vector<Tensor>{Tensor::from(in.shape(), std::move(gd))};
        });
    }

    const auto sp = detail::axis_split(x.shape(), *axis);
    const Shape out_shape = detail::drop_axis(x.shape(), *axis);
    const auto& xd = x.data();
    std::vector<real_t> out(sp.outer * sp.inner, real_t(0));
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < sp.n; ++j) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const real_t v = xd[o * sp.n * sp.inner + j * sp.inner + in];
                out[o * sp.inner + in] += (kind == Reduce::l2norm) ? v * v : v;
            }
        }
    }
    if (kind == Reduce::mean) {
        for (real_t& v : out) v /= static_cast<real_t>(sp.n);
    }
    if (kind == Reduce::l2norm) {
        for (real_t& v : out) v = std::sqrt(v);
    }
    Tensor r = Tensor::from(out_shape, std::move(out));
    Tensor in = x.detached(), od = r.detached();
    return detail::wire(std::move(r), {&x}, [in, od, kind, sp](const Tensor& g) {
        const auto& gg = g.data();
        const auto& xi = in.data();
        const auto& yo = od.data();
        std::vector<real_t> gd(in.numel());
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t j = 0; j < sp.n; ++j) {
                for (std::size_t k = 0; k < sp.inner; ++k) {
                    const std::size_t xi_idx = o * sp.n * sp.inner + j * sp.inner + k;
                    const std::size_t oi = o * sp.inner + k;
                    switch (kind) {
                        case Reduce::sum: gd[xi_idx] = gg[oi]; break;
                        case Reduce::mean: gd[xi_idx] = gg[oi] / static_cast<real_t>(sp.n); break;
                        case Reduce::l2norm:
                            gd[xi_idx] = yo[oi] > real_t(1e-30) ? gg[oi] * xi[xi_idx] / yo[oi]
                                                                : real_t(0);
                            break;
                    }
                }
            }
        }
        return std::vector<Tensor>{Tensor::from(in.shape(), std::move(gd))};
    });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (detail::numel_of(shape) != x.numel()) {
        throw ShapeMismatch("reshape " + detail::shape_str(x.shape()) + " -> " +
                            detail::shape_str(shape));
    }
    Tensor r = Tensor::from(shape, x.data());
    const Shape orig = x.shape();
    return detail::wire(std::move(r), {&x}, [orig](const Tensor& g) {
        return std::vector<Tensor>{Tensor::from(orig, g.data())};
    });
}

inline Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeMismatch("transpose expects rank 2");
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    Tensor r = Tensor::from({n, m}, detail::transpose_kernel(x.data(), m, n));
    return detail::wire(std::move(r), {&x}, [m, n](const Tensor& g) {
        return std::vector<Tensor>{Tensor::from({m, n}, detail::transpose_kernel(g.data(), n, m))};
    });
}

// Contiguous row range [r0, r1) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    if (x.rank() != 2) throw ShapeMismatch("slice_rows expects rank 2");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (r0 >= r1 || r1 > rows) {
        throw ShapeMismatch("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                            ") of " + std::to_string(rows) + " rows");
    }
    std::vector<real_t> d(x.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols),
                          x.data().begin() + static_cast<std::ptrdiff_t>(r1 * cols));
    Tensor r = Tensor::from({r1 - r0, cols}, std::move(d));
    return detail::wire(std::move(r), {&x}, [rows, cols, r0, r1](const Tensor& g) {
        std::vector<real_t> gd(rows * cols, real_t(0));
        std::copy(g.data().begin(), g.data().end(), gd.begin() + static_cast<std::ptrdiff_t>(r0 * cols));
        (void)r1;
        return std::vector<Tensor>{Tensor::from({rows, cols}, std::move(gd))};
    });
}

// Stacks rank-2 tensors with equal column counts along rows.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
    const std::size_t cols = parts[0].shape()[1];
    std::size_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.shape()[1] != cols) {
            throw ShapeMismatch("concat_rows column mismatch");
        }
        rows += p.shape()[0];
    }
    std::vector<real_t> d;
    d.reserve(rows * cols);
    for (const Tensor& p : parts) d.insert(d.end(), p.data().begin(), p.data().end());
    Tensor r = Tensor::from({rows, cols}, std::move(d));

    std::vector<const Tensor*> in_ptrs;
    std::vector<std::size_t> row_counts;
    for (const Tensor& p : parts) {
        in_ptrs.push_back(&p);
        row_counts.push_back(p.shape()[0]);
    }
    return detail::wire(std::move(r), in_ptrs, [row_counts, cols](const Tensor& g) {
        std::vector<Tensor> gs;
        std::size_t offset = 0;
        for (std::size_t rc : row_counts) {
            std::vector<real_t> gd(g.data().begin() + static_cast<std::ptrdiff_t>(offset * cols),
                                   g.data().begin() + static_cast<std::ptrdiff_t>((offset + rc) * cols));
            gs.push_back(Tensor::from({rc, cols}, std::move(gd)));
            offset += rc;
        }
        return gs;
    });
}

// Contiguous column range [c0, c1) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    if (x.rank() != 2) throw ShapeMismatch("slice_cols expects rank 2");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (c0 >= c1 || c1 > cols) {
        throw ShapeMismatch("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                            ") of " + std::to_string(cols) + " cols");
    }
    const std::size_t w = c1 - c0;
    std::vector<real_t> d(rows * w);
    const auto& xd = x.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) d[r * w + c] = xd[r * cols + c0 + c];
    Tensor r = Tensor::from({rows, w}, std::move(d));
    return detail::wire(std::move(r), {&x}, [rows, cols, c0, w](const Tensor& g) {
        std::vector<real_t> gd(rows * cols, real_t(0));
        for (std::size_t r2 = 0; r2 < rows; ++r2)
            for (std::size_t c = 0; c < w; ++c) gd[r2 * cols + c0 + c] = g.at(r2 * w + c);
        return std::vector<Tensor>{Tensor::from({rows, cols}, std::move(gd))};
    });
}

// Stacks rank-2 tensors with equal row counts along columns.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
    const std::size_t rows = parts[0].shape()[0];
    std::size_t cols = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.shape()[0] != rows) throw ShapeMismatch("concat_cols row mismatch");
        cols += p.shape()[1];
    }
    std::vector<real_t> d(rows * cols);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.shape()[1];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) d[r * cols + offset + c] = p.at(r * w + c);
        offset += w;
    }
    Tensor r = Tensor::from({rows, cols}, std::move(d));
    std::vector<const Tensor*> in_ptrs;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        in_ptrs.push_back(&p);
        widths.push_back(p.shape()[1]);
    }
    return detail::wire(std::move(r), in_ptrs, [rows, cols, widths](const Tensor& g) {
        std::vector<Tensor> gs;
        std::size_t offset = 0;
        for (std::size_t w : widths) {
            std::vector<real_t> gd(rows * w);
            for (std::size_t r2 = 0; r2 < rows; ++r2)
                for (std::size_t c = 0; c < w; ++c) gd[r2 * w + c] = g.at(r2 * cols + offset + c);
            gs.push_back(Tensor::from({rows, w}, std::move(gd)));
            offset += w;
        }
        return gs;
    });
}

// Column gather from a rank-2 tensor: out[:, j] = x[:, idx[j]]. Backward
// scatter-adds, so repeated indices accumulate.
inline Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& idx) {
    if (x.rank() != 2) throw ShapeMismatch("gather_cols expects rank 2");
    const std::size_t C = x.shape()[0], P = x.shape()[1], R = idx.size();
    for (std::size_t j : idx) {
        if (j >= P) throw ShapeMismatch("gather_cols index out of range");
    }
    std::vector<real_t> d(C * R);
    const auto& xd = x.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < R; ++j) d[c * R + j] = xd[c * P + idx[j]];
    Tensor r = Tensor::from({C, R}, std::move(d));
    return detail::wire(std::move(r), {&x}, [C, P, R, idx](const Tensor& g) {
        std::vector<real_t> gd(C * P, real_t(0));
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < R; ++j) gd[c * P + idx[j]] += g.at(c * R + j);
        return std::vector<Tensor>{Tensor::from({C, P}, std::move(gd))};
    });
}

// Smooth minimum of same-shaped tensors via stabilized log-sum-exp of the
// negated inputs: smin = -(1/beta) ln sum exp(-beta x_i). Exact min as
// beta -> inf, smooth everywhere for finite beta.
inline Tensor softmin(const std::vector<Tensor>& xs, real_t beta) {
    if (xs.empty()) throw EmptyReduction("softmin of nothing");
    const Shape shape = xs[0].shape();
    for (const Tensor& t : xs) {
        if (t.shape() != shape) throw ShapeMismatch("softmin operands must share a shape");
    }
    const std::size_t n = detail::numel_of(shape);
    const std::size_t k = xs.size();
    std::vector<real_t> out(n);
    std::vector<real_t> weights(n * k);  // softmax weights, saved for backward
    for (std::size_t i = 0; i < n; ++i) {
        real_t m = xs[0].at(i);
        for (std::size_t j = 1; j < k; ++j) m = std::min(m, xs[j].at(i));
        real_t s = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const real_t e = std::exp(-beta * (xs[j].at(i) - m));
            weights[j * n + i] = e;
            s += e;
        }
        for (std::size_t j = 0; j < k; ++j) weights[j * n + i] /= s;
        out[i] = m - std::log(s) / beta;
    }
    Tensor r = Tensor::from(shape, std::move(out));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : xs) ptrs.push_back(&t);
    auto wshared = std::make_shared<std::vector<real_t>>(std::move(weights));
    return detail::wire(std::move(r), ptrs, [wshared, shape, n, k](const Tensor& g) {
        std::vector<Tensor> gs;
        gs.reserve(k);
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<real_t> gd(n);
            for (std::size_t i = 0; i < n; ++i) gd[i] = g.at(i) * (*wshared)[j * n + i];
            gs.push_back(Tensor::from(shape, std::move(gd)));
        }
        return gs;
    });
}

namespace detail {

// Separable binomial blur pass ([1,2,1]/4) along one spatial axis of a
// [C,H,W] tensor with replicated borders. The kernel is symmetric but the
// border handling is not, so the adjoint scatters explicitly.
inline std::vector<real_t> blur_pass(const std::vector<real_t>& in, std::size_t C, std::size_t H,
                                     std::size_t W, bool horizontal) {
    std::vector<real_t> out(in.size());
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const auto pick = [&](std::ptrdiff_t dy, std::ptrdiff_t dx) {
                    std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                    std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                    yy = std::clamp<std::ptrdiff_t>(yy, 0, static_cast<std::ptrdiff_t>(H) - 1);
                    xx = std::clamp<std::ptrdiff_t>(xx, 0, static_cast<std::ptrdiff_t>(W) - 1);
                    return in[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)];
                };
                real_t v;
                if (horizontal) {
                    v = real_t(0.25) * pick(0, -1) + real_t(0.5) * pick(0, 0) + real_t(0.25) * pick(0, 1);
                } else {
                    v = real_t(0.25) * pick(-1, 0) + real_t(0.5) * pick(0, 0) + real_t(0.25) * pick(1, 0);
                }
                out[(c * H + y) * W + x] = v;
            }
        }
    }
    return out;
}

inline std::vector<real_t> blur_pass_adjoint(const std::vector<real_t>& g, std::size_t C,
                                             std::size_t H, std::size_t W, bool horizontal) {
    std::vector<real_t> out(g.size(), real_t(0));
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const real_t gv = g[(c * H + y) * W + x];
                const auto scatter = [&](std::ptrdiff_t dy, std::ptrdiff_t dx, real_t w) {
                    std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                    std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                    yy = std::clamp<std::ptrdiff_t>(yy, 0, static_cast<std::ptrdiff_t>(H) - 1);
                    xx = std::clamp<std::ptrdiff_t>(xx, 0, static_cast<std::ptrdiff_t>(W) - 1);
                    out[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)] += w * gv;
                };
                if (horizontal) {
                    scatter(0, -1, real_t(0.25));
                    scatter(0, 0, real_t(0.5));
                    scatter(0, 1, real_t(0.25));
                } else {
                    scatter(-1, 0, real_t(0.25));
                    scatter(0, 0, real_t(0.5));
                    scatter(1, 0, real_t(0.25));
                }
            }
        }
    }
    return out;
}

}  // namespace detail

// 3x3 binomial smoothing of a [C,H,W] tensor with replicated borders.
// Linear, range-preserving (convex weights), and exactly constant-preserving.
inline Tensor blur3x3(const Tensor& x) {
    if (x.rank() != 3) throw ShapeMismatch("blur3x3 expects [C,H,W]");
    const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    std::vector<real_t> d = detail::blur_pass(x.data(), C, H, W, /*horizontal=*/true);
    d = detail::blur_pass(d, C, H, W, /*horizontal=*/false);
    Tensor r = Tensor::from(x.shape(), std::move(d));
    return detail::wire(std::move(r), {&x}, [C, H, W](const Tensor& g) {
        std::vector<real_t> gd = detail::blur_pass_adjoint(g.data(), C, H, W, /*horizontal=*/false);
        gd = detail::blur_pass_adjoint(gd, C, H, W, /*horizontal=*/true);
        return std::vector<Tensor>{Tensor::from({C, H, W}, std::move(gd))};
    });
}

}  // namespace tailor
