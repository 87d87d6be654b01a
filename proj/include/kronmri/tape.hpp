#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>

#include "kronmri/kernels.hpp"

namespace kronmri {

template <Scalar T>
class Tape;

/// Handle to a value recorded on a Tape.
template <Scalar T>
class Var {
   public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<T>& value() const { return tape().value(id_); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape().requires_grad(id_); }
    Tape<T>& tape() const {
        if (!tape_) throw ContractError("use of an unbound Var");
        return *tape_;
    }
    std::size_t id() const noexcept { return id_; }

   private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Single-use reverse-mode recording. Nodes are appended in evaluation order;
/// backward() walks them in exact reverse and may be called once.
template <Scalar T>
class Tape {
   public:
    /// Receives the upstream gradient and pushes input gradients via accumulate().
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad, "leaf"});
        return Var<T>(this, nodes_.size() - 1);
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    /// Binds a parameter tensor by address; repeated binds return the same leaf.
    Var<T> param(const Tensor<T>& p, bool trainable = true) {
        if (auto it = params_.find(&p); it != params_.end()) return Var<T>(this, it->second);
        Var<T> v = leaf(p, trainable);
        params_.emplace(&p, v.id());
        return v;
    }

    Var<T> record(const char* op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
        if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
        bool rg = false;
        for (std::size_t i : inputs) rg = rg || nodes_.at(i).requires_grad;
        nodes_.push_back(Node{std::move(value), std::move(inputs), rg ? std::move(fn) : nullptr, rg, op});
        return Var<T>(this, nodes_.size() - 1);
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    void accumulate(std::size_t id, const Tensor<T>& g) {
        Node& node = nodes_.at(id);
        if (!node.requires_grad) return;
        if (g.shape() != node.value.shape())
            throw ShapeError(std::string("gradient shape mismatch at ") + node.op + ": " + shape_str(g.shape()) +
                             " vs " + shape_str(node.value.shape()));
        if (!grads_[id]) {
            grads_[id] = g;
        } else {
            kernels::add_inplace(*grads_[id], g);
        }
    }

    void backward(Var<T> loss) {
        if (&loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
        if (consumed_) throw ContractError("backward called twice on the same tape");
        if (loss.value().numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        consumed_ = true;
        grads_.assign(nodes_.size(), std::nullopt);
        if (!nodes_[loss.id()].requires_grad) return;
        grads_[loss.id()] = Tensor<T>(loss.shape(), T(1));
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& node = nodes_[id];
            if (!node.backward || !grads_[id]) continue;
            visit_order_.push_back(id);
            node.backward(*this, *grads_[id]);
            if (!grads_[id]->all_finite())
                throw NumericError(std::string("non-finite gradient at ") + node.op);
        }
    }

    /// Gradient of the loss w.r.t. v; zeros when v was not reached.
    Tensor<T> grad(Var<T> v) const {
        if (!consumed_) throw ContractError("grad requested before backward");
        const auto& g = grads_.at(v.id());
        return g ? *g : Tensor<T>(v.shape());
    }

    std::optional<Tensor<T>> grad_of(const Tensor<T>& param) const {
        auto it = params_.find(&param);
        if (it == params_.end()) return std::nullopt;
        return grad(Var<T>(const_cast<Tape*>(this), it->second));
    }

    bool consumed() const noexcept { return consumed_; }
    const std::vector<std::size_t>& visit_order() const noexcept { return visit_order_; }

   private:
    struct Node {
        Tensor<T> value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad;
        const char* op;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Tensor<T>*, std::size_t> params_;
    std::vector<std::optional<Tensor<T>>> grads_;
    std::vector<std::size_t> visit_order_;
    bool consumed_ = false;
};

namespace detail {

template <Scalar T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
    return a.tape();
}

enum class Broadcast { same, left_scalar, right_scalar };

template <Scalar T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (a.rank() == 0) return Broadcast::left_scalar;
    if (b.rank() == 0) return Broadcast::right_scalar;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

template <Scalar T>
Tensor<T> sum_all(const Tensor<T>& g) {
    T s = T(0);
    for (T v : g.data()) s += v;
    return Tensor<T>::scalar(s);
}

// Binary elementwise op with scalar-with-tensor broadcasting. `df` returns
// (d/da, d/db) at one element.
template <Scalar T, class F, class DF>
Var<T> binary(const char* op, Var<T> a, Var<T> b, F f, DF df) {
    Tape<T>& tape = same_tape(a, b);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const Broadcast kind = broadcast_kind(av, bv, op);
    const Shape shape = kind == Broadcast::left_scalar ? bv.shape() : av.shape();
    Tensor<T> out(shape);
    auto ai = [&](std::size_t i) { return kind == Broadcast::left_scalar ? av[0] : av[i]; };
    auto bi = [&](std::size_t i) { return kind == Broadcast::right_scalar ? bv[0] : bv[i]; };
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(ai(i), bi(i));
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(op, std::move(out), {ia, ib}, [ia, ib, kind, df](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(ia);
        const Tensor<T>& bv = t.value(ib);
        Tensor<T> ga(g.shape()), gb(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const T x = kind == Broadcast::left_scalar ? av[0] : av[i];
            const T y = kind == Broadcast::right_scalar ? bv[0] : bv[i];
            const auto [dx, dy] = df(x, y);
            ga[i] = g[i] * dx;
            gb[i] = g[i] * dy;
        }
        t.accumulate(ia, kind == Broadcast::left_scalar ? sum_all(ga) : ga);
        t.accumulate(ib, kind == Broadcast::right_scalar ? sum_all(gb) : gb);
    });
}

template <Scalar T, class F, class DF>
Var<T> unary(const char* op, Var<T> a, F f, DF df) {
    Tensor<T> out = kernels::map(a.value(), f);
    const std::size_t ia = a.id();
    return a.tape().record(op, std::move(out), {ia}, [ia, df](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(ia);
        Tensor<T> ga(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * df(av[i]);
        t.accumulate(ia, ga);
    });
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <Scalar T>
Var<T> add(Var<T> a, Var<T> b) {
    return detail::binary(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return std::pair{T(1), T(1)}; });
}

template <Scalar T>
Var<T> sub(Var<T> a, Var<T> b) {
    return detail::binary(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return std::pair{T(1), T(-1)}; });
}

template <Scalar T>
Var<T> mul(Var<T> a, Var<T> b) {
    return detail::binary(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y) { return std::pair{y, x}; });
}

template <Scalar T>
Var<T> scale(Var<T> a, T s) {
    return detail::unary(
        "scale", a, [s](T x) { return s * x; }, [s](T) { return s; });
}

template <Scalar T>
Var<T> add_scalar(Var<T> a, T s) {
    return detail::unary(
        "add_scalar", a, [s](T x) { return x + s; }, [](T) { return T(1); });
}

/// Subgradient 0 at the kink.
template <Scalar T>
Var<T> relu(Var<T> a) {
    return detail::unary(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <Scalar T>
Var<T> abs(Var<T> a) {
    return detail::unary(
        "abs", a, [](T x) { return std::abs(x); },
        [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <Scalar T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <Scalar T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <Scalar T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <Scalar T>
Var<T> operator*(T s, Var<T> a) { return scale(a, s); }

// ---- reductions ------------------------------------------------------------

/// Sum over `axes`; empty axes reduces everything to a rank-0 scalar.
template <Scalar T>
Var<T> sum(Var<T> x, std::vector<std::size_t> axes = {}) {
    const Shape in_shape = x.shape();
    if (axes.empty())
        for (std::size_t i = 0; i < in_shape.size(); ++i) axes.push_back(i);
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    Tensor<T> out = kernels::sum_axes(x.value(), axes);
    const std::size_t ix = x.id();
    return x.tape().record("sum", std::move(out), {ix}, [ix, in_shape, axes](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(ix, kernels::broadcast_back(g, in_shape, axes));
    });
}

template <Scalar T>
Var<T> mean(Var<T> x, std::vector<std::size_t> axes = {}) {
    const Shape in_shape = x.shape();
    if (axes.empty())
        for (std::size_t i = 0; i < in_shape.size(); ++i) axes.push_back(i);
    std::size_t count = 1;
    for (std::size_t a : axes) {
        if (a >= in_shape.size()) throw ShapeError("mean: axis out of range for " + shape_str(in_shape));
    }
    std::vector<std::size_t> uniq = axes;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (std::size_t a : uniq) count *= in_shape[a];
    return scale(sum(x, uniq), T(1) / static_cast<T>(count));
}

// ---- linear algebra --------------------------------------------------------

template <Scalar T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& tape = detail::same_tape(a, b);
    Tensor<T> out = kernels::matmul(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul(g, t.value(ib), false, true));
        if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul(t.value(ia), g, true, false));
    });
}

template <Scalar T>
Var<T> transpose(Var<T> a) {
    const std::size_t ia = a.id();
    return a.tape().record("transpose", kernels::transpose(a.value()), {ia},
                           [ia](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ia, kernels::transpose(g)); });
}

/// y = x * w^T + bias, with x [batch x in], w [out x in], bias [out].
template <Scalar T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    Tape<T>& tape = detail::same_tape(x, w);
    detail::same_tape(x, bias);
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    const Tensor<T>& bv = bias.value();
    kernels::require_rank(xv.shape(), 2, "linear input");
    kernels::require_rank(wv.shape(), 2, "linear weight");
    if (xv.dim(1) != wv.dim(1))
        throw ShapeError("linear: input width " + std::to_string(xv.dim(1)) + " does not match weight " +
                         shape_str(wv.shape()));
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
        throw ShapeError("linear: bias must have shape [" + std::to_string(wv.dim(0)) + "]");
    const std::size_t rows = xv.dim(0), out_dim = wv.dim(0);
    Tensor<T> y({rows, out_dim});
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(bv.ptr(), bv.ptr() + out_dim, y.ptr() + r * out_dim);
    kernels::gemm(false, true, rows, out_dim, xv.dim(1), xv.ptr(), wv.ptr(), y.ptr(), true);
    const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
    return tape.record("linear", std::move(y), {ix, iw, ib}, [ix, iw, ib](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(ix)) t.accumulate(ix, kernels::matmul(g, t.value(iw)));
        if (t.requires_grad(iw)) t.accumulate(iw, kernels::matmul(g, t.value(ix), true, false));
        if (t.requires_grad(ib)) t.accumulate(ib, kernels::sum_axes(g, {0}));
    });
}

template <Scalar T>
Var<T> kron(Var<T> a, Var<T> b) {
    Tape<T>& tape = detail::same_tape(a, b);
    Tensor<T> out = kernels::kron(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record("kron", std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(ia);
        const Tensor<T>& bv = t.value(ib);
        const std::size_t p = av.dim(0), q = av.dim(1), r = bv.dim(0), s = bv.dim(1), cols = q * s;
        Tensor<T> ga(av.shape()), gb(bv.shape());
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) {
                T acc = T(0);
                for (std::size_t u = 0; u < r; ++u)
                    for (std::size_t v = 0; v < s; ++v) {
                        const T gij = g[(i * r + u) * cols + j * s + v];
                        acc += gij * bv[u * s + v];
                        gb[u * s + v] += gij * av[i * q + j];
                    }
                ga[i * q + j] = acc;
            }
        t.accumulate(ia, ga);
        t.accumulate(ib, gb);
    });
}

template <Scalar T>
Var<T> kron4(Var<T> a, Var<T> f) {
    Tape<T>& tape = detail::same_tape(a, f);
    Tensor<T> out = kernels::kron4(a.value(), f.value());
    const std::size_t ia = a.id(), jf = f.id();
    return tape.record("kron4", std::move(out), {ia, jf}, [ia, jf](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av = t.value(ia);
        const Tensor<T>& fv = t.value(jf);
        const std::size_t rows = av.dim(0), cols = av.dim(1), o = fv.dim(0), in = fv.dim(1), taps = fv.dim(2) * fv.dim(3);
        Tensor<T> ga(av.shape()), gf(fv.shape());
        for (std::size_t u = 0; u < rows; ++u)
            for (std::size_t v = 0; v < cols; ++v) {
                const T auv = av[u * cols + v];
                T acc = T(0);
                for (std::size_t p = 0; p < o; ++p)
                    for (std::size_t q = 0; q < in; ++q) {
                        const T* gsrc = g.ptr() + ((u * o + p) * cols * in + (v * in + q)) * taps;
                        const T* fsrc = fv.ptr() + (p * in + q) * taps;
                        T* gdst = gf.ptr() + (p * in + q) * taps;
                        for (std::size_t k = 0; k < taps; ++k) {
                            acc += gsrc[k] * fsrc[k];
                            gdst[k] += gsrc[k] * auv;
                        }
                    }
                ga[u * cols + v] = acc;
            }
        t.accumulate(ia, ga);
        t.accumulate(jf, gf);
    });
}

template <Scalar T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t padding) {
    Tape<T>& tape = detail::same_tape(x, w);
    detail::same_tape(x, bias);
    Tensor<T> out = kernels::conv2d(x.value(), w.value(), &bias.value(), stride, padding);
    const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
    return tape.record("conv2d", std::move(out), {ix, iw, ib},
                       [ix, iw, ib, stride, padding](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& xv = t.value(ix);
                           const Tensor<T>& wv = t.value(iw);
                           if (t.requires_grad(ix))
                               t.accumulate(ix, kernels::conv2d_grad_input(g, wv, xv.shape(), stride, padding));
                           if (t.requires_grad(iw))
                               t.accumulate(iw, kernels::conv2d_grad_weight(g, xv, wv.shape(), stride, padding));
                           if (t.requires_grad(ib)) t.accumulate(ib, kernels::sum_axes(g, {0, 2, 3}));
                       });
}

// ---- shape manipulation ----------------------------------------------------

template <Scalar T>
Var<T> reshape(Var<T> x, Shape shape) {
    const Shape in_shape = x.shape();
    const std::size_t ix = x.id();
    return x.tape().record("reshape", x.value().reshaped(std::move(shape)), {ix},
                           [ix, in_shape](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ix, g.reshaped(in_shape)); });
}

template <Scalar T>
Var<T> permute(Var<T> x, std::vector<std::size_t> perm) {
    Tensor<T> out = kernels::permute(x.value(), perm);
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    const std::size_t ix = x.id();
    return x.tape().record("permute", std::move(out), {ix}, [ix, inverse](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(ix, kernels::permute(g, inverse));
    });
}

/// Concatenation along `axis`; all other dimensions must agree.
template <Scalar T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Tape<T>& tape = parts.front().tape();
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> ids, widths;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p);
        const Shape& s = p.shape();
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && (s.size() != first.size() || s[i] != first[i]))
                throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
        out_shape[axis] += s[axis];
        ids.push_back(p.id());
        widths.push_back(s[axis]);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    Tensor<T> out(out_shape);
    const std::size_t out_row = out_shape[axis] * inner;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor<T>& v = parts[k].value();
        const std::size_t row = widths[k] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(v.ptr() + o * row, v.ptr() + (o + 1) * row, out.ptr() + o * out_row + offset);
        offset += row;
    }
    return tape.record("concat", std::move(out), ids,
                       [ids, widths, outer, inner, out_row](Tape<T>& t, const Tensor<T>& g) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < ids.size(); ++k) {
                               const std::size_t row = widths[k] * inner;
                               Tensor<T> gk(t.value(ids[k]).shape());
                               for (std::size_t o = 0; o < outer; ++o)
                                   std::copy(g.ptr() + o * out_row + offset, g.ptr() + o * out_row + offset + row,
                                             gk.ptr() + o * row);
                               t.accumulate(ids[k], gk);
                               offset += row;
                           }
                       });
}

/// Nearest-neighbour x2 upsampling of the last two axes of a rank-4 tensor.
template <Scalar T>
Var<T> upsample2x(Var<T> x) {
    const Tensor<T>& xv = x.value();
    kernels::require_rank(xv.shape(), 4, "upsample2x");
    const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor<T> out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j)
                out[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
    const std::size_t ix = x.id();
    return x.tape().record("upsample2x", std::move(out), {ix}, [ix, planes, h, w](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> gx(t.value(ix).shape());
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < 2 * h; ++i)
                for (std::size_t j = 0; j < 2 * w; ++j)
                    gx[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
        t.accumulate(ix, gx);
    });
}

// ---- attention helpers -----------------------------------------------------

/// Batched product over the leading axis: a [G x m x k] times b [G x k x n]
/// (or b [G x n x k] when trans_b).
template <Scalar T>
Var<T> bmm(Var<T> a, Var<T> b, bool trans_b = false) {
    Tape<T>& tape = detail::same_tape(a, b);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    kernels::require_rank(av.shape(), 3, "bmm");
    kernels::require_rank(bv.shape(), 3, "bmm");
    const std::size_t groups = av.dim(0), m = av.dim(1), k = av.dim(2);
    const std::size_t kb = trans_b ? bv.dim(2) : bv.dim(1), n = trans_b ? bv.dim(1) : bv.dim(2);
    if (bv.dim(0) != groups || kb != k)
        throw ShapeError("bmm shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    Tensor<T> out({groups, m, n});
    for (std::size_t gi = 0; gi < groups; ++gi)
        kernels::gemm(false, trans_b, m, n, k, av.ptr() + gi * m * k, bv.ptr() + gi * k * n, out.ptr() + gi * m * n);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record("bmm", std::move(out), {ia, ib},
                       [ia, ib, trans_b, groups, m, n, k](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& av = t.value(ia);
                           const Tensor<T>& bv = t.value(ib);
                           Tensor<T> ga(av.shape()), gb(bv.shape());
                           for (std::size_t gi = 0; gi < groups; ++gi) {
                               const T* gp = g.ptr() + gi * m * n;
                               const T* ap = av.ptr() + gi * m * k;
                               const T* bp = bv.ptr() + gi * k * n;
                               // dA = G * op(B)^T
                               kernels::gemm(false, !trans_b, m, k, n, gp, bp, ga.ptr() + gi * m * k);
                               if (!trans_b) {
                                   kernels::gemm(true, false, k, n, m, ap, gp, gb.ptr() + gi * k * n);  // A^T G
                               } else {
                                   kernels::gemm(true, false, n, k, m, gp, ap, gb.ptr() + gi * k * n);  // G^T A
                               }
                           }
                           t.accumulate(ia, ga);
                           t.accumulate(ib, gb);
                       });
}

/// Softmax over the last axis.
template <Scalar T>
Var<T> softmax(Var<T> x) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() == 0) throw ShapeError("softmax of a scalar");
    const std::size_t cols = xv.shape().back(), rows = xv.numel() / cols;
    Tensor<T> out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.ptr() + r * cols;
        T* o = out.ptr() + r * cols;
        const T mx = *std::max_element(in, in + cols);
        T total = T(0);
        for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
    }
    Tensor<T> saved = out;
    const std::size_t ix = x.id();
    return x.tape().record("softmax", std::move(out), {ix},
                           [ix, rows, cols, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
                               Tensor<T> gx(saved.shape());
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const T* y = saved.ptr() + r * cols;
                                   const T* gy = g.ptr() + r * cols;
                                   T dot = T(0);
                                   for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
                                   for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = y[c] * (gy[c] - dot);
                               }
                               t.accumulate(ix, gx);
                           });
}

}  // namespace kronmri
