#pragma once

#include <cmath>
#include <string>
#include <variant>

#include "kronmri/tape.hpp"

// Kronecker-parameterized linear and convolution layers. The full weight is
// W = sum_i kron(A[i], S[i]) (or kron4(A[i], F[i]) for kernels), assembled on
// every forward pass and then applied as an ordinary dense layer.

namespace kronmri {

enum class LayerKind { dense, kronecker };

inline LayerKind parse_layer_kind(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "kron" || s == "kronecker") return LayerKind::kronecker;
    throw ConfigError("unknown layer kind '" + s + "' (expected dense or kron)");
}

inline const char* to_string(LayerKind k) { return k == LayerKind::dense ? "dense" : "kronecker"; }

template <Scalar T>
struct NamedParam {
    std::string name;
    Tensor<T>* tensor;
    bool trainable;
};

template <Scalar T>
struct KroneckerLinear {
    std::size_t n = 1, in = 0, out = 0;
    std::vector<Tensor<T>> mixing;   // n matrices [n x n]
    std::vector<Tensor<T>> filters;  // n matrices [out/n x in/n]
    Tensor<T> bias;                  // [out]
    bool freeze_mixing = false;
};

template <Scalar T>
struct DenseLinear {
    std::size_t in = 0, out = 0;
    Tensor<T> weight;  // [out x in]
    Tensor<T> bias;    // [out]
};

template <Scalar T>
struct KroneckerConv {
    std::size_t n = 1, in = 0, out = 0, kernel = 1, stride = 1, padding = 0;
    std::vector<Tensor<T>> mixing;   // n matrices [n x n]
    std::vector<Tensor<T>> filters;  // n kernels [out/n x in/n x k x k]
    Tensor<T> bias;                  // [out]
    bool freeze_mixing = false;
};

template <Scalar T>
struct DenseConv {
    std::size_t in = 0, out = 0, kernel = 1, stride = 1, padding = 0;
    Tensor<T> weight;  // [out x in x k x k]
    Tensor<T> bias;    // [out]
};

// ---- validation ------------------------------------------------------------

inline void check_divisible(std::size_t n, std::size_t in, std::size_t out, const char* what) {
    if (n == 0) throw ConfigError(std::string(what) + ": hypercomplex dimension n must be positive");
    if (in == 0 || out == 0) throw ConfigError(std::string(what) + ": channel counts must be positive");
    if (in % n != 0 || out % n != 0)
        throw ConfigError(std::string(what) + ": in=" + std::to_string(in) + " and out=" + std::to_string(out) +
                          " must both be divisible by n=" + std::to_string(n));
}

template <Scalar T>
void validate(const KroneckerLinear<T>& p) {
    check_divisible(p.n, p.in, p.out, "KroneckerLinear");
    if (p.mixing.size() != p.n || p.filters.size() != p.n)
        throw ConfigError("KroneckerLinear: expected " + std::to_string(p.n) + " mixing matrices and filters");
    for (std::size_t i = 0; i < p.n; ++i) {
        if (p.mixing[i].shape() != Shape{p.n, p.n})
            throw ShapeError("KroneckerLinear: A_" + std::to_string(i) + " has shape " + shape_str(p.mixing[i].shape()));
        if (p.filters[i].shape() != Shape{p.out / p.n, p.in / p.n})
            throw ShapeError("KroneckerLinear: S_" + std::to_string(i) + " has shape " +
                             shape_str(p.filters[i].shape()));
    }
    if (p.bias.shape() != Shape{p.out}) throw ShapeError("KroneckerLinear: bias has shape " + shape_str(p.bias.shape()));
}

template <Scalar T>
void validate(const KroneckerConv<T>& p) {
    check_divisible(p.n, p.in, p.out, "KroneckerConv2d");
    if (p.stride == 0 || p.kernel == 0) throw ConfigError("KroneckerConv2d: stride and kernel must be positive");
    if (p.mixing.size() != p.n || p.filters.size() != p.n)
        throw ConfigError("KroneckerConv2d: expected " + std::to_string(p.n) + " mixing matrices and filters");
    for (std::size_t i = 0; i < p.n; ++i) {
        if (p.mixing[i].shape() != Shape{p.n, p.n})
            throw ShapeError("KroneckerConv2d: A_" + std::to_string(i) + " has shape " + shape_str(p.mixing[i].shape()));
        if (p.filters[i].shape() != Shape{p.out / p.n, p.in / p.n, p.kernel, p.kernel})
            throw ShapeError("KroneckerConv2d: F_" + std::to_string(i) + " has shape " +
                             shape_str(p.filters[i].shape()));
    }
    if (p.bias.shape() != Shape{p.out}) throw ShapeError("KroneckerConv2d: bias has shape " + shape_str(p.bias.shape()));
}

// ---- initialization --------------------------------------------------------
//
// Mixing entries ~ U(-sqrt(3/n), sqrt(3/n)), i.e. variance 1/n, and filter
// entries ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)) with fan_in = in (linear) or
// in*k*k (conv). A materialized weight entry is a sum of n products, so its
// variance n * (1/n) * 1/(3 fan_in) equals that of the dense initializer.
// Biases start at zero. Draw order: A_0..A_{n-1}, then S_0/F_0..

inline double mixing_bound(std::size_t n) { return std::sqrt(3.0 / static_cast<double>(n)); }
inline double filter_bound(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

template <Scalar T>
KroneckerLinear<T> init_kron_linear(std::size_t in, std::size_t out, std::size_t n, Rng& rng) {
    check_divisible(n, in, out, "KroneckerLinear");
    KroneckerLinear<T> p;
    p.n = n;
    p.in = in;
    p.out = out;
    const double a = mixing_bound(n), s = filter_bound(in);
    for (std::size_t i = 0; i < n; ++i) p.mixing.push_back(Tensor<T>::uniform({n, n}, rng, -a, a));
    for (std::size_t i = 0; i < n; ++i) p.filters.push_back(Tensor<T>::uniform({out / n, in / n}, rng, -s, s));
    p.bias = Tensor<T>({out});
    return p;
}

template <Scalar T>
DenseLinear<T> init_dense_linear(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) throw ConfigError("DenseLinear: channel counts must be positive");
    const double s = filter_bound(in);
    return DenseLinear<T>{in, out, Tensor<T>::uniform({out, in}, rng, -s, s), Tensor<T>({out})};
}

template <Scalar T>
KroneckerConv<T> init_kron_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t n, Rng& rng,
                                std::size_t stride = 1, std::size_t padding = 0) {
    check_divisible(n, in, out, "KroneckerConv2d");
    if (kernel == 0 || stride == 0) throw ConfigError("KroneckerConv2d: stride and kernel must be positive");
    KroneckerConv<T> p;
    p.n = n;
    p.in = in;
    p.out = out;
    p.kernel = kernel;
    p.stride = stride;
    p.padding = padding;
    const double a = mixing_bound(n), s = filter_bound(in * kernel * kernel);
    for (std::size_t i = 0; i < n; ++i) p.mixing.push_back(Tensor<T>::uniform({n, n}, rng, -a, a));
    for (std::size_t i = 0; i < n; ++i)
        p.filters.push_back(Tensor<T>::uniform({out / n, in / n, kernel, kernel}, rng, -s, s));
    p.bias = Tensor<T>({out});
    return p;
}

template <Scalar T>
DenseConv<T> init_dense_conv(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, std::size_t stride = 1,
                             std::size_t padding = 0) {
    if (in == 0 || out == 0 || kernel == 0 || stride == 0)
        throw ConfigError("DenseConv2d: channels, kernel and stride must be positive");
    const double s = filter_bound(in * kernel * kernel);
    return DenseConv<T>{in,      out, kernel, stride, padding, Tensor<T>::uniform({out, in, kernel, kernel}, rng, -s, s),
                        Tensor<T>({out})};
}

// ---- parameter accounting --------------------------------------------------

template <Scalar T>
std::size_t param_count(const KroneckerLinear<T>& p) {
    const std::size_t mixing = p.freeze_mixing ? 0 : p.n * p.n * p.n;
    return mixing + p.out * p.in / p.n + p.out;
}

template <Scalar T>
std::size_t param_count(const KroneckerConv<T>& p) {
    const std::size_t mixing = p.freeze_mixing ? 0 : p.n * p.n * p.n;
    return mixing + p.out * p.in * p.kernel * p.kernel / p.n + p.out;
}

template <Scalar T>
std::size_t param_count(const DenseLinear<T>& p) {
    return p.out * p.in + p.out;
}

template <Scalar T>
std::size_t param_count(const DenseConv<T>& p) {
    return p.out * p.in * p.kernel * p.kernel + p.out;
}

/// Closed-form counts used for configuration-only accounting (no allocation).
inline std::size_t kron_linear_count(std::size_t in, std::size_t out, std::size_t n) {
    return n * n * n + out * in / n + out;
}
inline std::size_t kron_conv_count(std::size_t in, std::size_t out, std::size_t k, std::size_t n) {
    return n * n * n + out * in * k * k / n + out;
}
inline std::size_t dense_linear_count(std::size_t in, std::size_t out) { return out * in + out; }
inline std::size_t dense_conv_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }

// ---- weight materialization ------------------------------------------------

template <Scalar T>
Tensor<T> materialize_weight(const KroneckerLinear<T>& p) {
    validate(p);
    Tensor<T> w = kernels::kron(p.mixing[0], p.filters[0]);
    for (std::size_t i = 1; i < p.n; ++i) kernels::add_inplace(w, kernels::kron(p.mixing[i], p.filters[i]));
    return w;
}

template <Scalar T>
Tensor<T> materialize_weight(const KroneckerConv<T>& p) {
    validate(p);
    Tensor<T> w = kernels::kron4(p.mixing[0], p.filters[0]);
    for (std::size_t i = 1; i < p.n; ++i) kernels::add_inplace(w, kernels::kron4(p.mixing[i], p.filters[i]));
    return w;
}

// ---- differentiable forward ------------------------------------------------

namespace detail {

template <Scalar T, class Layer, class KronOp>
Var<T> assemble_weight(Tape<T>& tape, const Layer& p, KronOp kron_op) {
    Var<T> w;
    for (std::size_t i = 0; i < p.n; ++i) {
        Var<T> a = tape.param(p.mixing[i], !p.freeze_mixing);
        Var<T> f = tape.param(p.filters[i]);
        Var<T> term = kron_op(a, f);
        w = i == 0 ? term : add(w, term);
    }
    return w;
}

}  // namespace detail

/// Y = X * (sum_i A[i] (x) S[i])^T + bias for X [batch x in].
template <Scalar T>
Var<T> kl_forward(const KroneckerLinear<T>& p, Var<T> x) {
    validate(p);
    if (x.shape().size() != 2 || x.shape()[1] != p.in)
        throw ShapeError("KroneckerLinear: expected input [batch x " + std::to_string(p.in) + "], got " +
                         shape_str(x.shape()));
    Tape<T>& tape = x.tape();
    Var<T> w = detail::assemble_weight(tape, p, [](Var<T> a, Var<T> s) { return kron(a, s); });
    return linear(x, w, tape.param(p.bias));
}

template <Scalar T>
Var<T> dense_linear_forward(const DenseLinear<T>& p, Var<T> x) {
    Tape<T>& tape = x.tape();
    return linear(x, tape.param(p.weight), tape.param(p.bias));
}

/// Conv2D(x, sum_i kron4(A[i], F[i]), bias, stride, padding) for x [b x in x H x W].
template <Scalar T>
Var<T> kc_forward(const KroneckerConv<T>& p, Var<T> x) {
    validate(p);
    if (x.shape().size() != 4 || x.shape()[1] != p.in)
        throw ShapeError("KroneckerConv2d: expected input [b x " + std::to_string(p.in) + " x H x W], got " +
                         shape_str(x.shape()));
    Tape<T>& tape = x.tape();
    Var<T> w = detail::assemble_weight(tape, p, [](Var<T> a, Var<T> f) { return kron4(a, f); });
    return conv2d(x, w, tape.param(p.bias), p.stride, p.padding);
}

template <Scalar T>
Var<T> dense_conv_forward(const DenseConv<T>& p, Var<T> x) {
    Tape<T>& tape = x.tape();
    return conv2d(x, tape.param(p.weight), tape.param(p.bias), p.stride, p.padding);
}

/// Inference path that never forms the out x in weight: with x split into n
/// blocks x_v of width in/n, output block u is sum_i sum_v A[i][u,v] * S[i] x_v.
template <Scalar T>
Tensor<T> kl_forward_implicit(const KroneckerLinear<T>& p, const Tensor<T>& x) {
    validate(p);
    if (x.rank() != 2 || x.dim(1) != p.in) throw ShapeError("KroneckerLinear: bad input " + shape_str(x.shape()));
    const std::size_t batch = x.dim(0), n = p.n, bi = p.in / n, bo = p.out / n;
    Tensor<T> y({batch, p.out});
    for (std::size_t r = 0; r < batch; ++r)
        std::copy(p.bias.ptr(), p.bias.ptr() + p.out, y.ptr() + r * p.out);
    std::vector<T> z(bo);
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t v = 0; v < n; ++v) {
                // z = S[i] * x_v
                kernels::gemm(false, true, 1, bo, bi, x.ptr() + r * p.in + v * bi, p.filters[i].ptr(), z.data());
                for (std::size_t u = 0; u < n; ++u) {
                    const T a = p.mixing[i][u * n + v];
                    T* dst = y.ptr() + r * p.out + u * bo;
                    for (std::size_t j = 0; j < bo; ++j) dst[j] += a * z[j];
                }
            }
    return y;
}

// ---- parameter enumeration -------------------------------------------------

template <Scalar T>
void collect_params(KroneckerLinear<T>& p, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (std::size_t i = 0; i < p.n; ++i)
        out.push_back({prefix + "/A_" + std::to_string(i), &p.mixing[i], !p.freeze_mixing});
    for (std::size_t i = 0; i < p.n; ++i) out.push_back({prefix + "/S_" + std::to_string(i), &p.filters[i], true});
    out.push_back({prefix + "/bias", &p.bias, true});
}

template <Scalar T>
void collect_params(KroneckerConv<T>& p, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (std::size_t i = 0; i < p.n; ++i)
        out.push_back({prefix + "/A_" + std::to_string(i), &p.mixing[i], !p.freeze_mixing});
    for (std::size_t i = 0; i < p.n; ++i) out.push_back({prefix + "/F_" + std::to_string(i), &p.filters[i], true});
    out.push_back({prefix + "/bias", &p.bias, true});
}

template <Scalar T>
void collect_params(DenseLinear<T>& p, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + "/weight", &p.weight, true});
    out.push_back({prefix + "/bias", &p.bias, true});
}

template <Scalar T>
void collect_params(DenseConv<T>& p, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + "/weight", &p.weight, true});
    out.push_back({prefix + "/bias", &p.bias, true});
}

// ---- dense-or-Kronecker wrappers used by the network blocks ----------------

template <Scalar T>
using Linear = std::variant<DenseLinear<T>, KroneckerLinear<T>>;

template <Scalar T>
using Conv = std::variant<DenseConv<T>, KroneckerConv<T>>;

template <Scalar T>
Linear<T> make_linear(LayerKind kind, std::size_t in, std::size_t out, std::size_t n, Rng& rng) {
    if (kind == LayerKind::dense) return init_dense_linear<T>(in, out, rng);
    return init_kron_linear<T>(in, out, n, rng);
}

template <Scalar T>
Conv<T> make_conv(LayerKind kind, std::size_t in, std::size_t out, std::size_t kernel, std::size_t n, Rng& rng,
                  std::size_t stride = 1, std::size_t padding = 0) {
    if (kind == LayerKind::dense) return init_dense_conv<T>(in, out, kernel, rng, stride, padding);
    return init_kron_conv<T>(in, out, kernel, n, rng, stride, padding);
}

template <Scalar T>
Var<T> forward(const Linear<T>& layer, Var<T> x) {
    return std::visit(
        [&](const auto& p) -> Var<T> {
            if constexpr (std::is_same_v<std::decay_t<decltype(p)>, DenseLinear<T>>) {
                return dense_linear_forward(p, x);
            } else {
                return kl_forward(p, x);
            }
        },
        layer);
}

template <Scalar T>
Var<T> forward(const Conv<T>& layer, Var<T> x) {
    return std::visit(
        [&](const auto& p) -> Var<T> {
            if constexpr (std::is_same_v<std::decay_t<decltype(p)>, DenseConv<T>>) {
                return dense_conv_forward(p, x);
            } else {
                return kc_forward(p, x);
            }
        },
        layer);
}

template <Scalar T>
std::size_t param_count(const Linear<T>& layer) {
    return std::visit([](const auto& p) { return param_count(p); }, layer);
}

template <Scalar T>
std::size_t param_count(const Conv<T>& layer) {
    return std::visit([](const auto& p) { return param_count(p); }, layer);
}

template <Scalar T>
void collect_params(Linear<T>& layer, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    std::visit([&](auto& p) { collect_params(p, prefix, out); }, layer);
}

template <Scalar T>
void collect_params(Conv<T>& layer, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    std::visit([&](auto& p) { collect_params(p, prefix, out); }, layer);
}

/// Dense weight equivalent to a layer, regardless of parameterization.
template <Scalar T>
Tensor<T> effective_weight(const Linear<T>& layer) {
    if (const auto* d = std::get_if<DenseLinear<T>>(&layer)) return d->weight;
    return materialize_weight(std::get<KroneckerLinear<T>>(layer));
}

template <Scalar T>
const Tensor<T>& layer_bias(const Linear<T>& layer) {
    return std::visit([](const auto& p) -> const Tensor<T>& { return p.bias; }, layer);
}

}  // namespace kronmri
