#pragma once

#include <array>
#include <string>

#include "kronmri/kron_layers.hpp"

// Fixed mixing-matrix sets for the real, complex and quaternion algebras.
//
// Quaternion convention: basis order (1, i, j, k); A[m] is the coefficient
// matrix of component m in the left-multiplication (Hamilton) matrix
//
//   L(a + bi + cj + dk) = | a -b -c -d |
//                         | b  a -d  c |
//                         | c  d  a -b |
//                         | d -c  b  a |
//
// so that sum_m q_m A[m] = L(q) and L(q) p is the product q∘p.

namespace kronmri {

struct AlgebraPreset {
    std::string name;
    std::size_t n;
    std::vector<Tensor<double>> mixing;
};

inline AlgebraPreset preset(const std::string& name) {
    using M = Tensor<double>;
    if (name == "real") return {name, 1, {M::matrix({{1}})}};
    if (name == "complex") return {name, 2, {M::matrix({{1, 0}, {0, 1}}), M::matrix({{0, -1}, {1, 0}})}};
    if (name == "quaternion")
        return {name,
                4,
                {M::identity(4),
                 M::matrix({{0, -1, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, -1}, {0, 0, 1, 0}}),
                 M::matrix({{0, 0, -1, 0}, {0, 0, 0, 1}, {1, 0, 0, 0}, {0, -1, 0, 0}}),
                 M::matrix({{0, 0, 0, -1}, {0, 0, -1, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}})}};
    throw ConfigError("unknown algebra preset '" + name + "' (expected real, complex or quaternion)");
}

/// Kronecker layer realizing left multiplication by `coefficients` in the
/// preset's algebra, widened so each hypercomplex component carries `width`
/// channels (S[i] = coefficients[i] * I_width). Mixing matrices are frozen.
template <Scalar T>
KroneckerLinear<T> algebra_layer(const AlgebraPreset& preset, std::span<const double> coefficients,
                                 std::size_t width = 1) {
    if (coefficients.size() != preset.n)
        throw ConfigError("algebra_layer: expected " + std::to_string(preset.n) + " coefficients");
    KroneckerLinear<T> p;
    p.n = preset.n;
    p.in = p.out = preset.n * width;
    p.freeze_mixing = true;
    for (std::size_t i = 0; i < preset.n; ++i) {
        p.mixing.push_back(preset.mixing[i].cast<T>());
        Tensor<T> s({width, width});
        for (std::size_t d = 0; d < width; ++d) s[d * width + d] = static_cast<T>(coefficients[i]);
        p.filters.push_back(std::move(s));
    }
    p.bias = Tensor<T>({p.out});
    return p;
}

namespace detail {

struct BasisProduct {
    int sign;
    std::size_t index;
};

// Multiplication tables over basis elements, written out from the algebra rules
// (i^2 = -1 for complex; i^2 = j^2 = k^2 = ijk = -1 for quaternions).
inline BasisProduct basis_product(const std::string& algebra, std::size_t a, std::size_t b) {
    if (algebra == "real") return {1, 0};
    if (algebra == "complex") {
        static constexpr BasisProduct table[2][2] = {{{1, 0}, {1, 1}}, {{1, 1}, {-1, 0}}};
        return table[a][b];
    }
    //                     1         i         j         k
    static constexpr BasisProduct table[4][4] = {
        /* 1 */ {{1, 0}, {1, 1}, {1, 2}, {1, 3}},
        /* i */ {{1, 1}, {-1, 0}, {1, 3}, {-1, 2}},
        /* j */ {{1, 2}, {-1, 3}, {-1, 0}, {1, 1}},
        /* k */ {{1, 3}, {1, 2}, {-1, 1}, {-1, 0}},
    };
    return table[a][b];
}

}  // namespace detail

/// Product q∘p in the preset's algebra, expanded term by term over the basis table.
inline std::vector<double> algebra_multiply(const AlgebraPreset& preset, std::span<const double> q,
                                            std::span<const double> p) {
    std::vector<double> out(preset.n, 0.0);
    for (std::size_t a = 0; a < preset.n; ++a)
        for (std::size_t b = 0; b < preset.n; ++b) {
            const auto [sign, idx] = detail::basis_product(preset.name, a, b);
            out[idx] += sign * q[a] * p[b];
        }
    return out;
}

/// q∘p computed by running p through the Kronecker layer built from q.
inline std::vector<double> algebra_multiply_via_layer(const AlgebraPreset& preset, std::span<const double> q,
                                                      std::span<const double> p) {
    const KroneckerLinear<double> layer = algebra_layer<double>(preset, q);
    Tape<double> tape;
    Var<double> x = tape.constant(Tensor<double>({1, preset.n}, std::vector<double>(p.begin(), p.end())));
    const Tensor<double>& y = kl_forward(layer, x).value();
    return {y.data().begin(), y.data().end()};
}

struct AlgebraReport {
    std::string name;
    std::size_t trials = 0;
    double max_abs_deviation = 0.0;
    bool passed = false;
};

inline constexpr double algebra_tolerance = 1e-10;

/// Random p, q ~ U(-1, 1)^n per trial; compares the layer route to the table route.
inline AlgebraReport verify_algebra(const AlgebraPreset& preset, std::size_t trials, Rng& rng) {
    if (trials == 0) throw ConfigError("verify_algebra: trials must be >= 1");
    AlgebraReport report{preset.name, trials, 0.0, false};
    std::vector<double> p(preset.n), q(preset.n);
    for (std::size_t t = 0; t < trials; ++t) {
        for (auto& v : q) v = rng.uniform(-1.0, 1.0);
        for (auto& v : p) v = rng.uniform(-1.0, 1.0);
        const auto via_layer = algebra_multiply_via_layer(preset, q, p);
        const auto via_table = algebra_multiply(preset, q, p);
        for (std::size_t i = 0; i < preset.n; ++i)
            report.max_abs_deviation = std::max(report.max_abs_deviation, std::abs(via_layer[i] - via_table[i]));
    }
    report.passed = report.max_abs_deviation <= algebra_tolerance;
    return report;
}

}  // namespace kronmri
