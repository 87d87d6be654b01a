#include <gtest/gtest.h>

#include "kronmri/kernels.hpp"
#include "oracles.hpp"

using namespace kronmri;
using D = Tensor<double>;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        differs = differs || x != c.next();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, Mt19937ReferenceValue) {
    // The standard pins the 10000th output of a default-seeded mt19937_64.
    Rng r(5489);
    std::uint64_t x = 0;
    for (int i = 0; i < 10000; ++i) x = r.next();
    EXPECT_EQ(x, 9981545732273789042ull);
}

TEST(Rng, UniformRangeAndMean) {
    Rng r(7);
    double sum = 0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        ASSERT_GE(u, -2.0);
        ASSERT_LT(u, 3.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 20000, 0.5, 0.05);
}

TEST(Rng, ShuffleIsPermutation) {
    Rng r(1);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    r.shuffle(std::span<int>(v));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
    EXPECT_NE(v, sorted);
}

TEST(Rng, DerivedSeedsDiffer) {
    EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
    EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
    EXPECT_EQ(derive_seed(9, 3), derive_seed(9, 3));
}

TEST(Tensor, ConstructionAndIndexing) {
    D t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.at(1, 2), 6.0);
    EXPECT_EQ(t.at(0, 1), 2.0);
    EXPECT_EQ(shape_str(t.shape()), "[2x3]");
    EXPECT_THROW(D({2, 3}, std::vector<double>{1, 2}), ShapeError);
    EXPECT_THROW(D({2, 0}), ShapeError);
    EXPECT_EQ(D().numel(), 1u);
    EXPECT_EQ(D::scalar(3.5).item(), 3.5);
}

TEST(Tensor, ReshapeKeepsDataAndRejectsBadCounts) {
    D t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    D r = t.reshaped({3, 2});
    EXPECT_EQ(r.at(2, 1), 6.0);
    EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, CastAndFiniteness) {
    D t = D::matrix({{1.5, -2.25}});
    Tensor<float> f = t.cast<float>();
    EXPECT_EQ(f[1], -2.25f);
    t[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
}

TEST(Kernels, MatmulMatchesTripleLoop) {
    Rng rng(3);
    for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 2}, {7, 4, 9}, {16, 16, 16}}) {
        D a = D::uniform({std::size_t(m), std::size_t(k)}, rng, -1, 1);
        D b = D::uniform({std::size_t(k), std::size_t(n)}, rng, -1, 1);
        EXPECT_LT(max_abs_diff(kernels::matmul(a, b), oracle::matmul(a, b)), 1e-12);
        EXPECT_LT(max_abs_diff(kernels::matmul(oracle::transpose(a), b, true, false), oracle::matmul(a, b)), 1e-12);
        EXPECT_LT(max_abs_diff(kernels::matmul(a, oracle::transpose(b), false, true), oracle::matmul(a, b)), 1e-12);
    }
    EXPECT_THROW(kernels::matmul(D({2, 3}), D({2, 3})), ShapeError);
}

TEST(Kernels, MacCounterCountsGemmExactly) {
    mac_counter() = 0;
    kernels::matmul(D({5, 7}), D({7, 3}));
    EXPECT_EQ(mac_counter(), 5u * 7u * 3u);
}

TEST(Kernels, KronMatchesIndexFormula) {
    Rng rng(4);
    D a = D::uniform({2, 3}, rng, -1, 1);
    D b = D::uniform({4, 5}, rng, -1, 1);
    D k = kernels::kron(a, b);
    EXPECT_EQ(k.shape(), (Shape{8, 15}));
    EXPECT_EQ(max_abs_diff(k, oracle::kron(a, b)), 0.0);
    D f = D::uniform({3, 2, 3, 3}, rng, -1, 1);
    EXPECT_EQ(max_abs_diff(kernels::kron4(a, f), oracle::kron4(a, f)), 0.0);
}

TEST(Kernels, KronMixedProductProperty) {
    // (A (x) B)(C (x) D) = AC (x) BD
    Rng rng(5);
    D a = D::uniform({2, 2}, rng, -1, 1), b = D::uniform({3, 3}, rng, -1, 1);
    D c = D::uniform({2, 2}, rng, -1, 1), d = D::uniform({3, 3}, rng, -1, 1);
    D lhs = oracle::matmul(kernels::kron(a, b), kernels::kron(c, d));
    D rhs = kernels::kron(oracle::matmul(a, c), oracle::matmul(b, d));
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

struct ConvCase {
    std::size_t b, c, o, h, w, k, stride, pad;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, ForwardAndBackwardMatchDirectLoops) {
    const ConvCase p = GetParam();
    Rng rng(p.h * 31 + p.k);
    D x = D::uniform({p.b, p.c, p.h, p.w}, rng, -1, 1);
    D w = D::uniform({p.o, p.c, p.k, p.k}, rng, -1, 1);
    D bias = D::uniform({p.o}, rng, -1, 1);
    D y = kernels::conv2d(x, w, &bias, p.stride, p.pad);
    D ref = oracle::conv2d(x, w, bias, p.stride, p.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(y, ref), 1e-12);

    // Adjoint identity: <conv(x), g> = <x, conv^T_x(g)> and likewise for w.
    D g = D::uniform(y.shape(), rng, -1, 1);
    D gx = kernels::conv2d_grad_input(g, w, x.shape(), p.stride, p.pad);
    D gw = kernels::conv2d_grad_weight(g, x, w.shape(), p.stride, p.pad);
    D y0 = oracle::conv2d(x, w, D({p.o}), p.stride, p.pad);
    double lhs = 0, rx = 0, rw = 0;
    for (std::size_t i = 0; i < g.numel(); ++i) lhs += y0[i] * g[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rx += x[i] * gx[i];
    for (std::size_t i = 0; i < w.numel(); ++i) rw += w[i] * gw[i];
    EXPECT_NEAR(lhs, rx, 1e-10);
    EXPECT_NEAR(lhs, rw, 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{1, 1, 1, 5, 5, 3, 1, 0}, ConvCase{2, 3, 4, 6, 7, 3, 1, 1},
                                           ConvCase{1, 2, 2, 8, 8, 3, 2, 1}, ConvCase{2, 4, 3, 5, 5, 1, 1, 0},
                                           ConvCase{1, 2, 3, 7, 6, 3, 2, 0}, ConvCase{1, 1, 2, 2, 2, 3, 1, 1},
                                           ConvCase{1, 2, 2, 9, 9, 5, 3, 2}));

TEST(Kernels, ConvGeometryErrors) {
    EXPECT_THROW(kernels::conv2d(D({1, 2, 4, 4}), D({1, 3, 3, 3}), static_cast<const D*>(nullptr), 1, 0),
                 ShapeError);
    EXPECT_THROW(kernels::conv2d(D({1, 2, 2, 2}), D({1, 2, 3, 3}), static_cast<const D*>(nullptr), 1, 0),
                 ShapeError);
    EXPECT_THROW(kernels::conv2d(D({1, 2, 4, 4}), D({1, 2, 3, 3}), static_cast<const D*>(nullptr), 0, 0),
                 ConfigError);
}

TEST(Kernels, ConvMacCount) {
    mac_counter() = 0;
    kernels::conv2d(D({1, 2, 4, 4}), D({3, 2, 1, 1}), static_cast<const D*>(nullptr), 1, 0);
    EXPECT_EQ(mac_counter(), 1u * 3u * 4u * 4u * 2u);
}

TEST(Kernels, PermuteAndSumAxes) {
    D x({2, 3, 4});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
    D p = kernels::permute(x, {2, 0, 1});
    EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
    EXPECT_EQ(p.at(3, 1, 2), x.at(1, 2, 3));
    D s = kernels::sum_axes(x, {1});
    EXPECT_EQ(s.shape(), (Shape{2, 4}));
    EXPECT_EQ(s.at(1, 2), x.at(1, 0, 2) + x.at(1, 1, 2) + x.at(1, 2, 2));
}

TEST(Errors, ExitCodesByKind) {
    EXPECT_EQ(ConfigError("x").exit_code(), 2);
    EXPECT_EQ(ShapeError("x").exit_code(), 2);
    EXPECT_EQ(ContractError("x").exit_code(), 2);
    EXPECT_EQ(NumericError("x").exit_code(), 3);
    EXPECT_EQ(IoError("x").exit_code(), 4);
    EXPECT_STREQ(to_string(ErrorKind::numeric), "numeric_error");
}
