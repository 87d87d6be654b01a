#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "kronmri/grad_check.hpp"
#include "kronmri/kspace.hpp"
#include "oracles.hpp"

using namespace kronmri;
using D = Tensor<double>;
using cd = std::complex<double>;

namespace {

std::vector<cd> to_complex(const D& x) {
    const std::size_t plane = x.dim(x.rank() - 2) * x.shape().back();
    std::vector<cd> out(plane);
    for (std::size_t i = 0; i < plane; ++i) out[i] = {x[i], x[plane + i]};
    return out;
}

double energy(const D& x) {
    double s = 0;
    for (double v : x.data()) s += v * v;
    return s;
}

}  // namespace

class DftOracle : public ::testing::TestWithParam<std::pair<std::size_t, std::size_t>> {};

TEST_P(DftOracle, ForwardAndInverseMatchDoubleSum) {
    const auto [h, w] = GetParam();
    Rng rng(h * 100 + w);
    D x = D::uniform({2, h, w}, rng, -1, 1);
    const auto ref = oracle::centered_dft2(to_complex(x), h, w);
    const auto got = to_complex(fft2c(x));
    const auto ref_inv = oracle::centered_dft2(to_complex(x), h, w, true);
    const auto got_inv = to_complex(ifft2c(x));
    for (std::size_t i = 0; i < h * w; ++i) {
        EXPECT_LT(std::abs(got[i] - ref[i]), 1e-10);
        EXPECT_LT(std::abs(got_inv[i] - ref_inv[i]), 1e-10);
    }
}

INSTANTIATE_TEST_SUITE_P(Sizes, DftOracle,
                         ::testing::Values(std::pair<std::size_t, std::size_t>{8, 8}, std::pair<std::size_t, std::size_t>{4, 16},
                                           std::pair<std::size_t, std::size_t>{5, 7}, std::pair<std::size_t, std::size_t>{6, 9},
                                           std::pair<std::size_t, std::size_t>{1, 8}, std::pair<std::size_t, std::size_t>{12, 10}));

TEST(Fft, RoundTripAndParseval) {
    Rng rng(1);
    for (auto [h, w] : {std::pair{32, 32}, {64, 48}, {7, 13}}) {
        D x = D::uniform({3, 2, std::size_t(h), std::size_t(w)}, rng, -1, 1);
        const D k = fft2c(x);
        EXPECT_LT(max_abs_diff(ifft2c(k), x), 1e-10);
        EXPECT_LT(max_abs_diff(fft2c(ifft2c(x)), x), 1e-10);
        EXPECT_NEAR(energy(k) / energy(x), 1.0, 1e-10);
    }
}

TEST(Fft, DcOfConstantImageLandsAtCenter) {
    const std::size_t h = 8, w = 8;
    D x({2, h, w});
    for (std::size_t i = 0; i < h * w; ++i) x[i] = 1.0;
    const D k = fft2c(x);
    EXPECT_NEAR(k.at(0, h / 2, w / 2), std::sqrt(double(h * w)), 1e-12);
    EXPECT_NEAR(energy(k), double(h * w), 1e-9);
}

TEST(Fft, RejectsNonComplexLayout) {
    EXPECT_THROW(fft2c(D({3, 4, 4})), ShapeError);
    EXPECT_THROW(fft2c(D({4, 4})), ShapeError);
}

TEST(Fft, BackwardIsAdjointTransform) {
    Rng rng(2);
    D x = D::uniform({1, 2, 4, 6}, rng, -1, 1);
    D wts = D::uniform({1, 2, 4, 6}, rng, -1, 1);
    auto f_fwd = [&](Tape<double>& t) { return sum(mul(fft2c(t.param(x)), t.constant(wts))); };
    auto f_inv = [&](Tape<double>& t) { return sum(mul(ifft2c(t.param(x)), t.constant(wts))); };
    EXPECT_TRUE(grad_check(f_fwd, {&x}, 1e-6, 1e-6).passed);
    EXPECT_TRUE(grad_check(f_inv, {&x}, 1e-6, 1e-6).passed);
}

TEST(Mask, CenterBlockAndExpectedFraction) {
    double total = 0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        Rng rng(s);
        const auto m = gen_cartesian_mask(320, 8, 0.04, rng);
        ASSERT_EQ(m.center_cols, 13u);
        for (std::size_t j = m.center_start(); j < m.center_start() + 13; ++j) ASSERT_EQ(m.sampled[j], 1);
        total += m.sampled_fraction();
    }
    EXPECT_NEAR(total / 500, 0.125, 0.125 * 0.05);
}

TEST(Mask, CenterCountAndPlacement) {
    EXPECT_EQ(center_column_count(320, 0.04), 13u);
    EXPECT_EQ(center_column_count(64, 0.125), 8u);
    EXPECT_EQ(center_column_count(64, 0.04), 3u);
    Rng rng(3);
    const auto m = gen_cartesian_mask(16, 2, 0.25, rng);
    EXPECT_EQ(m.center_cols, 4u);
    EXPECT_EQ(m.center_start(), 6u);
    EXPECT_EQ(default_center_fraction(8), 0.04);
    EXPECT_EQ(default_center_fraction(16), 0.02);
}

TEST(Mask, DeterministicUnderSeed) {
    Rng a(9), b(9);
    EXPECT_EQ(gen_cartesian_mask(128, 16, 0.02, a).sampled, gen_cartesian_mask(128, 16, 0.02, b).sampled);
}

TEST(Mask, InvalidParameters) {
    Rng rng(4);
    EXPECT_THROW(gen_cartesian_mask(8, 4, 0.1, rng), ConfigError);
    EXPECT_THROW(gen_cartesian_mask(64, 8, 0.5, rng), ConfigError);
    EXPECT_THROW(gen_cartesian_mask(64, 0.5, 0.04, rng), ConfigError);
    EXPECT_THROW(gen_cartesian_mask(64, 8, 0.0, rng), ConfigError);
}

TEST(Mask, TensorRoundTrip) {
    Rng rng(5);
    const auto m = gen_cartesian_mask(64, 8, 0.04, rng);
    const auto back = mask_from_tensor(mask_tensor<double>(m));
    EXPECT_EQ(back.sampled, m.sampled);
    EXPECT_THROW(mask_from_tensor(D({4}, std::vector<double>{0, 1, 0.5, 1})), ConfigError);
}

TEST(Mask, ApplyZeroesUnsampledColumnsOnly) {
    Rng rng(6);
    D k = D::uniform({2, 2, 4, 16}, rng, -1, 1);
    const auto m = gen_cartesian_mask(16, 4, 0.25, rng);
    const D out = apply_mask(k, m);
    for (std::size_t i = 0; i < k.numel(); ++i) EXPECT_EQ(out[i], m.sampled[i % 16] ? k[i] : 0.0);
    EXPECT_THROW(apply_mask(D({2, 4, 8}), m), ShapeError);
}

TEST(ZeroFilled, FullySampledReproducesImage) {
    Rng rng(7);
    const D x = gen_phantom<double>(32, 32, 5, rng);
    CartesianMask all;
    all.width = 32;
    all.sampled.assign(32, 1);
    EXPECT_LT(max_abs_diff(zero_filled(apply_mask(fft2c(x), all)), x), 1e-12);
}

TEST(Phantom, RangeDeterminismAndPhaseBound) {
    Rng a(8), b(8);
    const D x = gen_phantom<double>(48, 40, 6, a);
    EXPECT_EQ(x, gen_phantom<double>(48, 40, 6, b));
    EXPECT_EQ(x.shape(), (Shape{2, 48, 40}));
    const D mag = magnitude(x);
    double mx = 0;
    for (std::size_t i = 0; i < mag.numel(); ++i) {
        EXPECT_LE(mag[i], 1.0 + 1e-12);
        mx = std::max(mx, mag[i]);
        if (mag[i] > 1e-9) {
            const double phase = std::atan2(x[mag.numel() + i], x[i]);
            EXPECT_LE(std::abs(phase), std::numbers::pi / 4 + 1e-12);
        }
    }
    EXPECT_GT(mx, 0.0);
    EXPECT_THROW(gen_phantom<double>(8, 32, 3, a), ConfigError);
}

TEST(Pgm, HeaderAndPayload) {
    const auto dir = std::filesystem::temp_directory_path() / "kronmri_pgm_test";
    std::filesystem::create_directories(dir);
    D img({2, 3}, std::vector<double>{0, 0.5, 1, 1, 0.5, 0});
    write_pgm(dir / "a.pgm", img);
    std::ifstream f(dir / "a.pgm", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
    ASSERT_EQ(bytes.size(), 17u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 128);
    EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 255);
    std::filesystem::remove_all(dir);
}
