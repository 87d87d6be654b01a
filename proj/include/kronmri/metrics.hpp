#pragma once

#include <functional>
#include <limits>

#include "kronmri/kspace.hpp"

namespace kronmri {

inline constexpr double charbonnier_eps = 1e-3;

struct LossWeights {
    double alpha = 15.0;   // image-domain Charbonnier
    double beta = 0.1;     // k-space Charbonnier
    double gamma = 0.0025; // perceptual feature distance

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("loss weights must be non-negative");
    }
};

/// Differentiable feature map for the perceptual term. An empty function
/// disables the term entirely.
template <Scalar T>
using PerceptualExtractor = std::function<Var<T>(Var<T>)>;

/// mean(sqrt((a - b)^2 + eps^2)).
template <Scalar T>
Var<T> charbonnier(Var<T> a, Var<T> b, double eps = charbonnier_eps) {
    Tape<T>& tape = detail::same_tape(a, b);
    if (!(eps > 0.0)) throw ConfigError("charbonnier: eps must be positive");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.shape() != bv.shape())
        throw ShapeError("charbonnier: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const T e2 = static_cast<T>(eps * eps);
    const std::size_t n = av.numel();
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = av[i] - bv[i];
        total += std::sqrt(d * d + e2);
    }
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record("charbonnier", Tensor<T>::scalar(total / static_cast<T>(n)), {ia, ib},
                       [ia, ib, e2, n](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& av = t.value(ia);
                           const Tensor<T>& bv = t.value(ib);
                           Tensor<T> ga(av.shape());
                           const T scale = g[0] / static_cast<T>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                               const T d = av[i] - bv[i];
                               ga[i] = scale * d / std::sqrt(d * d + e2);
                           }
                           t.accumulate(ia, ga);
                           if (t.requires_grad(ib)) t.accumulate(ib, kernels::map(ga, [](T v) { return -v; }));
                       });
}

/// alpha * L_img + beta * L_kspace + gamma * L_perc on [..., 2, H, W] tensors.
template <Scalar T>
Var<T> loss_total(Var<T> xhat, Var<T> x, const LossWeights& w, const PerceptualExtractor<T>& extractor = {},
                   double eps = charbonnier_eps) {
    w.validate();
    if (xhat.shape() != x.shape())
        throw ShapeError("loss_total: shape mismatch " + shape_str(xhat.shape()) + " vs " + shape_str(x.shape()));
    Var<T> image_term = charbonnier(xhat, x, eps);
    Var<T> kspace_term = charbonnier(fft2c(xhat), fft2c(x), eps);
    Var<T> total = add(scale(image_term, static_cast<T>(w.alpha)), scale(kspace_term, static_cast<T>(w.beta)));
    if (extractor) {
        Var<T> perc = mean(abs(sub(extractor(xhat), extractor(x))));
        total = add(total, scale(perc, static_cast<T>(w.gamma)));
    }
    return total;
}

// ---- evaluation metrics (plain doubles on magnitude images) ----------------

/// 10 log10(range^2 / MSE); +infinity when the images are identical.
template <Scalar T>
double psnr(const Tensor<T>& xhat, const Tensor<T>& x, double data_range) {
    if (xhat.shape() != x.shape())
        throw ShapeError("psnr: shape mismatch " + shape_str(xhat.shape()) + " vs " + shape_str(x.shape()));
    if (!(data_range > 0.0)) throw ConfigError("psnr: data_range must be positive");
    double sse = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(xhat[i]) - static_cast<double>(x[i]);
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(x.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

inline constexpr std::size_t ssim_window = 11;
inline constexpr double ssim_sigma = 1.5;
inline constexpr double ssim_k1 = 0.01;
inline constexpr double ssim_k2 = 0.03;

inline std::vector<double> gaussian_window_1d(std::size_t size = ssim_window, double sigma = ssim_sigma) {
    std::vector<double> g(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        total += g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    for (auto& v : g) v /= total;
    return g;
}

/// Mean SSIM over all fully-contained 11x11 windows (Gaussian sigma 1.5,
/// K1 = 0.01, K2 = 0.03). Local statistics come from separable filtering.
template <Scalar T>
double ssim(const Tensor<T>& xhat, const Tensor<T>& x, double data_range) {
    if (xhat.shape() != x.shape())
        throw ShapeError("ssim: shape mismatch " + shape_str(xhat.shape()) + " vs " + shape_str(x.shape()));
    if (x.rank() != 2) throw ShapeError("ssim expects [H x W] images, got " + shape_str(x.shape()));
    const std::size_t h = x.dim(0), w = x.dim(1), win = ssim_window;
    if (h < win || w < win) throw ShapeError("ssim: image smaller than the 11x11 window");
    if (!(data_range > 0.0)) throw ConfigError("ssim: data_range must be positive");
    const auto g = gaussian_window_1d();
    const std::size_t oh = h - win + 1, ow = w - win + 1;

    auto filter = [&](auto&& value) {
        std::vector<double> rows(h * ow), out(oh * ow);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < win; ++t) acc += g[t] * value(i * w + j + t);
                rows[i * ow + j] = acc;
            }
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < win; ++t) acc += g[t] * rows[(i + t) * ow + j];
                out[i * ow + j] = acc;
            }
        return out;
    };
    auto a = [&](std::size_t i) { return static_cast<double>(xhat[i]); };
    auto b = [&](std::size_t i) { return static_cast<double>(x[i]); };
    const auto mu_a = filter(a);
    const auto mu_b = filter(b);
    const auto e_aa = filter([&](std::size_t i) { return a(i) * a(i); });
    const auto e_bb = filter([&](std::size_t i) { return b(i) * b(i); });
    const auto e_ab = filter([&](std::size_t i) { return a(i) * b(i); });

    const double c1 = (ssim_k1 * data_range) * (ssim_k1 * data_range);
    const double c2 = (ssim_k2 * data_range) * (ssim_k2 * data_range);
    double total = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) {
        const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
        const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    return total / static_cast<double>(oh * ow);
}

struct SampleMetrics {
    double psnr_db;
    double ssim;
};

/// PSNR/SSIM on magnitude images with data_range = max |x| of the reference.
template <Scalar T>
SampleMetrics complex_image_metrics(const Tensor<T>& xhat, const Tensor<T>& x) {
    const Tensor<T> mag_hat = magnitude(xhat);
    const Tensor<T> mag = magnitude(x);
    double range = 0.0;
    for (T v : mag.data()) range = std::max(range, static_cast<double>(v));
    if (range <= 0.0) range = 1.0;
    const std::size_t h = mag.shape()[mag.rank() - 2], w = mag.shape().back();
    const Tensor<T> a = mag_hat.reshaped({h, w});
    const Tensor<T> b = mag.reshaped({h, w});
    return {psnr(a, b, range), ssim(a, b, range)};
}

}  // namespace kronmri
