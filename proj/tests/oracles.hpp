#pragma once

// Reference implementations written directly from the defining formulas.
// They share no code with the library beyond the Tensor container.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "kronmri/tensor.hpp"

namespace oracle {

using kronmri::Tensor;
using D = Tensor<double>;

inline D matmul(const D& a, const D& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    D c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
            c.at(i, j) = s;
        }
    return c;
}

inline D transpose(const D& a) {
    D t({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

/// (A (x) B)[i*p + r, j*q + s] = A[i, j] * B[r, s].
inline D kron(const D& a, const D& b) {
    const std::size_t p = b.dim(0), q = b.dim(1);
    D out({a.dim(0) * p, a.dim(1) * q});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j)
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t s = 0; s < q; ++s) out.at(i * p + r, j * q + s) = a.at(i, j) * b.at(r, s);
    return out;
}

/// Kernel-valued Kronecker product: out[u*o + p, v*c + q, :, :] = a[u, v] * f[p, q, :, :].
inline D kron4(const D& a, const D& f) {
    const std::size_t o = f.dim(0), c = f.dim(1), kh = f.dim(2), kw = f.dim(3);
    D out({a.dim(0) * o, a.dim(1) * c, kh, kw});
    for (std::size_t u = 0; u < a.dim(0); ++u)
        for (std::size_t v = 0; v < a.dim(1); ++v)
            for (std::size_t p = 0; p < o; ++p)
                for (std::size_t q = 0; q < c; ++q)
                    for (std::size_t y = 0; y < kh; ++y)
                        for (std::size_t x = 0; x < kw; ++x)
                            out.at(u * o + p, v * c + q, y, x) = a.at(u, v) * f.at(p, q, y, x);
    return out;
}

/// Y = X W^T + b.
inline D linear(const D& x, const D& w, const D& bias) {
    D y = matmul(x, transpose(w));
    for (std::size_t i = 0; i < y.dim(0); ++i)
        for (std::size_t j = 0; j < y.dim(1); ++j) y.at(i, j) += bias[j];
    return y;
}

/// Direct cross-correlation with zero padding, bounds checked per tap.
inline D conv2d(const D& x, const D& w, const D& bias, std::size_t stride, std::size_t pad) {
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), k = w.dim(2);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    D y({b, o, oh, ow});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t m = 0; m < o; ++m)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double s = bias.numel() ? bias[m] : 0.0;
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t di = 0; di < k; ++di)
                            for (std::size_t dj = 0; dj < k; ++dj) {
                                const long yy = static_cast<long>(i * stride + di) - static_cast<long>(pad);
                                const long xx = static_cast<long>(j * stride + dj) - static_cast<long>(pad);
                                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd))
                                    continue;
                                s += x.at(n, ch, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) *
                                     w.at(m, ch, di, dj);
                            }
                    y.at(n, m, i, j) = s;
                }
    return y;
}

/// Centered orthonormal DFT as a double sum:
/// X[k, l] = (HW)^-1/2 sum x[u, v] exp(-+2 pi i ((k - H/2)(u - H/2)/H + (l - W/2)(v - W/2)/W)).
inline std::vector<std::complex<double>> centered_dft2(const std::vector<std::complex<double>>& x, std::size_t h,
                                                       std::size_t w, bool inverse = false) {
    const double sign = inverse ? 1.0 : -1.0;
    const long ch = static_cast<long>(h / 2), cw = static_cast<long>(w / 2);
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t k = 0; k < h; ++k)
        for (std::size_t l = 0; l < w; ++l) {
            std::complex<double> s = 0;
            for (std::size_t u = 0; u < h; ++u)
                for (std::size_t v = 0; v < w; ++v) {
                    const double phase = 2.0 * std::numbers::pi *
                                         (static_cast<double>((static_cast<long>(k) - ch) * (static_cast<long>(u) - ch)) /
                                              static_cast<double>(h) +
                                          static_cast<double>((static_cast<long>(l) - cw) * (static_cast<long>(v) - cw)) /
                                              static_cast<double>(w));
                    s += x[u * w + v] * std::polar(1.0, sign * phase);
                }
            out[k * w + l] = s / std::sqrt(static_cast<double>(h * w));
        }
    return out;
}

inline double psnr(const std::vector<double>& a, const std::vector<double>& b, double range) {
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.size());
    return 10.0 * std::log10(range * range / mse);
}

/// SSIM averaged over every 11x11 window, with an explicit 2-D Gaussian per window.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                   double range) {
    const int win = 11;
    const double sigma = 1.5;
    double g[11][11];
    double total = 0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - 5, dj = j - 5;
            g[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            total += g[i][j];
        }
    for (auto& row : g)
        for (double& v : row) v /= total;
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + win <= h; ++y)
        for (std::size_t x = 0; x + win <= w; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    ma += g[i][j] * a[(y + i) * w + x + j];
                    mb += g[i][j] * b[(y + i) * w + x + j];
                }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double da = a[(y + i) * w + x + j] - ma, db = b[(y + i) * w + x + j] - mb;
                    va += g[i][j] * da * da;
                    vb += g[i][j] * db * db;
                    cov += g[i][j] * da * db;
                }
            sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return sum / static_cast<double>(count);
}

/// Quaternion product (a1 + b1 i + c1 j + d1 k)(a2 + b2 i + c2 j + d2 k).
inline std::vector<double> hamilton(const std::vector<double>& q, const std::vector<double>& p) {
    const double a1 = q[0], b1 = q[1], c1 = q[2], d1 = q[3];
    const double a2 = p[0], b2 = p[1], c2 = p[2], d2 = p[3];
    return {a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2, a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2, a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2};
}

/// Scalar Adam with bias correction, one coordinate at a time.
struct ScalarAdam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0, v = 0;
    int t = 0;
    double step(double param, double grad) {
        ++t;
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        return param - lr * mh / (std::sqrt(vh) + eps);
    }
};

/// Softmax attention for one head given explicit Q, K, V rows.
inline D attention(const D& q, const D& k, const D& v) {
    const std::size_t t = q.dim(0), d = q.dim(1);
    D s = matmul(q, transpose(k));
    D out({t, v.dim(1)});
    for (std::size_t i = 0; i < t; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < t; ++j) mx = std::max(mx, s.at(i, j) / std::sqrt(static_cast<double>(d)));
        std::vector<double> p(t);
        double z = 0;
        for (std::size_t j = 0; j < t; ++j) z += p[j] = std::exp(s.at(i, j) / std::sqrt(static_cast<double>(d)) - mx);
        for (std::size_t j = 0; j < t; ++j)
            for (std::size_t c = 0; c < v.dim(1); ++c) out.at(i, c) += p[j] / z * v.at(j, c);
    }
    return out;
}

}  // namespace oracle
