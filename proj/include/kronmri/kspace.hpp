#pragma once

#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "kronmri/tape.hpp"

// Measurement simulation for single-coil Cartesian MRI. Complex images and
// k-space grids are tensors [..., 2, H, W] with channel 0 real and channel 1
// imaginary; k-space has DC at (H/2, W/2).

namespace kronmri {

namespace fft {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

/// In-place unnormalized DFT of length n (sign -1 forward, +1 inverse).
/// Radix-2 for powers of two, direct summation otherwise.
inline void dft1d(std::span<cplx> data, bool inverse) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    const double sign = inverse ? 1.0 : -1.0;
    if (is_pow2(n)) {
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(data[i], data[j]);
        }
        for (std::size_t len = 2; len <= n; len <<= 1) {
            const std::size_t half = len / 2;
            for (std::size_t k = 0; k < half; ++k) {
                const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
                const cplx w(std::cos(ang), std::sin(ang));
                for (std::size_t i = 0; i < n; i += len) {
                    const cplx u = data[i + k];
                    const cplx v = data[i + k + half] * w;
                    data[i + k] = u + v;
                    data[i + k + half] = u - v;
                }
            }
        }
        return;
    }
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang =
                sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
            acc += data[t] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    std::copy(out.begin(), out.end(), data.begin());
}

/// Centered orthonormal 2-D transform of one H x W plane:
/// fftshift(DFT(ifftshift(x))) / sqrt(H W), or its inverse.
inline void centered2d(std::vector<cplx>& plane, std::size_t h, std::size_t w, bool inverse) {
    // ifftshift: out[i] = in[(i + floor(n/2)) mod n]
    // fftshift:  out[i] = in[(i + ceil(n/2)) mod n]
    auto shift = [&](std::size_t off_h, std::size_t off_w) {
        std::vector<cplx> tmp(plane.size());
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) tmp[i * w + j] = plane[((i + off_h) % h) * w + (j + off_w) % w];
        plane.swap(tmp);
    };
    shift(h / 2, w / 2);
    std::vector<cplx> col(h);
    for (std::size_t i = 0; i < h; ++i) dft1d(std::span<cplx>(plane.data() + i * w, w), inverse);
    for (std::size_t j = 0; j < w; ++j) {
        for (std::size_t i = 0; i < h; ++i) col[i] = plane[i * w + j];
        dft1d(col, inverse);
        for (std::size_t i = 0; i < h; ++i) plane[i * w + j] = col[i];
    }
    shift((h + 1) / 2, (w + 1) / 2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
    for (auto& v : plane) v *= scale;
}

}  // namespace fft

inline void require_complex_layout(const Shape& s, const char* what) {
    if (s.size() < 3 || s[s.size() - 3] != 2)
        throw ShapeError(std::string(what) + ": expected [..., 2, H, W], got " + shape_str(s));
}

namespace detail {

template <Scalar T>
Tensor<T> transform_planes(const Tensor<T>& x, bool inverse) {
    require_complex_layout(x.shape(), inverse ? "ifft2c" : "fft2c");
    const std::size_t h = x.shape()[x.rank() - 2], w = x.shape().back(), plane = h * w;
    const std::size_t count = x.numel() / (2 * plane);
    Tensor<T> out(x.shape());
    std::vector<fft::cplx> buf(plane);
    for (std::size_t c = 0; c < count; ++c) {
        const T* re = x.ptr() + c * 2 * plane;
        const T* im = re + plane;
        for (std::size_t i = 0; i < plane; ++i) buf[i] = {static_cast<double>(re[i]), static_cast<double>(im[i])};
        fft::centered2d(buf, h, w, inverse);
        T* ore = out.ptr() + c * 2 * plane;
        T* oim = ore + plane;
        for (std::size_t i = 0; i < plane; ++i) {
            ore[i] = static_cast<T>(buf[i].real());
            oim[i] = static_cast<T>(buf[i].imag());
        }
    }
    return out;
}

}  // namespace detail

template <Scalar T>
Tensor<T> fft2c(const Tensor<T>& image) {
    return detail::transform_planes(image, false);
}

template <Scalar T>
Tensor<T> ifft2c(const Tensor<T>& kspace) {
    return detail::transform_planes(kspace, true);
}

// The transform is unitary, so the adjoint used for gradients is the inverse.
template <Scalar T>
Var<T> fft2c(Var<T> x) {
    const std::size_t ix = x.id();
    return x.tape().record("fft2c", fft2c(x.value()), {ix},
                           [ix](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ix, ifft2c(g)); });
}

template <Scalar T>
Var<T> ifft2c(Var<T> x) {
    const std::size_t ix = x.id();
    return x.tape().record("ifft2c", ifft2c(x.value()), {ix},
                           [ix](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ix, fft2c(g)); });
}

// ---- Cartesian masks -------------------------------------------------------

struct CartesianMask {
    std::size_t width = 0;
    std::vector<std::uint8_t> sampled;
    double af = 1.0;
    double center_fraction = 0.0;
    std::size_t center_cols = 0;

    std::size_t sampled_count() const {
        return static_cast<std::size_t>(std::count(sampled.begin(), sampled.end(), std::uint8_t{1}));
    }
    double sampled_fraction() const { return static_cast<double>(sampled_count()) / static_cast<double>(width); }
    std::size_t center_start() const { return (width - center_cols + 1) / 2; }
};

inline double default_center_fraction(int af) { return af >= 16 ? 0.02 : 0.04; }

inline std::size_t center_column_count(std::size_t width, double center_fraction) {
    // The small slack keeps exact products such as 0.125 * 64 from rounding up.
    return static_cast<std::size_t>(std::ceil(center_fraction * static_cast<double>(width) - 1e-9));
}

/// Fully samples the central ceil(cf * width) columns, then keeps each other
/// column with probability p = (width/af - center) / (width - center), so the
/// expected sampled fraction is 1/af. One uniform draw per non-center column,
/// left to right.
inline CartesianMask gen_cartesian_mask(std::size_t width, double af, double center_fraction, Rng& rng) {
    if (width < 16) throw ConfigError("gen_cartesian_mask: width must be >= 16, got " + std::to_string(width));
    if (!(af >= 1.0)) throw ConfigError("gen_cartesian_mask: acceleration factor must be >= 1");
    if (!(center_fraction > 0.0 && center_fraction < 1.0))
        throw ConfigError("gen_cartesian_mask: center_fraction must lie in (0, 1)");
    CartesianMask m;
    m.width = width;
    m.af = af;
    m.center_fraction = center_fraction;
    m.center_cols = center_column_count(width, center_fraction);
    const double w = static_cast<double>(width), c = static_cast<double>(m.center_cols);
    const double p = m.center_cols == width ? 0.0 : (w / af - c) / (w - c);
    if (p < -1e-12 || p > 1.0)
        throw ConfigError("gen_cartesian_mask: center_fraction " + std::to_string(center_fraction) +
                          " too large for acceleration " + std::to_string(af) + " (p=" + std::to_string(p) + ")");
    m.sampled.assign(width, 0);
    const std::size_t start = m.center_start();
    for (std::size_t j = 0; j < width; ++j) {
        if (j >= start && j < start + m.center_cols) {
            m.sampled[j] = 1;
        } else {
            m.sampled[j] = rng.uniform() < p ? 1 : 0;
        }
    }
    return m;
}

template <Scalar T>
Tensor<T> mask_tensor(const CartesianMask& m) {
    Tensor<T> t({m.width});
    for (std::size_t j = 0; j < m.width; ++j) t[j] = static_cast<T>(m.sampled[j]);
    return t;
}

/// Rebuilds a mask from a 0/1 vector (center metadata is not recoverable and left zero).
template <Scalar T>
CartesianMask mask_from_tensor(const Tensor<T>& t) {
    if (t.rank() != 1) throw ShapeError("mask tensor must be rank 1, got " + shape_str(t.shape()));
    CartesianMask m;
    m.width = t.dim(0);
    m.sampled.resize(m.width);
    for (std::size_t j = 0; j < m.width; ++j) {
        if (t[j] != T(0) && t[j] != T(1)) throw ConfigError("mask tensor entries must be 0 or 1");
        m.sampled[j] = t[j] == T(1) ? 1 : 0;
    }
    m.af = static_cast<double>(m.width) / static_cast<double>(std::max<std::size_t>(1, m.sampled_count()));
    return m;
}

/// Zeroes both channels of every unsampled column; sampled columns are copied.
template <Scalar T>
Tensor<T> apply_mask(const Tensor<T>& k, const CartesianMask& m) {
    require_complex_layout(k.shape(), "apply_mask");
    if (k.shape().back() != m.width)
        throw ShapeError("apply_mask: k-space width " + std::to_string(k.shape().back()) + " vs mask width " +
                         std::to_string(m.width));
    Tensor<T> out = k;
    const std::size_t w = m.width, rows = k.numel() / w;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j)
            if (!m.sampled[j]) out[r * w + j] = T(0);
    return out;
}

template <Scalar T>
Tensor<T> zero_filled(const Tensor<T>& k_under) {
    return ifft2c(k_under);
}

// ---- synthetic phantoms ----------------------------------------------------

/// Sum of random ellipses (intensities in [0, 1], magnitude clipped to
/// [0, 1]) modulated by a smooth quadratic phase bounded by pi/4 in magnitude.
/// Coordinates are normalized to [-1, 1] on both axes.
template <Scalar T>
Tensor<T> gen_phantom(std::size_t h, std::size_t w, std::size_t n_ellipses, Rng& rng) {
    if (h < 16 || w < 16) throw ConfigError("gen_phantom: H and W must be >= 16");
    struct Ellipse {
        double cx, cy, a, b, cos_t, sin_t, intensity;
    };
    std::vector<Ellipse> ellipses;
    for (std::size_t e = 0; e < n_ellipses; ++e) {
        Ellipse el{};
        el.cx = rng.uniform(-0.6, 0.6);
        el.cy = rng.uniform(-0.6, 0.6);
        el.a = rng.uniform(0.1, 0.6);
        el.b = rng.uniform(0.1, 0.6);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        el.cos_t = std::cos(theta);
        el.sin_t = std::sin(theta);
        el.intensity = rng.uniform(0.0, 1.0);
        ellipses.push_back(el);
    }
    // phase(x, y) = c0 + c1 x + c2 y + c3 x y + c4 x^2 + c5 y^2, sum |c| <= pi/4.
    std::array<double, 6> coeff{};
    double l1 = 0.0;
    for (auto& c : coeff) {
        c = rng.uniform(-1.0, 1.0);
        l1 += std::abs(c);
    }
    const double budget = rng.uniform(0.5, 1.0) * std::numbers::pi / 4.0;
    for (auto& c : coeff) c *= l1 > 0.0 ? budget / l1 : 0.0;

    Tensor<T> img({2, h, w});
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < h; ++i) {
        const double y = h == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(h - 1);
        for (std::size_t j = 0; j < w; ++j) {
            const double x = w == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(w - 1);
            double mag = 0.0;
            for (const auto& el : ellipses) {
                const double dx = x - el.cx, dy = y - el.cy;
                const double u = (dx * el.cos_t + dy * el.sin_t) / el.a;
                const double v = (-dx * el.sin_t + dy * el.cos_t) / el.b;
                if (u * u + v * v <= 1.0) mag += el.intensity;
            }
            mag = std::clamp(mag, 0.0, 1.0);
            const double phase =
                coeff[0] + coeff[1] * x + coeff[2] * y + coeff[3] * x * y + coeff[4] * x * x + coeff[5] * y * y;
            img[i * w + j] = static_cast<T>(mag * std::cos(phase));
            img[plane + i * w + j] = static_cast<T>(mag * std::sin(phase));
        }
    }
    return img;
}

/// |x| per pixel of a [..., 2, H, W] tensor, dropping the channel axis.
template <Scalar T>
Tensor<T> magnitude(const Tensor<T>& x) {
    require_complex_layout(x.shape(), "magnitude");
    Shape s = x.shape();
    s.erase(s.end() - 3);
    const std::size_t plane = s[s.size() - 2] * s.back();
    Tensor<T> out(s);
    const std::size_t count = out.numel() / plane;
    for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            const T re = x[c * 2 * plane + i], im = x[c * 2 * plane + plane + i];
            out[c * plane + i] = std::sqrt(re * re + im * im);
        }
    return out;
}

// ---- PGM export ------------------------------------------------------------

/// Binary 8-bit PGM (P5) of a [H x W] image scaled so `max_value` maps to 255.
template <Scalar T>
void write_pgm(const std::filesystem::path& path, const Tensor<T>& image, double max_value = 0.0) {
    if (image.rank() != 2) throw ShapeError("write_pgm expects [H x W], got " + shape_str(image.shape()));
    if (max_value <= 0.0)
        for (T v : image.data()) max_value = std::max(max_value, static_cast<double>(v));
    const double scale = max_value > 0.0 ? 255.0 / max_value : 0.0;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    for (T v : image.data()) {
        const double s = std::clamp(std::round(static_cast<double>(v) * scale), 0.0, 255.0);
        os.put(static_cast<char>(static_cast<unsigned char>(s)));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

/// One-row PGM with maxval 1 holding the raw 0/1 sampling pattern.
inline void write_mask_pgm(const std::filesystem::path& path, const CartesianMask& m) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "P5\n" << m.width << " 1\n1\n";
    for (std::uint8_t s : m.sampled) os.put(static_cast<char>(s));
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace kronmri
