#pragma once

#include <cstdint>

#include "kronmri/tensor.hpp"

// Raw math kernels on plain tensors. The autodiff layer in tape.hpp wraps
// these; nothing here records gradients.

namespace kronmri {

/// Multiply-accumulate counter incremented by every product kernel below.
inline std::uint64_t& mac_counter() {
    thread_local std::uint64_t count = 0;
    return count;
}

namespace kernels {

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

/// C[m x n] (+)= op(A) * op(B) with op(A) m x k and op(B) k x n, raw row-major buffers.
template <Scalar T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate = false) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    mac_counter() += static_cast<std::uint64_t>(m) * n * k;
    const std::size_t a_row = trans_a ? 1 : k, a_col = trans_a ? m : 1;
    if (!trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = a[i * a_row + p * a_col];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc = T(0);
                for (std::size_t p = 0; p < k; ++p) acc += a[i * a_row + p * a_col] * brow[p];
                c[i * n + j] += acc;
            }
        }
    }
}

template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
    require_rank(a.shape(), 2, "matmul");
    require_rank(b.shape(), 2, "matmul");
    const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
    const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
    const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
    if (k != kb)
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> c({m, n});
    gemm(trans_a, trans_b, m, n, k, a.ptr(), b.ptr(), c.ptr());
    return c;
}

template <Scalar T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_rank(a.shape(), 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return out;
}

/// Kronecker product of two matrices: out[i*r + u, j*s + v] = a[i,j] * b[u,v].
template <Scalar T>
Tensor<T> kron(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "kron");
    require_rank(b.shape(), 2, "kron");
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(0), s = b.dim(1);
    Tensor<T> out({p * r, q * s});
    mac_counter() += static_cast<std::uint64_t>(p) * q * r * s;
    const std::size_t cols = q * s;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
            const T aij = a[i * q + j];
            for (std::size_t u = 0; u < r; ++u) {
                T* dst = out.ptr() + (i * r + u) * cols + j * s;
                const T* src = b.ptr() + u * s;
                for (std::size_t v = 0; v < s; ++v) dst[v] = aij * src[v];
            }
        }
    return out;
}

/// Kronecker product over the channel axes of a conv kernel, broadcast over taps:
/// out[u*o + p, v*i + q, :, :] = a[u,v] * f[p,q,:,:].
template <Scalar T>
Tensor<T> kron4(const Tensor<T>& a, const Tensor<T>& f) {
    require_rank(a.shape(), 2, "kron4 mixing matrix");
    require_rank(f.shape(), 4, "kron4 filter");
    const std::size_t rows = a.dim(0), cols = a.dim(1), o = f.dim(0), in = f.dim(1), taps = f.dim(2) * f.dim(3);
    Tensor<T> out({rows * o, cols * in, f.dim(2), f.dim(3)});
    mac_counter() += static_cast<std::uint64_t>(rows) * cols * o * in * taps;
    for (std::size_t u = 0; u < rows; ++u)
        for (std::size_t v = 0; v < cols; ++v) {
            const T auv = a[u * cols + v];
            for (std::size_t p = 0; p < o; ++p)
                for (std::size_t q = 0; q < in; ++q) {
                    T* dst = out.ptr() + ((u * o + p) * cols * in + (v * in + q)) * taps;
                    const T* src = f.ptr() + (p * in + q) * taps;
                    for (std::size_t t = 0; t < taps; ++t) dst[t] = auv * src[t];
                }
        }
    return out;
}

struct ConvGeometry {
    std::size_t batch, c_in, h, w, c_out, k, stride, padding, h_out, w_out;

    // Output columns ow for which ow*stride + tap - padding lands inside [0, extent).
    std::pair<std::size_t, std::size_t> valid_range(std::size_t tap, std::size_t extent, std::size_t out) const {
        const long s = static_cast<long>(stride), p = static_cast<long>(padding), t = static_cast<long>(tap);
        const long lo_num = p - t;
        long lo = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
        const long hi_num = static_cast<long>(extent) - 1 + p - t;
        long hi = hi_num < 0 ? 0 : hi_num / s + 1;
        hi = std::min(hi, static_cast<long>(out));
        lo = std::min(lo, hi);
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d kernel");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (w[1] != x[1])
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x) + ", kernel " + shape_str(w));
    if (w[2] != w[3]) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w));
    const std::size_t k = w[2];
    if (k > x[2] + 2 * padding || k > x[3] + 2 * padding)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(x));
    ConvGeometry g{x[0], x[1], x[2], x[3], w[0], k, stride, padding, 0, 0};
    g.h_out = (g.h + 2 * padding - k) / stride + 1;
    g.w_out = (g.w + 2 * padding - k) / stride + 1;
    return g;
}

/// Cross-correlation (no kernel flip) with zero padding.
template <Scalar T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t stride,
                 std::size_t padding) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, padding);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.c_out))
        throw ShapeError("conv2d bias must have shape [" + std::to_string(g.c_out) + "]");
    Tensor<T> y({g.batch, g.c_out, g.h_out, g.w_out});
    mac_counter() += static_cast<std::uint64_t>(g.batch) * g.c_out * g.c_in * g.k * g.k * g.h_out * g.w_out;
    const std::size_t plane_in = g.h * g.w, plane_out = g.h_out * g.w_out;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oc = 0; oc < g.c_out; ++oc) {
            T* out = y.ptr() + (b * g.c_out + oc) * plane_out;
            if (bias) std::fill(out, out + plane_out, (*bias)[oc]);
            for (std::size_t ic = 0; ic < g.c_in; ++ic) {
                const T* in = x.ptr() + (b * g.c_in + ic) * plane_in;
                const T* wk = w.ptr() + (oc * g.c_in + ic) * g.k * g.k;
                for (std::size_t kh = 0; kh < g.k; ++kh) {
                    const auto [oh_lo, oh_hi] = g.valid_range(kh, g.h, g.h_out);
                    for (std::size_t kw = 0; kw < g.k; ++kw) {
                        const T wv = wk[kh * g.k + kw];
                        const auto [ow_lo, ow_hi] = g.valid_range(kw, g.w, g.w_out);
                        const std::size_t len = ow_hi - ow_lo;
                        if (len == 0) continue;
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const T* in_row = in + (oh * g.stride + kh - g.padding) * g.w +
                                              (ow_lo * g.stride + kw - g.padding);
                            T* out_row = out + oh * g.w_out + ow_lo;
                            if (g.stride == 1) {
                                for (std::size_t j = 0; j < len; ++j) out_row[j] += wv * in_row[j];
                            } else {
                                for (std::size_t j = 0; j < len; ++j) out_row[j] += wv * in_row[j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    return y;
}

/// Gradient of conv2d with respect to its input.
template <Scalar T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_y, const Tensor<T>& w, const Shape& x_shape, std::size_t stride,
                            std::size_t padding) {
    const ConvGeometry g = conv_geometry(x_shape, w.shape(), stride, padding);
    Tensor<T> gx(x_shape);
    mac_counter() += static_cast<std::uint64_t>(g.batch) * g.c_out * g.c_in * g.k * g.k * g.h_out * g.w_out;
    const std::size_t plane_in = g.h * g.w, plane_out = g.h_out * g.w_out;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oc = 0; oc < g.c_out; ++oc) {
            const T* gout = grad_y.ptr() + (b * g.c_out + oc) * plane_out;
            for (std::size_t ic = 0; ic < g.c_in; ++ic) {
                T* gin = gx.ptr() + (b * g.c_in + ic) * plane_in;
                const T* wk = w.ptr() + (oc * g.c_in + ic) * g.k * g.k;
                for (std::size_t kh = 0; kh < g.k; ++kh) {
                    const auto [oh_lo, oh_hi] = g.valid_range(kh, g.h, g.h_out);
                    for (std::size_t kw = 0; kw < g.k; ++kw) {
                        const T wv = wk[kh * g.k + kw];
                        const auto [ow_lo, ow_hi] = g.valid_range(kw, g.w, g.w_out);
                        const std::size_t len = ow_hi - ow_lo;
                        if (len == 0) continue;
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            T* gin_row = gin + (oh * g.stride + kh - g.padding) * g.w +
                                         (ow_lo * g.stride + kw - g.padding);
                            const T* gout_row = gout + oh * g.w_out + ow_lo;
                            if (g.stride == 1) {
                                for (std::size_t j = 0; j < len; ++j) gin_row[j] += wv * gout_row[j];
                            } else {
                                for (std::size_t j = 0; j < len; ++j) gin_row[j * g.stride] += wv * gout_row[j];
                            }
                        }
                    }
                }
            }
        }
    return gx;
}

/// Gradient of conv2d with respect to its kernel.
template <Scalar T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_y, const Tensor<T>& x, const Shape& w_shape, std::size_t stride,
                             std::size_t padding) {
    const ConvGeometry g = conv_geometry(x.shape(), w_shape, stride, padding);
    Tensor<T> gw(w_shape);
    mac_counter() += static_cast<std::uint64_t>(g.batch) * g.c_out * g.c_in * g.k * g.k * g.h_out * g.w_out;
    const std::size_t plane_in = g.h * g.w, plane_out = g.h_out * g.w_out;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oc = 0; oc < g.c_out; ++oc) {
            const T* gout = grad_y.ptr() + (b * g.c_out + oc) * plane_out;
            for (std::size_t ic = 0; ic < g.c_in; ++ic) {
                const T* in = x.ptr() + (b * g.c_in + ic) * plane_in;
                T* gk = gw.ptr() + (oc * g.c_in + ic) * g.k * g.k;
                for (std::size_t kh = 0; kh < g.k; ++kh) {
                    const auto [oh_lo, oh_hi] = g.valid_range(kh, g.h, g.h_out);
                    for (std::size_t kw = 0; kw < g.k; ++kw) {
                        const auto [ow_lo, ow_hi] = g.valid_range(kw, g.w, g.w_out);
                        const std::size_t len = ow_hi - ow_lo;
                        if (len == 0) continue;
                        T acc = T(0);
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const T* in_row = in + (oh * g.stride + kh - g.padding) * g.w +
                                              (ow_lo * g.stride + kw - g.padding);
                            const T* gout_row = gout + oh * g.w_out + ow_lo;
                            if (g.stride == 1) {
                                for (std::size_t j = 0; j < len; ++j) acc += gout_row[j] * in_row[j];
                            } else {
                                for (std::size_t j = 0; j < len; ++j) acc += gout_row[j] * in_row[j * g.stride];
                            }
                        }
                        gk[kh * g.k + kw] += acc;
                    }
                }
            }
        }
    return gw;
}

template <Scalar T, class F>
Tensor<T> map(const Tensor<T>& a, F&& f) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
    return out;
}

template <Scalar T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
    if (a.shape() != b.shape())
        throw ShapeError("elementwise shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

template <Scalar T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.shape() != src.shape())
        throw ShapeError("add_inplace shape mismatch " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

template <Scalar T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch for " + shape_str(x.shape()));
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (perm[i] >= r || seen[perm[i]]) throw ShapeError("permute: invalid permutation");
        seen[perm[i]] = true;
        out_shape[i] = x.dim(perm[i]);
    }
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    Tensor<T> out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.numel(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
        out[flat] = x[off];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

/// Sum over `axes` (sorted, unique), dropping those axes from the shape.
template <Scalar T>
Tensor<T> sum_axes(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    std::vector<bool> reduced(r, false);
    for (std::size_t a : axes) {
        if (a >= r) throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for " + shape_str(x.shape()));
        reduced[a] = true;
    }
    Shape out_shape;
    for (std::size_t i = 0; i < r; ++i)
        if (!reduced[i]) out_shape.push_back(x.dim(i));
    Tensor<T> out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < x.numel(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i)
            if (!reduced[i]) off = off * x.dim(i) + idx[i];
        out[off] += x[flat];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < x.dim(i)) break;
            idx[i] = 0;
        }
    }
    return out;
}

/// Inverse of sum_axes for gradients: replicate g over the reduced axes of `shape`.
template <Scalar T>
Tensor<T> broadcast_back(const Tensor<T>& g, const Shape& shape, const std::vector<std::size_t>& axes) {
    const std::size_t r = shape.size();
    std::vector<bool> reduced(r, false);
    for (std::size_t a : axes) reduced[a] = true;
    Tensor<T> out(shape);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.numel(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i)
            if (!reduced[i]) off = off * shape[i] + idx[i];
        out[flat] = g[off];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

}  // namespace kernels
}  // namespace kronmri
