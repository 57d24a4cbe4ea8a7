#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "coordfill/autodiff.hpp"
#include "coordfill/tensor.hpp"

namespace coordfill {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// Output pixel (batch, row, column) addressed by selective decoding ops.
struct PixelIndex {
    std::uint32_t b = 0;
    std::uint32_t y = 0;
    std::uint32_t x = 0;
    friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

namespace detail {

struct ConvGeometry {
    std::size_t channels, in_h, in_w, k, stride, pad, out_h, out_w;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

// Columns for output pixels [p0, p1): row = (c*k + ky)*k + kx.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, std::size_t p0, std::size_t p1, T* cols) {
    const std::size_t n = p1 - p0;
    const std::size_t kk = g.k * g.k;
    for (std::size_t c = 0; c < g.channels; ++c) {
        const T* plane = src + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = cols + (c * kk + ky * g.k + kx) * n;
                for (std::size_t p = p0; p < p1; ++p) {
                    const std::size_t oy = p / g.out_w, ox = p % g.out_w;
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                    const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                    row[p - p0] = (iy >= 0 && ix >= 0 && iy < std::ptrdiff_t(g.in_h) && ix < std::ptrdiff_t(g.in_w))
                                      ? plane[iy * g.in_w + ix]
                                      : T(0);
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, std::size_t p0, std::size_t p1, T* dst) {
    const std::size_t n = p1 - p0;
    const std::size_t kk = g.k * g.k;
    for (std::size_t c = 0; c < g.channels; ++c) {
        T* plane = dst + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = cols + (c * kk + ky * g.k + kx) * n;
                for (std::size_t p = p0; p < p1; ++p) {
                    const std::size_t oy = p / g.out_w, ox = p % g.out_w;
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
                    const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                    if (iy >= 0 && ix >= 0 && iy < std::ptrdiff_t(g.in_h) && ix < std::ptrdiff_t(g.in_w))
                        plane[iy * g.in_w + ix] += row[p - p0];
                }
            }
        }
    }
}

// Bounds im2col scratch to roughly 8M scalars.
inline std::size_t column_chunk(std::size_t rows, std::size_t total) {
    const std::size_t budget = std::size_t{1} << 23;
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(rows, 1), 1, std::max<std::size_t>(total, 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward kernels on plain tensors
// ---------------------------------------------------------------------------

/// Cross-correlation (no kernel flip). weights: (out_ch, in_ch, k, k); bias may be empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    require_rank(input.shape(), 4, "conv2d input");
    require_rank(weights.shape(), 4, "conv2d weights");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t O = weights.dim(0), k = weights.dim(2);
    if (weights.dim(1) != C || weights.dim(3) != k) {
        throw ShapeError("conv2d: weights " + shape_str(weights.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
    }
    if (!bias.empty() && bias.size() != O) throw ShapeError("conv2d: bias length must equal out_ch");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    detail::ConvGeometry g{C, H, W, k, stride, padding, detail::conv_out_extent(H, k, stride, padding),
                           detail::conv_out_extent(W, k, stride, padding)};
    const std::size_t P = g.out_h * g.out_w, R = C * k * k;
    Tensor<T> out({B, O, g.out_h, g.out_w});
    ConstMatMap<T> wm(weights.ptr(), O, R);
    const std::size_t chunk = detail::column_chunk(R, P);
    std::vector<T> cols(R * chunk);
    for (std::size_t b = 0; b < B; ++b) {
        const T* src = input.ptr() + b * C * H * W;
        T* dst = out.ptr() + b * O * P;
        for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
            const std::size_t p1 = std::min(P, p0 + chunk), n = p1 - p0;
            detail::im2col(src, g, p0, p1, cols.data());
            ConstMatMap<T> cm(cols.data(), R, n);
            Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> om(dst + p0, O, n, Eigen::OuterStride<>(P));
            om.noalias() = wm * cm;
        }
        if (!bias.empty()) {
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t p = 0; p < P; ++p) dst[o * P + p] += bias[o];
        }
    }
    return out;
}

/// Transposed convolution; weights (in_ch, out_ch, k, k). Output extent (H-1)*stride - 2*pad + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding) {
    require_rank(input.shape(), 4, "conv_transpose2d input");
    require_rank(weights.shape(), 4, "conv_transpose2d weights");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (weights.dim(0) != C) throw ShapeError("conv_transpose2d: weights in_ch mismatch");
    const std::size_t O = weights.dim(1), k = weights.dim(2);
    if ((H - 1) * stride + k < 2 * padding + 1) throw ShapeError("conv_transpose2d: empty output");
    const std::size_t Ho = (H - 1) * stride + k - 2 * padding, Wo = (W - 1) * stride + k - 2 * padding;
    detail::ConvGeometry g{O, Ho, Wo, k, stride, padding, H, W};
    const std::size_t P = H * W, R = O * k * k;
    Tensor<T> out({B, O, Ho, Wo});
    ConstMatMap<T> wm(weights.ptr(), C, R);
    const std::size_t chunk = detail::column_chunk(R, P);
    RowMatrix<T> cols(R, chunk);
    for (std::size_t b = 0; b < B; ++b) {
        const T* src = input.ptr() + b * C * P;
        T* dst = out.ptr() + b * O * Ho * Wo;
        for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
            const std::size_t p1 = std::min(P, p0 + chunk), n = p1 - p0;
            Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> xm(src + p0, C, n, Eigen::OuterStride<>(P));
            MatMap<T> cm(cols.data(), R, n);
            cm.noalias() = wm.transpose() * xm;
            detail::col2im_add(cols.data(), g, p0, p1, dst);
        }
        if (!bias.empty()) {
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t p = 0; p < Ho * Wo; ++p) dst[o * Ho * Wo + p] += bias[o];
        }
    }
    return out;
}

/// y = x W^T + b for x (N, in), W (out, in).
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
    require_rank(weights.shape(), 2, "linear weights");
    if (input.rank() == 0 || input.shape().back() != weights.dim(1)) {
        throw ShapeError("linear: input " + shape_str(input.shape()) + " incompatible with weights " +
                         shape_str(weights.shape()));
    }
    if (!bias.empty() && bias.size() != weights.dim(0)) throw ShapeError("linear: bias length mismatch");
    const std::size_t in = weights.dim(1), O = weights.dim(0), N = input.size() / in;
    Shape os = input.shape();
    os.back() = O;
    Tensor<T> out(os);
    ConstMatMap<T> xm(input.ptr(), N, in), wm(weights.ptr(), O, in);
    MatMap<T> ym(out.ptr(), N, O);
    ym.noalias() = xm * wm.transpose();
    if (!bias.empty())
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < O; ++o) ym(n, o) += bias[o];
    return out;
}

/// Nearest-neighbour resampling with source index floor(out * src / out_extent).
template <typename T>
Tensor<T> resample_nearest(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    require_rank(input.shape(), 4, "resample_nearest");
    if (out_h == 0 || out_w == 0) throw ShapeError("resample_nearest: output extents must be >= 1");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor<T> out({B, C, out_h, out_w});
    std::vector<std::size_t> xs(out_w);
    for (std::size_t x = 0; x < out_w; ++x) xs[x] = x * W / out_w;
    for (std::size_t n = 0; n < B * C; ++n)
        for (std::size_t y = 0; y < out_h; ++y) {
            const T* srow = input.ptr() + (n * H + y * H / out_h) * W;
            T* drow = out.ptr() + (n * out_h + y) * out_w;
            for (std::size_t x = 0; x < out_w; ++x) drow[x] = srow[xs[x]];
        }
    return out;
}

/// Bilinear resampling with half-pixel centres and edge clamping.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    require_rank(input.shape(), 4, "resize_bilinear");
    if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: output extents must be >= 1");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H == out_h && W == out_w) return input;
    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = double(in) / double(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = std::max(0.0, (double(o) + 0.5) * scale - 0.5);
            std::size_t i0 = std::min<std::size_t>(std::size_t(s), in - 1);
            std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, s - double(i0)};
        }
        return t;
    };
    const auto ty = taps(H, out_h), tx = taps(W, out_w);
    Tensor<T> out({B, C, out_h, out_w});
    for (std::size_t n = 0; n < B * C; ++n) {
        const T* plane = input.ptr() + n * H * W;
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto& b = tx[x];
                const double top = plane[a.i0 * W + b.i0] * (1 - b.f) + plane[a.i0 * W + b.i1] * b.f;
                const double bot = plane[a.i1 * W + b.i0] * (1 - b.f) + plane[a.i1 * W + b.i1] * b.f;
                out[(n * out_h + y) * out_w + x] = T(top * (1 - a.f) + bot * a.f);
            }
        }
    }
    return out;
}

/// Max over every source pixel overlapping each output cell. A nonzero
/// source pixel can never vanish, whichever direction the resampling goes.
template <typename T>
Tensor<T> resample_max(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    require_rank(input.shape(), 4, "resample_max");
    if (out_h == 0 || out_w == 0) throw ShapeError("resample_max: output extents must be >= 1");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    auto range = [](std::size_t o, std::size_t in, std::size_t out) {
        const std::size_t lo = o * in / out;
        std::size_t hi = ((o + 1) * in + out - 1) / out;  // ceil, exclusive
        return std::pair{lo, std::max(hi, lo + 1)};
    };
    Tensor<T> out({B, C, out_h, out_w});
    for (std::size_t n = 0; n < B * C; ++n) {
        const T* plane = input.ptr() + n * H * W;
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto [y0, y1] = range(y, H, out_h);
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto [x0, x1] = range(x, W, out_w);
                T m = -std::numeric_limits<T>::infinity();
                for (std::size_t sy = y0; sy < y1; ++sy)
                    for (std::size_t sx = x0; sx < x1; ++sx) m = std::max(m, plane[sy * W + sx]);
                out[(n * out_h + y) * out_w + x] = m;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
    Tensor<T> y = conv2d(x.value(), w.value(), b.value(), stride, pad);
    ensure_finite(y, "conv2d");
    return make_op<T>(std::move(y), {x, w, b}, [x, w, b, stride, pad](const Tensor<T>& gy) {
        const auto& xv = x.value();
        const auto& wv = w.value();
        const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const std::size_t O = wv.dim(0), k = wv.dim(2);
        detail::ConvGeometry g{C, H, W, k, stride, pad, gy.dim(2), gy.dim(3)};
        const std::size_t P = g.out_h * g.out_w, R = C * k * k;
        const std::size_t chunk = detail::column_chunk(R, P);
        RowMatrix<T> cols(R, chunk), gcols(R, chunk);
        RowMatrix<T> gw = RowMatrix<T>::Zero(O, R);
        Tensor<T> gx;
        if (x.requires_grad()) gx = Tensor<T>(xv.shape());
        ConstMatMap<T> wm(wv.ptr(), O, R);
        for (std::size_t bi = 0; bi < B; ++bi) {
            const T* g_ptr = gy.ptr() + bi * O * P;
            for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
                const std::size_t p1 = std::min(P, p0 + chunk), n = p1 - p0;
                Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> gm(g_ptr + p0, O, n, Eigen::OuterStride<>(P));
                if (w.requires_grad()) {
                    detail::im2col(xv.ptr() + bi * C * H * W, g, p0, p1, cols.data());
                    gw.noalias() += gm * MatMap<T>(cols.data(), R, n).transpose();
                }
                if (x.requires_grad()) {
                    MatMap<T> gc(gcols.data(), R, n);
                    gc.noalias() = wm.transpose() * gm;
                    detail::col2im_add(gcols.data(), g, p0, p1, gx.ptr() + bi * C * H * W);
                }
            }
        }
        if (x.requires_grad()) x.node()->accumulate(gx);
        if (w.requires_grad()) {
            auto& buf = w.node()->grad_buffer();
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += gw.data()[i];
        }
        if (b.requires_grad()) {
            auto& buf = b.node()->grad_buffer();
            for (std::size_t bi = 0; bi < B; ++bi)
                for (std::size_t o = 0; o < O; ++o) {
                    T s = 0;
                    for (std::size_t p = 0; p < P; ++p) s += gy[(bi * O + o) * P + p];
                    buf[o] += s;
                }
        }
    });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
    Tensor<T> y = conv_transpose2d(x.value(), w.value(), b.value(), stride, pad);
    ensure_finite(y, "conv_transpose2d");
    return make_op<T>(std::move(y), {x, w, b}, [x, w, b, stride, pad](const Tensor<T>& gy) {
        const auto& xv = x.value();
        const auto& wv = w.value();
        const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const std::size_t O = wv.dim(1), k = wv.dim(2), Ho = gy.dim(2), Wo = gy.dim(3);
        detail::ConvGeometry g{O, Ho, Wo, k, stride, pad, H, W};
        const std::size_t P = H * W, R = O * k * k;
        const std::size_t chunk = detail::column_chunk(R, P);
        RowMatrix<T> cols(R, chunk);
        RowMatrix<T> gw = RowMatrix<T>::Zero(C, R);
        Tensor<T> gx;
        if (x.requires_grad()) gx = Tensor<T>(xv.shape());
        ConstMatMap<T> wm(wv.ptr(), C, R);
        for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
                const std::size_t p1 = std::min(P, p0 + chunk), n = p1 - p0;
                detail::im2col(gy.ptr() + bi * O * Ho * Wo, g, p0, p1, cols.data());
                MatMap<T> cm(cols.data(), R, n);
                if (x.requires_grad()) {
                    Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> gxm(gx.ptr() + bi * C * P + p0, C, n,
                                                                          Eigen::OuterStride<>(P));
                    gxm.noalias() += wm * cm;
                }
                if (w.requires_grad()) {
                    Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> xm(xv.ptr() + bi * C * P + p0, C, n,
                                                                               Eigen::OuterStride<>(P));
                    gw.noalias() += xm * cm.transpose();
                }
            }
        }
        if (x.requires_grad()) x.node()->accumulate(gx);
        if (w.requires_grad()) {
            auto& buf = w.node()->grad_buffer();
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += gw.data()[i];
        }
        if (b.requires_grad()) {
            auto& buf = b.node()->grad_buffer();
            for (std::size_t bi = 0; bi < B; ++bi)
                for (std::size_t o = 0; o < O; ++o) {
                    T s = 0;
                    for (std::size_t p = 0; p < Ho * Wo; ++p) s += gy[(bi * O + o) * Ho * Wo + p];
                    buf[o] += s;
                }
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    Tensor<T> y = linear(x.value(), w.value(), b.value());
    ensure_finite(y, "linear");
    return make_op<T>(std::move(y), {x, w, b}, [x, w, b](const Tensor<T>& gy) {
        const std::size_t O = w.value().dim(0), in = w.value().dim(1), N = x.value().size() / in;
        ConstMatMap<T> gm(gy.ptr(), N, O);
        if (x.requires_grad()) {
            MatMap<T> gx(x.node()->grad_buffer().ptr(), N, in);
            gx.noalias() += gm * ConstMatMap<T>(w.value().ptr(), O, in);
        }
        if (w.requires_grad()) {
            MatMap<T> gw(w.node()->grad_buffer().ptr(), O, in);
            gw.noalias() += gm.transpose() * ConstMatMap<T>(x.value().ptr(), N, in);
        }
        if (b.requires_grad()) {
            auto& buf = b.node()->grad_buffer();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < O; ++o) buf[o] += gm(n, o);
        }
    });
}

namespace detail {

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F&& f, D&& df, const char* name) {
    Tensor<T> y(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
    ensure_finite(y, name);
    Tensor<T> yc = x.requires_grad() ? y : Tensor<T>();
    return make_op<T>(std::move(y), {x}, [x, yc = std::move(yc), df](const Tensor<T>& gy) {
        auto& g = x.node()->grad_buffer();
        const auto& xv = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * df(xv[i], yc[i]);
    });
}

}  // namespace detail

template <typename T>
Var<T> relu(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); }, "relu");
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    return detail::unary(
        x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; },
        "leaky_relu");
}

template <typename T>
T sigmoid_scalar(T v) {
    return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
    return detail::unary(
        x, [s](T v) { return s * v; }, [s](T, T) { return s; }, "scale");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    return make_op<T>(std::move(y), {a, b}, [a, b](const Tensor<T>& gy) {
        if (a.requires_grad()) a.node()->accumulate(gy);
        if (b.requires_grad()) b.node()->accumulate(gy);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
    return make_op<T>(std::move(y), {a, b}, [a, b](const Tensor<T>& gy) {
        if (a.requires_grad()) a.node()->accumulate(gy);
        if (b.requires_grad()) {
            auto& g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    return make_op<T>(std::move(y), {a, b}, [a, b](const Tensor<T>& gy) {
        if (a.requires_grad()) {
            auto& g = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * b.value()[i];
        }
        if (b.requires_grad()) {
            auto& g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * a.value()[i];
        }
    });
}

/// Concatenation along axis 1 (channels for images, features for matrices).
template <typename T>
Var<T> concat1(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat1: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.size() < 2) throw ShapeError("concat1: inputs need rank >= 2");
    const std::size_t outer = s0[0];
    const std::size_t inner = shape_size(s0) / (s0[0] * std::max<std::size_t>(s0[1], 1));
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() || s[0] != outer || shape_size(s) != outer * s[1] * inner) {
            throw ShapeError("concat1: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
        }
        widths.push_back(s[1]);
        total += s[1];
    }
    Shape os = s0;
    os[1] = total;
    Tensor<T> y(os);
    for (std::size_t n = 0; n < outer; ++n) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const T* src = parts[i].value().ptr() + n * widths[i] * inner;
            std::copy(src, src + widths[i] * inner, y.ptr() + (n * total + off) * inner);
            off += widths[i];
        }
    }
    return make_op_list<T>(std::move(y), parts, [parts, widths, outer, inner, total](const Tensor<T>& gy) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (parts[i].requires_grad()) {
                auto& g = parts[i].node()->grad_buffer();
                for (std::size_t n = 0; n < outer; ++n) {
                    const T* src = gy.ptr() + (n * total + off) * inner;
                    T* dst = g.ptr() + n * widths[i] * inner;
                    for (std::size_t j = 0; j < widths[i] * inner; ++j) dst[j] += src[j];
                }
            }
            off += widths[i];
        }
    });
}

/// Channels [c0, c1) along axis 1.
template <typename T>
Var<T> slice1(const Var<T>& x, std::size_t c0, std::size_t c1) {
    const Shape& s = x.shape();
    if (s.size() < 2 || c0 > c1 || c1 > s[1]) throw ShapeError("slice1: range out of bounds for " + shape_str(s));
    const std::size_t outer = s[0], C = s[1], inner = s[1] ? shape_size(s) / (outer * C) : 0;
    Shape os = s;
    os[1] = c1 - c0;
    Tensor<T> y(os);
    for (std::size_t n = 0; n < outer; ++n) {
        const T* src = x.value().ptr() + (n * C + c0) * inner;
        std::copy(src, src + (c1 - c0) * inner, y.ptr() + n * (c1 - c0) * inner);
    }
    return make_op<T>(std::move(y), {x}, [x, c0, c1, outer, C, inner](const Tensor<T>& gy) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t n = 0; n < outer; ++n) {
            T* dst = g.ptr() + (n * C + c0) * inner;
            const T* src = gy.ptr() + n * (c1 - c0) * inner;
            for (std::size_t j = 0; j < (c1 - c0) * inner; ++j) dst[j] += src[j];
        }
    });
}

/// Same data, new shape.
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    return make_op<T>(x.value().reshaped(std::move(shape)), {x}, [x](const Tensor<T>& gy) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    });
}

template <typename T>
Var<T> resample_nearest(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
    Tensor<T> y = resample_nearest(x.value(), out_h, out_w);
    return make_op<T>(std::move(y), {x}, [x, out_h, out_w](const Tensor<T>& gy) {
        auto& g = x.node()->grad_buffer();
        const std::size_t BC = g.dim(0) * g.dim(1), H = g.dim(2), W = g.dim(3);
        for (std::size_t n = 0; n < BC; ++n)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t xx = 0; xx < out_w; ++xx)
                    g[(n * H + y * H / out_h) * W + xx * W / out_w] += gy[(n * out_h + y) * out_w + xx];
    });
}

enum class NormKind { batch, instance, none };

/// Per-channel batch normalisation over (N, H, W). In training mode the
/// batch statistics are used and the running estimates updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    require_rank(x.shape(), 4, "batch_norm");
    const std::size_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    if (gamma.value().size() != C || beta.value().size() != C) throw ShapeError("batch_norm: parameter length mismatch");
    const std::size_t M = B * HW;
    std::vector<T> mean(C), invstd(C);
    const auto& xv = x.value();
    if (training) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0, ss = 0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t p = 0; p < HW; ++p) s += xv[(b * C + c) * HW + p];
            const double mu = s / double(M);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t p = 0; p < HW; ++p) {
                    const double d = xv[(b * C + c) * HW + p] - mu;
                    ss += d * d;
                }
            const double var = ss / double(M);
            mean[c] = T(mu);
            invstd[c] = T(1.0 / std::sqrt(var + double(eps)));
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * T(mu);
            const double unbiased = M > 1 ? ss / double(M - 1) : var;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * T(unbiased);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = running_mean[c];
            invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }
    Tensor<T> xhat(x.shape()), y(x.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = (b * C + c) * HW + p;
                xhat[i] = (xv[i] - mean[c]) * invstd[c];
                y[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
            }
    ensure_finite(y, "batch_norm");
    return make_op<T>(std::move(y), {x, gamma, beta},
                      [x, gamma, beta, xhat = std::move(xhat), invstd, training, B, C, HW, M](const Tensor<T>& gy) {
                          std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
                          for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t c = 0; c < C; ++c)
                                  for (std::size_t p = 0; p < HW; ++p) {
                                      const std::size_t i = (b * C + c) * HW + p;
                                      sum_g[c] += gy[i];
                                      sum_gx[c] += gy[i] * xhat[i];
                                  }
                          if (gamma.requires_grad()) {
                              auto& g = gamma.node()->grad_buffer();
                              for (std::size_t c = 0; c < C; ++c) g[c] += T(sum_gx[c]);
                          }
                          if (beta.requires_grad()) {
                              auto& g = beta.node()->grad_buffer();
                              for (std::size_t c = 0; c < C; ++c) g[c] += T(sum_g[c]);
                          }
                          if (!x.requires_grad()) return;
                          auto& gx = x.node()->grad_buffer();
                          for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t c = 0; c < C; ++c) {
                                  const T gam = gamma.value()[c];
                                  for (std::size_t p = 0; p < HW; ++p) {
                                      const std::size_t i = (b * C + c) * HW + p;
                                      if (training) {
                                          gx[i] += T(double(gam) * double(invstd[c]) *
                                                     (double(gy[i]) - sum_g[c] / double(M) -
                                                      double(xhat[i]) * sum_gx[c] / double(M)));
                                      } else {
                                          gx[i] += gam * invstd[c] * gy[i];
                                      }
                                  }
                              }
                      });
}

/// Per-sample, per-channel normalisation over (H, W).
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    require_rank(x.shape(), 4, "instance_norm");
    const std::size_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    if (gamma.value().size() != C || beta.value().size() != C) throw ShapeError("instance_norm: parameter length mismatch");
    const auto& xv = x.value();
    std::vector<T> invstd(B * C);
    Tensor<T> xhat(x.shape()), y(x.shape());
    for (std::size_t n = 0; n < B * C; ++n) {
        double s = 0, ss = 0;
        for (std::size_t p = 0; p < HW; ++p) s += xv[n * HW + p];
        const double mu = s / double(HW);
        for (std::size_t p = 0; p < HW; ++p) ss += (xv[n * HW + p] - mu) * (xv[n * HW + p] - mu);
        invstd[n] = T(1.0 / std::sqrt(ss / double(HW) + double(eps)));
        const std::size_t c = n % C;
        for (std::size_t p = 0; p < HW; ++p) {
            xhat[n * HW + p] = T((xv[n * HW + p] - mu) * invstd[n]);
            y[n * HW + p] = gamma.value()[c] * xhat[n * HW + p] + beta.value()[c];
        }
    }
    ensure_finite(y, "instance_norm");
    return make_op<T>(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat = std::move(xhat), invstd, B, C, HW](const Tensor<T>& gy) {
        for (std::size_t n = 0; n < B * C; ++n) {
            const std::size_t c = n % C;
            double sg = 0, sgx = 0;
            for (std::size_t p = 0; p < HW; ++p) {
                sg += gy[n * HW + p];
                sgx += gy[n * HW + p] * xhat[n * HW + p];
            }
            if (gamma.requires_grad()) gamma.node()->grad_buffer()[c] += T(sgx);
            if (beta.requires_grad()) beta.node()->grad_buffer()[c] += T(sg);
            if (x.requires_grad()) {
                auto& gx = x.node()->grad_buffer();
                const double k = double(gamma.value()[c]) * double(invstd[n]);
                for (std::size_t p = 0; p < HW; ++p)
                    gx[n * HW + p] += T(k * (gy[n * HW + p] - sg / double(HW) - xhat[n * HW + p] * sgx / double(HW)));
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and loss primitives
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
    double s = 0;
    for (T v : x.value().data()) s += v;
    return make_op<T>(Tensor<T>({1}, {T(s)}), {x}, [x](const Tensor<T>& gy) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / T(x.value().size()));
}

/// mean(|a - b|)
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "l1_loss");
    const std::size_t n = a.value().size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(double(a.value()[i]) - double(b.value()[i]));
    return make_op<T>(Tensor<T>({1}, {T(s / double(n))}), {a, b}, [a, b, n](const Tensor<T>& gy) {
        const T k = gy[0] / T(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = a.value()[i] - b.value()[i];
            const T sg = d > T(0) ? k : (d < T(0) ? -k : T(0));
            if (a.requires_grad()) a.node()->grad_buffer()[i] += sg;
            if (b.requires_grad()) b.node()->grad_buffer()[i] -= sg;
        }
    });
}

/// -mean(log p) with p = clamp(sigmoid(z), eps, 1-eps) for real targets,
/// -mean(log(1-p)) otherwise.
template <typename T>
Var<T> sigmoid_log_loss(const Var<T>& logits, bool real_target, T eps = T(1e-7)) {
    const auto& z = logits.value();
    for (T v : z.data())
        if (std::isnan(v)) throw NumericError("sigmoid_log_loss: NaN logit");
    const std::size_t n = z.size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(double(sigmoid_scalar(z[i])), double(eps), 1.0 - double(eps));
        s -= real_target ? std::log(p) : std::log(1.0 - p);
    }
    return make_op<T>(Tensor<T>({1}, {T(s / double(n))}), {logits}, [logits, real_target, eps, n](const Tensor<T>& gy) {
        auto& g = logits.node()->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const double p = double(sigmoid_scalar(logits.value()[i]));
            if (p < double(eps) || p > 1.0 - double(eps)) continue;
            g[i] += T(double(gy[0]) / double(n) * (real_target ? -(1.0 - p) : p));
        }
    });
}

/// I*(1-M) + out*M with the mask broadcast over channels. Only `out`
/// carries gradient, so pixels outside the hole receive exactly zero.
template <typename T>
Var<T> composite(const Var<T>& out, const Tensor<T>& image, const Tensor<T>& mask) {
    require_same_shape(out.shape(), image.shape(), "composite");
    require_rank(mask.shape(), 4, "composite mask");
    const std::size_t B = image.dim(0), C = image.dim(1), HW = image.dim(2) * image.dim(3);
    if (mask.dim(0) != B || mask.dim(1) != 1 || mask.dim(2) * mask.dim(3) != HW)
        throw ShapeError("composite: mask " + shape_str(mask.shape()) + " vs image " + shape_str(image.shape()));
    Tensor<T> y(image.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = (b * C + c) * HW + p;
                y[i] = mask[b * HW + p] != T(0) ? out.value()[i] : image[i];
            }
    return make_op<T>(std::move(y), {out}, [out, mask, B, C, HW](const Tensor<T>& gy) {
        auto& g = out.node()->grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < HW; ++p) {
                    const std::size_t i = (b * C + c) * HW + p;
                    if (mask[b * HW + p] != T(0)) g[i] += gy[i];
                }
    });
}

/// Writes rows of `values` (N, C) into a copy of `base` (B, C, H, W) at the given pixels.
template <typename T>
Var<T> paste_pixels(const Tensor<T>& base, const Var<T>& values, const std::vector<PixelIndex>& pixels) {
    require_rank(base.shape(), 4, "paste_pixels");
    const std::size_t C = base.dim(1), H = base.dim(2), W = base.dim(3);
    if (values.shape().size() != 2 || values.shape()[0] != pixels.size() || values.shape()[1] != C)
        throw ShapeError("paste_pixels: values " + shape_str(values.shape()) + " do not match pixel list");
    Tensor<T> y = base;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto& p = pixels[i];
        for (std::size_t c = 0; c < C; ++c) y[((p.b * C + c) * H + p.y) * W + p.x] = values.value()[i * C + c];
    }
    return make_op<T>(std::move(y), {values}, [values, pixels, C, H, W](const Tensor<T>& gy) {
        auto& g = values.node()->grad_buffer();
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            const auto& p = pixels[i];
            for (std::size_t c = 0; c < C; ++c) g[i * C + c] += gy[((p.b * C + c) * H + p.y) * W + p.x];
        }
    });
}

/// Rows of the nearest low-resolution feature for each output pixel: (N, C).
template <typename T>
Var<T> gather_patch_features(const Var<T>& features, const std::vector<PixelIndex>& pixels, std::size_t out_h,
                             std::size_t out_w) {
    require_rank(features.shape(), 4, "gather_patch_features");
    const std::size_t C = features.shape()[1], h = features.shape()[2], w = features.shape()[3];
    Tensor<T> y({pixels.size(), C});
    auto src_index = [=](const PixelIndex& p, std::size_t c) {
        return ((p.b * C + c) * h + p.y * h / out_h) * w + p.x * w / out_w;
    };
    for (std::size_t i = 0; i < pixels.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) y[i * C + c] = features.value()[src_index(pixels[i], c)];
    return make_op<T>(std::move(y), {features}, [features, pixels, C, src_index](const Tensor<T>& gy) {
        auto& g = features.node()->grad_buffer();
        for (std::size_t i = 0; i < pixels.size(); ++i)
            for (std::size_t c = 0; c < C; ++c) g[src_index(pixels[i], c)] += gy[i * C + c];
    });
}

}  // namespace coordfill
