#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <type_traits>
#include <utility>

#include "coordfill/autodiff.hpp"
#include "coordfill/tensor.hpp"

namespace coordfill {

/// Half-plane spectrum of a real (B, C, H, W) signal: (B, C, H, W/2 + 1)
/// real and imaginary planes plus the original width.
template <typename T>
struct ComplexSpectrum {
    Tensor<T> re;
    Tensor<T> im;
    std::size_t height = 0;
    std::size_t width = 0;
};

namespace detail {

template <typename T>
struct FftwApi;

template <>
struct FftwApi<double> {
    using plan = fftw_plan;
    using complex = fftw_complex;
    static void* alloc(std::size_t n) { return fftw_malloc(n); }
    static void free(void* p) { fftw_free(p); }
    static plan r2c(int h, int w, double* in, complex* out) { return fftw_plan_dft_r2c_2d(h, w, in, out, FFTW_ESTIMATE); }
    static plan c2r(int h, int w, complex* in, double* out) { return fftw_plan_dft_c2r_2d(h, w, in, out, FFTW_ESTIMATE); }
    static void exec_r2c(plan p, double* in, complex* out) { fftw_execute_dft_r2c(p, in, out); }
    static void exec_c2r(plan p, complex* in, double* out) { fftw_execute_dft_c2r(p, in, out); }
};

template <>
struct FftwApi<float> {
    using plan = fftwf_plan;
    using complex = fftwf_complex;
    static void* alloc(std::size_t n) { return fftwf_malloc(n); }
    static void free(void* p) { fftwf_free(p); }
    static plan r2c(int h, int w, float* in, complex* out) { return fftwf_plan_dft_r2c_2d(h, w, in, out, FFTW_ESTIMATE); }
    static plan c2r(int h, int w, complex* in, float* out) { return fftwf_plan_dft_c2r_2d(h, w, in, out, FFTW_ESTIMATE); }
    static void exec_r2c(plan p, float* in, complex* out) { fftwf_execute_dft_r2c(p, in, out); }
    static void exec_c2r(plan p, complex* in, float* out) { fftwf_execute_dft_c2r(p, in, out); }
};

template <typename T>
class FftBuffers {
public:
    using Api = FftwApi<T>;
    FftBuffers(std::size_t h, std::size_t w)
        : real_(static_cast<T*>(Api::alloc(sizeof(T) * h * w))),
          cplx_(static_cast<typename Api::complex*>(Api::alloc(sizeof(typename Api::complex) * h * (w / 2 + 1)))) {}
    ~FftBuffers() {
        Api::free(real_);
        Api::free(cplx_);
    }
    FftBuffers(const FftBuffers&) = delete;
    FftBuffers& operator=(const FftBuffers&) = delete;
    T* real() { return real_; }
    typename Api::complex* cplx() { return cplx_; }

private:
    T* real_;
    typename Api::complex* cplx_;
};

// Plans are created once per size under a lock; execution uses the
// new-array interface so concurrent transforms on distinct buffers are safe.
template <typename T>
std::pair<typename FftwApi<T>::plan, typename FftwApi<T>::plan> fft_plans(std::size_t h, std::size_t w) {
    using Api = FftwApi<T>;
    static std::mutex mu;
    static std::map<std::pair<std::size_t, std::size_t>, std::pair<typename Api::plan, typename Api::plan>> cache;
    std::lock_guard lock(mu);
    auto it = cache.find({h, w});
    if (it != cache.end()) return it->second;
    FftBuffers<T> buf(h, w);
    auto fwd = Api::r2c(int(h), int(w), buf.real(), buf.cplx());
    auto inv = Api::c2r(int(h), int(w), buf.cplx(), buf.real());
    cache.emplace(std::pair{h, w}, std::pair{fwd, inv});
    return {fwd, inv};
}

}  // namespace detail

/// Unnormalised forward transform over the two trailing axes.
template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& input) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    require_rank(input.shape(), 4, "rfft2");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H == 0 || W == 0) throw ShapeError("rfft2: spatial extents must be >= 1");
    const std::size_t Wh = W / 2 + 1;
    ComplexSpectrum<T> out{Tensor<T>({B, C, H, Wh}), Tensor<T>({B, C, H, Wh}), H, W};
    auto [fwd, inv] = detail::fft_plans<T>(H, W);
    (void)inv;
    detail::FftBuffers<T> buf(H, W);
    for (std::size_t n = 0; n < B * C; ++n) {
        std::copy_n(input.ptr() + n * H * W, H * W, buf.real());
        detail::FftwApi<T>::exec_r2c(fwd, buf.real(), buf.cplx());
        for (std::size_t i = 0; i < H * Wh; ++i) {
            out.re[n * H * Wh + i] = buf.cplx()[i][0];
            out.im[n * H * Wh + i] = buf.cplx()[i][1];
        }
    }
    return out;
}

/// Inverse of rfft2 with the 1/(H*W) factor. Columns that must be
/// Hermitian in the row frequency (DC and, for even widths, Nyquist) are
/// projected onto their Hermitian part first, so the result is the real
/// part of the half-plane synthesis sum.
template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& spec) {
    require_rank(spec.re.shape(), 4, "irfft2");
    require_same_shape(spec.re.shape(), spec.im.shape(), "irfft2");
    const std::size_t B = spec.re.dim(0), C = spec.re.dim(1), H = spec.height, W = spec.width;
    const std::size_t Wh = W / 2 + 1;
    if (spec.re.dim(2) != H || spec.re.dim(3) != Wh) throw ShapeError("irfft2: spectrum shape does not match metadata");
    Tensor<T> out({B, C, H, W});
    auto [fwd, inv] = detail::fft_plans<T>(H, W);
    (void)fwd;
    detail::FftBuffers<T> buf(H, W);
    const T norm = T(1) / T(H * W);
    for (std::size_t n = 0; n < B * C; ++n) {
        auto* z = buf.cplx();
        for (std::size_t i = 0; i < H * Wh; ++i) {
            z[i][0] = spec.re[n * H * Wh + i];
            z[i][1] = spec.im[n * H * Wh + i];
        }
        auto hermitian_column = [&](std::size_t col) {
            for (std::size_t r = 0; r <= H / 2; ++r) {
                const std::size_t q = (H - r) % H;
                const T re = (z[r * Wh + col][0] + z[q * Wh + col][0]) / 2;
                const T im = (z[r * Wh + col][1] - z[q * Wh + col][1]) / 2;
                z[r * Wh + col][0] = re;
                z[r * Wh + col][1] = im;
                z[q * Wh + col][0] = re;
                z[q * Wh + col][1] = -im;
            }
        };
        hermitian_column(0);
        if (W % 2 == 0 && W > 1) hermitian_column(W / 2);
        detail::FftwApi<T>::exec_c2r(inv, z, buf.real());
        for (std::size_t i = 0; i < H * W; ++i) out[n * H * W + i] = buf.real()[i] * norm;
    }
    return out;
}

namespace detail {

// Multiplicity of a half-plane column in the full spectrum.
inline double column_weight(std::size_t k2, std::size_t W) {
    return (k2 == 0 || (W % 2 == 0 && k2 == W / 2)) ? 1.0 : 2.0;
}

}  // namespace detail

/// (B, C, H, W) -> (B, 2C, H, W/2+1) with channels interleaved (re_0, im_0, re_1, ...).
template <typename T>
Var<T> rfft2_stacked(const Var<T>& x) {
    auto spec = rfft2(x.value());
    const std::size_t B = spec.re.dim(0), C = spec.re.dim(1), H = spec.height, W = spec.width, Wh = W / 2 + 1;
    Tensor<T> y({B, 2 * C, H, Wh});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            std::copy_n(spec.re.ptr() + (b * C + c) * H * Wh, H * Wh, y.ptr() + (b * 2 * C + 2 * c) * H * Wh);
            std::copy_n(spec.im.ptr() + (b * C + c) * H * Wh, H * Wh, y.ptr() + (b * 2 * C + 2 * c + 1) * H * Wh);
        }
    return make_op<T>(std::move(y), {x}, [x, B, C, H, W, Wh](const Tensor<T>& gy) {
        // d/dx of sum(gRe*Re + gIm*Im) = Re(sum_half G e^{+i theta}) = H*W*irfft2(G / column_weight)
        ComplexSpectrum<T> g{Tensor<T>({B, C, H, Wh}), Tensor<T>({B, C, H, Wh}), H, W};
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t k = 0; k < Wh; ++k) {
                        const std::size_t s = ((b * C + c) * H + r) * Wh + k;
                        const T inv_w = T(1.0 / detail::column_weight(k, W));
                        g.re[s] = gy[((b * 2 * C + 2 * c) * H + r) * Wh + k] * inv_w;
                        g.im[s] = gy[((b * 2 * C + 2 * c + 1) * H + r) * Wh + k] * inv_w;
                    }
        // irfft2's Hermitian projection of the DC/Nyquist columns is exactly
        // the real-part adjoint for those columns.
        Tensor<T> gx = irfft2(g);
        const T hw = T(H * W);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= hw;
        x.node()->accumulate(gx);
    });
}

/// Inverse of rfft2_stacked back to (B, C, H, W).
template <typename T>
Var<T> irfft2_stacked(const Var<T>& z, std::size_t height, std::size_t width) {
    require_rank(z.shape(), 4, "irfft2_stacked");
    const std::size_t B = z.shape()[0], C2 = z.shape()[1], Wh = width / 2 + 1;
    if (C2 % 2 != 0 || z.shape()[2] != height || z.shape()[3] != Wh)
        throw ShapeError("irfft2_stacked: bad spectrum shape " + shape_str(z.shape()));
    const std::size_t C = C2 / 2, H = height, W = width;
    ComplexSpectrum<T> spec{Tensor<T>({B, C, H, Wh}), Tensor<T>({B, C, H, Wh}), H, W};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            std::copy_n(z.value().ptr() + (b * C2 + 2 * c) * H * Wh, H * Wh, spec.re.ptr() + (b * C + c) * H * Wh);
            std::copy_n(z.value().ptr() + (b * C2 + 2 * c + 1) * H * Wh, H * Wh, spec.im.ptr() + (b * C + c) * H * Wh);
        }
    Tensor<T> y = irfft2(spec);
    ensure_finite(y, "irfft2");
    return make_op<T>(std::move(y), {z}, [z, B, C, H, W, Wh](const Tensor<T>& gy) {
        // adjoint: (column_weight / HW) * rfft2(g)
        auto s = rfft2(gy);
        auto& g = z.node()->grad_buffer();
        const double hw = double(H * W);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t k = 0; k < Wh; ++k) {
                        const std::size_t src = ((b * C + c) * H + r) * Wh + k;
                        const T f = T(detail::column_weight(k, W) / hw);
                        g[((b * 2 * C + 2 * c) * H + r) * Wh + k] += s.re[src] * f;
                        g[((b * 2 * C + 2 * c + 1) * H + r) * Wh + k] += s.im[src] * f;
                    }
        // DC/Nyquist columns: the forward only sees their Hermitian part.
        // rfft2 of a real signal is already Hermitian there, so no projection is needed.
    });
}

}  // namespace coordfill
