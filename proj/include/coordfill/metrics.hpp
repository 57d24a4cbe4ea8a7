#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "coordfill/losses.hpp"
#include "coordfill/tensor.hpp"

namespace coordfill {

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

/// PSNR for images in [0, 1]; +inf for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return psnr_from_mse(s / double(a.size()));
}

/// PSNR over hole pixels only. a, b (C, H, W); mask (1, H, W).
/// +inf when the mask is empty.
template <typename T>
double psnr_masked(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask) {
    require_same_shape(a.shape(), b.shape(), "psnr_masked");
    const std::size_t C = a.dim(0), HW = a.size() / C;
    if (mask.size() != HW) throw ShapeError("psnr_masked: mask does not match image");
    double s = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < HW; ++p) {
        if (mask[p] == T(0)) continue;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = double(a[c * HW + p]) - double(b[c * HW + p]);
            s += d * d;
        }
        n += C;
    }
    return n ? psnr_from_mse(s / double(n)) : std::numeric_limits<double>::infinity();
}

inline double capped_psnr(double v) { return std::min(v, kPsnrCap); }

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> g(size);
    const double c = double(size - 1) / 2.0;
    double s = 0;
    for (std::size_t i = 0; i < size; ++i) s += g[i] = std::exp(-(double(i) - c) * (double(i) - c) / (2 * sigma * sigma));
    for (auto& v : g) v /= s;
    return g;
}

// SSIM map over every valid window position of one channel.
template <typename T>
std::vector<double> ssim_map(const T* a, const T* b, std::size_t H, std::size_t W, std::size_t win, std::size_t& oh,
                             std::size_t& ow) {
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto g = gaussian_window(win, 1.5);
    oh = H - win + 1;
    ow = W - win + 1;
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t i = 0; i < win; ++i)
                for (std::size_t j = 0; j < win; ++j) {
                    const double w = g[i] * g[j];
                    const double va = a[(y + i) * W + x + j], vb = b[(y + i) * W + x + j];
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            out[y * ow + x] = ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    return out;
}

inline std::size_t ssim_window(std::size_t H, std::size_t W) {
    std::size_t win = std::min<std::size_t>({11, H, W});
    if (win % 2 == 0) --win;
    return std::max<std::size_t>(win, 1);
}

}  // namespace detail

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over valid windows and channels. Images smaller
/// than the window use the largest odd window that fits.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    require_rank(a.shape(), 3, "ssim");
    const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2), win = detail::ssim_window(H, W);
    double total = 0;
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t oh, ow;
        auto m = detail::ssim_map(a.ptr() + c * H * W, b.ptr() + c * H * W, H, W, win, oh, ow);
        double s = 0;
        for (double v : m) s += v;
        total += s / double(m.size());
    }
    return total / double(C);
}

/// SSIM averaged over windows centred on hole pixels; falls back to all
/// windows when no valid window is centred in the hole.
template <typename T>
double ssim_masked(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask) {
    require_same_shape(a.shape(), b.shape(), "ssim_masked");
    require_rank(a.shape(), 3, "ssim_masked");
    const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2), win = detail::ssim_window(H, W), r = win / 2;
    if (mask.size() != H * W) throw ShapeError("ssim_masked: mask does not match image");
    double total = 0;
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t oh, ow;
        auto m = detail::ssim_map(a.ptr() + c * H * W, b.ptr() + c * H * W, H, W, win, oh, ow);
        double s = 0, all = 0;
        std::size_t n = 0;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                all += m[y * ow + x];
                if (mask[(y + r) * W + x + r] != T(0)) {
                    s += m[y * ow + x];
                    ++n;
                }
            }
        total += n ? s / double(n) : all / double(m.size());
    }
    return total / double(C);
}

/// Feature-space L1 under a fixed extractor. Not comparable to LPIPS.
template <typename T>
double proxy_perceptual(const Tensor<T>& a, const Tensor<T>& b, const FeatureExtractor<T>& fe) {
    NoGradGuard no_grad;
    const Shape s4{1, a.dim(0), a.dim(1), a.dim(2)};
    return double(perceptual_loss(Var<T>(a.reshaped(s4)), b.reshaped(s4), fe).item());
}

struct MetricReport {
    double psnr = 0;
    double ssim = 0;
    double masked_psnr = 0;
    double masked_ssim = 0;
};

template <typename T>
MetricReport evaluate_pair(const Tensor<T>& out, const Tensor<T>& gt, const Tensor<T>& mask) {
    return {psnr(out, gt), ssim(out, gt), psnr_masked(out, gt, mask), ssim_masked(out, gt, mask)};
}

}  // namespace coordfill
