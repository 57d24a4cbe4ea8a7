#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "coordfill/masks.hpp"
#include "coordfill/param_gen.hpp"

namespace coordfill {

/// Procedural (3, H, W) images: a two-colour linear gradient, an oriented
/// sinusoidal texture and a few flat rectangles, clamped to [0, 1].
template <typename T = float>
std::vector<Tensor<T>> synth_dataset(std::size_t n, std::size_t H, std::size_t W, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto between = [&](double a, double b) { return a + (b - a) * u(rng); };
    std::vector<Tensor<T>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double c0[3], c1[3], tex[3];
        for (int c = 0; c < 3; ++c) {
            c0[c] = between(0.0, 0.4);
            c1[c] = between(0.6, 1.0);
            if (u(rng) < 0.5) std::swap(c0[c], c1[c]);
            tex[c] = between(0.05, 0.2);
        }
        const double ga = between(0.0, 2.0 * std::numbers::pi);
        const double ta = between(0.0, std::numbers::pi);
        const double period = between(4.0, 12.0) * double(std::max(H, W)) / 32.0;
        const double phase = between(0.0, 2.0 * std::numbers::pi);
        Tensor<T> img({3, H, W});
        const double gy = std::sin(ga), gx = std::cos(ga);
        const double span = std::abs(gy) * double(H) + std::abs(gx) * double(W);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double t = (gy * (double(y) - 0.5 * double(H)) + gx * (double(x) - 0.5 * double(W))) / span + 0.5;
                t = std::clamp(t, 0.0, 1.0);
                const double s =
                    std::sin(2.0 * std::numbers::pi * (std::sin(ta) * double(y) + std::cos(ta) * double(x)) / period + phase);
                for (int c = 0; c < 3; ++c) img[(std::size_t(c) * H + y) * W + x] = T(c0[c] + t * (c1[c] - c0[c]) + tex[c] * s);
            }
        const int n_rects = std::uniform_int_distribution<int>(1, 3)(rng);
        for (int r = 0; r < n_rects; ++r) {
            const std::size_t rh = std::max<std::size_t>(1, std::size_t(between(0.1, 0.35) * double(H)));
            const std::size_t rw = std::max<std::size_t>(1, std::size_t(between(0.1, 0.35) * double(W)));
            const std::size_t y0 = std::size_t(u(rng) * double(H - rh + 1)), x0 = std::size_t(u(rng) * double(W - rw + 1));
            double col[3];
            for (auto& v : col) v = u(rng);
            for (std::size_t y = y0; y < y0 + rh; ++y)
                for (std::size_t x = x0; x < x0 + rw; ++x)
                    for (int c = 0; c < 3; ++c) img[(std::size_t(c) * H + y) * W + x] = T(col[c]);
        }
        for (auto& v : img.data()) v = std::clamp(v, T(0), T(1));
        out.push_back(std::move(img));
    }
    return out;
}

/// Images paired with free-form masks; mask i uses seed mask_seed + i.
template <typename T = float>
std::vector<MaskedImage<T>> synth_masked_dataset(std::size_t n, std::size_t H, std::size_t W, std::uint64_t seed,
                                                 MaskSpec mask_spec, std::uint64_t mask_seed) {
    auto images = synth_dataset<T>(n, H, W, seed);
    std::vector<MaskedImage<T>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask_spec.seed = mask_seed + i;
        out.push_back({std::move(images[i]), generate_mask<T>(mask_spec, H, W)});
    }
    return out;
}

}  // namespace coordfill
