#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "coordfill/tensor.hpp"

namespace coordfill {

/// Free-form mask parameters. Lengths and widths are fractions of the
/// shorter image side so the same spec works at every resolution.
struct MaskSpec {
    double max_hole_ratio = 0.25;
    std::size_t strokes_min = 1;
    std::size_t strokes_max = 4;
    std::size_t vertices_min = 3;
    std::size_t vertices_max = 8;
    double stroke_width_min = 0.04;
    double stroke_width_max = 0.10;
    double segment_length_min = 0.08;
    double segment_length_max = 0.25;
    std::size_t rects_min = 0;
    std::size_t rects_max = 2;
    double rect_side_min = 0.1;
    double rect_side_max = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(max_hole_ratio >= 0.0 && max_hole_ratio <= 1.0)) throw ConfigError("mask spec: max_hole_ratio must be in [0, 1]");
        if (max_hole_ratio == 0.0 && (strokes_min > 0 || rects_min > 0))
            throw ConfigError("mask spec: a zero hole ratio cannot hold mandatory strokes or rectangles");
        if (strokes_min > strokes_max || rects_min > rects_max || vertices_min > vertices_max || vertices_min == 0)
            throw ConfigError("mask spec: inverted count range");
        if (stroke_width_min <= 0 || stroke_width_min > stroke_width_max || segment_length_min > segment_length_max ||
            rect_side_min <= 0 || rect_side_min > rect_side_max)
            throw ConfigError("mask spec: invalid size range");
    }
};

namespace detail {

// Stamps a disc of radius r at every half-pixel step along (y0,x0)-(y1,x1).
inline void draw_segment(std::vector<std::uint8_t>& m, std::size_t H, std::size_t W, double y0, double x0, double y1,
                         double x1, double r) {
    const double len = std::hypot(y1 - y0, x1 - x0);
    const std::size_t steps = std::max<std::size_t>(1, std::size_t(std::ceil(len * 2.0)));
    const int ir = int(std::ceil(r));
    for (std::size_t s = 0; s <= steps; ++s) {
        const double t = double(s) / double(steps);
        const double cy = y0 + t * (y1 - y0), cx = x0 + t * (x1 - x0);
        for (int dy = -ir; dy <= ir; ++dy)
            for (int dx = -ir; dx <= ir; ++dx) {
                const int y = int(std::lround(cy)) + dy, x = int(std::lround(cx)) + dx;
                if (y < 0 || x < 0 || y >= int(H) || x >= int(W)) continue;
                if (std::hypot(double(y) - cy, double(x) - cx) <= r) m[std::size_t(y) * W + std::size_t(x)] = 1;
            }
    }
}

inline std::vector<std::uint8_t> random_stroke(const MaskSpec& spec, std::size_t H, std::size_t W, std::mt19937_64& rng) {
    std::vector<std::uint8_t> m(H * W, 0);
    const double side = double(std::min(H, W));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto between = [&](double a, double b) { return a + (b - a) * u(rng); };
    const std::size_t nv = std::uniform_int_distribution<std::size_t>(spec.vertices_min, spec.vertices_max)(rng);
    const double r = std::max(0.5, 0.5 * side * between(spec.stroke_width_min, spec.stroke_width_max));
    double y = between(0.0, double(H - 1)), x = between(0.0, double(W - 1));
    double angle = between(0.0, 2.0 * std::numbers::pi);
    for (std::size_t v = 0; v < nv; ++v) {
        angle += between(-std::numbers::pi / 2, std::numbers::pi / 2);
        const double len = side * between(spec.segment_length_min, spec.segment_length_max);
        const double ny = std::clamp(y + len * std::sin(angle), 0.0, double(H - 1));
        const double nx = std::clamp(x + len * std::cos(angle), 0.0, double(W - 1));
        draw_segment(m, H, W, y, x, ny, nx, r);
        y = ny;
        x = nx;
    }
    return m;
}

inline std::vector<std::uint8_t> random_rect(const MaskSpec& spec, std::size_t H, std::size_t W, std::mt19937_64& rng) {
    std::vector<std::uint8_t> m(H * W, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto between = [&](double a, double b) { return a + (b - a) * u(rng); };
    const std::size_t rh = std::max<std::size_t>(1, std::size_t(double(H) * between(spec.rect_side_min, spec.rect_side_max)));
    const std::size_t rw = std::max<std::size_t>(1, std::size_t(double(W) * between(spec.rect_side_min, spec.rect_side_max)));
    const std::size_t y0 = std::size_t(u(rng) * double(H - std::min(H, rh) + 1));
    const std::size_t x0 = std::size_t(u(rng) * double(W - std::min(W, rw) + 1));
    for (std::size_t y = y0; y < std::min(H, y0 + rh); ++y)
        for (std::size_t x = x0; x < std::min(W, x0 + rw); ++x) m[y * W + x] = 1;
    return m;
}

}  // namespace detail

/// Union of random strokes and rectangles. A component is kept only if the
/// union stays within max_hole_ratio, so the bound always holds.
template <typename T = float>
Tensor<T> generate_mask(const MaskSpec& spec, std::size_t H, std::size_t W) {
    spec.validate();
    if (H == 0 || W == 0) throw ShapeError("generate_mask: empty extent");
    std::mt19937_64 rng(spec.seed);
    const std::size_t n_strokes = std::uniform_int_distribution<std::size_t>(spec.strokes_min, spec.strokes_max)(rng);
    const std::size_t n_rects = std::uniform_int_distribution<std::size_t>(spec.rects_min, spec.rects_max)(rng);
    const auto limit = std::size_t(std::floor(spec.max_hole_ratio * double(H * W)));
    std::vector<std::uint8_t> mask(H * W, 0);
    std::size_t count = 0;
    auto merge = [&](const std::vector<std::uint8_t>& part) {
        std::size_t added = 0;
        for (std::size_t i = 0; i < part.size(); ++i) added += part[i] && !mask[i];
        if (count + added > limit) return;
        for (std::size_t i = 0; i < part.size(); ++i) mask[i] |= part[i];
        count += added;
    };
    for (std::size_t s = 0; s < n_strokes; ++s) merge(detail::random_stroke(spec, H, W, rng));
    for (std::size_t r = 0; r < n_rects; ++r) merge(detail::random_rect(spec, H, W, rng));
    Tensor<T> out({1, H, W});
    for (std::size_t i = 0; i < H * W; ++i) out[i] = T(mask[i]);
    return out;
}

/// Free-form mask with exactly round(ratio * H * W) hole pixels: strokes are
/// added until the target is reached, then the surplus is trimmed from the
/// most recent stroke.
template <typename T = float>
Tensor<T> mask_with_ratio(std::size_t H, std::size_t W, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask_with_ratio: ratio must be in [0, 1]");
    const auto target = std::size_t(std::llround(ratio * double(H * W)));
    std::mt19937_64 rng(seed);
    MaskSpec spec;
    std::vector<std::uint8_t> mask(H * W, 0);
    std::size_t count = 0;
    while (count < target) {
        auto part = detail::random_stroke(spec, H, W, rng);
        std::vector<std::size_t> fresh;
        for (std::size_t i = 0; i < part.size(); ++i)
            if (part[i] && !mask[i]) fresh.push_back(i);
        for (std::size_t i : fresh) {
            if (count == target) break;
            mask[i] = 1;
            ++count;
        }
    }
    Tensor<T> out({1, H, W});
    for (std::size_t i = 0; i < H * W; ++i) out[i] = T(mask[i]);
    return out;
}

template <typename T>
double hole_ratio(const Tensor<T>& mask) {
    std::size_t n = 0;
    for (T v : mask.data()) n += v != T(0);
    return mask.empty() ? 0.0 : double(n) / double(mask.size());
}

}  // namespace coordfill
