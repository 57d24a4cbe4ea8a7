#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <thread>
#include <vector>

#include "coordfill/mlp.hpp"
#include "coordfill/param_gen.hpp"

namespace coordfill {

/// Output-grid coordinate; fractional values address sub-pixel positions.
struct CoordQuery {
    double y = 0;
    double x = 0;
};

struct QueryOptions {
    std::size_t workers = 1;
    // When set, receives the number of MLP scalar multiplies performed.
    std::atomic<std::uint64_t>* multiply_counter = nullptr;
};

struct PhaseTimings {
    double resample_ms = 0;
    double paramgen_ms = 0;
    double query_ms = 0;
    double total_ms = 0;
};

template <typename T>
struct InpaintResult {
    Tensor<T> image;  // (3, H, W)
    std::size_t decoded_pixels = 0;
    std::size_t selected_patches = 0;
    PhaseTimings timings;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

template <typename T>
void encode_into(double px, double py, double ex, double ey, std::size_t n_freq, T* out) {
    const double tx = px / ex, ty = py / ey;
    for (std::size_t k = 0; k < n_freq; ++k) {
        const double f = 2.0 * std::numbers::pi * double(std::size_t{1} << k);
        out[4 * k + 0] = T(std::sin(f * tx));
        out[4 * k + 1] = T(std::cos(f * tx));
        out[4 * k + 2] = T(std::sin(f * ty));
        out[4 * k + 3] = T(std::cos(f * ty));
    }
}

// Single pixel: patch lookup, encoding, MLP. Every decode path goes through here.
template <typename T>
void query_one(const ParamView<T>& view, const MlpSpec& spec, const CoordQuery& q, T* enc, T* acts, T* rgb) {
    encode_into(q.x, q.y, view.interval_x(), view.interval_y(), spec.n_freq, enc);
    mlp_forward(view.at(q.y, q.x).data(), spec, enc, acts);
    const T* out = acts + mlp_activation_size(spec) - spec.output_dim();
    for (std::size_t c = 0; c < spec.output_dim(); ++c) rgb[c] = out[c];
}

template <typename F>
void parallel_chunks(std::size_t n, std::size_t workers, F&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t step = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t a = w * step, b = std::min(n, a + step);
        if (a >= b) break;
        pool.emplace_back([&fn, a, b] { fn(a, b); });
    }
}

}  // namespace detail

/// Evaluates the query MLP at each coordinate. Results do not depend on
/// order or on how the list is split across workers.
template <typename T>
Tensor<T> query_pixels(const ParamView<T>& view, const std::vector<CoordQuery>& coords, const MlpSpec& spec,
                       const QueryOptions& opts = {}) {
    if (view.vector_length() != spec.param_count())
        throw ShapeError("query_pixels: parameter vectors of length " + std::to_string(view.vector_length()) +
                         " do not match the MLP spec (" + std::to_string(spec.param_count()) + ")");
    for (const auto& q : coords) {
        if (!(q.y >= 0.0 && q.x >= 0.0 && q.y < double(view.height()) && q.x < double(view.width())))
            throw ShapeError("query_pixels: coordinate (" + std::to_string(q.y) + ", " + std::to_string(q.x) +
                             ") outside the output grid");
    }
    const std::size_t C = spec.output_dim();
    Tensor<T> out({coords.size(), C});
    detail::parallel_chunks(coords.size(), opts.workers, [&](std::size_t a, std::size_t b) {
        std::vector<T> enc(spec.input_dim()), acts(mlp_activation_size(spec));
        for (std::size_t i = a; i < b; ++i) detail::query_one(view, spec, coords[i], enc.data(), acts.data(), out.ptr() + i * C);
        if (opts.multiply_counter) *opts.multiply_counter += std::uint64_t(b - a) * spec.multiplies_per_pixel();
    });
    return out;
}

/// Differentiable selective decode for training. grid (B, P, h, w); returns (N, 3).
template <typename T>
Var<T> decode_query(const Var<T>& grid, std::size_t H, std::size_t W, const std::vector<PixelIndex>& pixels,
                    const MlpSpec& spec) {
    require_rank(grid.shape(), 4, "decode_query");
    const std::size_t B = grid.shape()[0], P = grid.shape()[1], h = grid.shape()[2], w = grid.shape()[3];
    if (P != spec.param_count()) throw ShapeError("decode_query: grid channels do not match the MLP spec");
    if (H < h || W < w) throw ShapeError("decode_query: output smaller than the parameter grid");
    const std::size_t A = mlp_activation_size(spec), C = spec.output_dim(), D = spec.input_dim();
    const double ex = double(W) / double(w), ey = double(H) / double(h);
    // patch-major copy (B, h, w, P)
    std::vector<T> patches(B * h * w * P);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t i = 0; i < h * w; ++i) patches[(b * h * w + i) * P + p] = grid.value()[(b * P + p) * h * w + i];
    auto cell = [=](const PixelIndex& px) { return (px.b * h + px.y * h / H) * w + px.x * w / W; };

    Tensor<T> out({pixels.size(), C});
    std::vector<T> encs(pixels.size() * D), acts(pixels.size() * A);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto& px = pixels[i];
        if (px.b >= B || px.y >= H || px.x >= W) throw ShapeError("decode_query: pixel outside the output grid");
        detail::encode_into(double(px.x), double(px.y), ex, ey, spec.n_freq, encs.data() + i * D);
        mlp_forward(patches.data() + cell(px) * P, spec, encs.data() + i * D, acts.data() + i * A);
        for (std::size_t c = 0; c < C; ++c) out[i * C + c] = acts[i * A + A - C + c];
    }
    ensure_finite(out, "decode_query");
    if (!grid.requires_grad() || !grad_enabled()) return Var<T>(std::move(out));
    return make_op<T>(std::move(out), {grid},
                      [grid, pixels, spec, patches = std::move(patches), encs = std::move(encs), acts = std::move(acts),
                       cell, B, P, h, w, A, C, D](const Tensor<T>& gy) {
                          std::vector<T> gpatch(B * h * w * P, T(0)), sa, sb;
                          for (std::size_t i = 0; i < pixels.size(); ++i) {
                              const std::size_t c0 = cell(pixels[i]) * P;
                              mlp_backward(patches.data() + c0, spec, encs.data() + i * D, acts.data() + i * A,
                                           gy.ptr() + i * C, gpatch.data() + c0, sa, sb);
                          }
                          auto& g = grid.node()->grad_buffer();
                          for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t p = 0; p < P; ++p)
                                  for (std::size_t i = 0; i < h * w; ++i)
                                      g[(b * P + p) * h * w + i] += gpatch[(b * h * w + i) * P + p];
                      });
}

/// Every pixel of an (H, W) image in row-major order.
inline std::vector<CoordQuery> full_grid(std::size_t H, std::size_t W) {
    std::vector<CoordQuery> q;
    q.reserve(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) q.push_back({double(y), double(x)});
    return q;
}

/// Hole pixels of a (1, H, W) or (H, W) mask in row-major order.
template <typename T>
std::vector<CoordQuery> masked_coords(const Tensor<T>& mask, std::size_t W) {
    std::vector<CoordQuery> q;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] != T(0)) q.push_back({double(i / W), double(i % W)});
    return q;
}

/// Decodes every pixel at (H, W) from a frozen parameter map; intervals
/// follow the new resolution.
template <typename T>
Tensor<T> decode_at_resolution(const ParamMap<T>& map, std::size_t H, std::size_t W, const MlpSpec& spec,
                               const QueryOptions& opts = {}) {
    ParamView<T> view(map, H, W);
    Tensor<T> rgb = query_pixels(view, full_grid(H, W), spec, opts);
    Tensor<T> img({3, H, W});
    for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t c = 0; c < 3; ++c) img[c * H * W + p] = rgb[p * 3 + c];
    return img;
}

namespace detail {

template <typename T>
void paste_rgb(Tensor<T>& img, const std::vector<CoordQuery>& coords, const Tensor<T>& rgb, std::size_t H, std::size_t W) {
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const std::size_t p = std::size_t(coords[i].y) * W + std::size_t(coords[i].x);
        for (std::size_t c = 0; c < 3; ++c) img[c * H * W + p] = rgb[i * 3 + c];
    }
}

template <typename T>
InpaintResult<T> run_pipeline(const MaskedImage<T>& input, ParamGenerator<T>& gen, const Tensor<T>& base_image,
                              const Tensor<T>& base_mask, std::size_t H, std::size_t W, const QueryOptions& opts) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    InpaintResult<T> res;
    res.image = base_image;
    bool any = false;
    for (T v : base_mask.data()) any = any || v != T(0);
    if (!any) {
        res.timings.total_ms = elapsed_ms(t0, clock::now());
        return res;
    }
    const std::size_t H0 = input.height(), W0 = input.width();
    Tensor<T> prepared = prepare_generator_input(input.image.reshaped({1, 3, H0, W0}), input.mask.reshaped({1, 1, H0, W0}),
                                                 gen.config().fixed_input_res);
    const auto t1 = clock::now();
    ParamMap<T> map = gen.generate_from_prepared(prepared, H, W);
    const auto t2 = clock::now();
    Tensor<T> low = downsample_mask(base_mask, map.grid_h(), map.grid_w());
    res.selected_patches = select_masked_patches(map, low).size();
    ParamView<T> view(map, H, W);
    auto coords = masked_coords(base_mask, W);
    Tensor<T> rgb = query_pixels(view, coords, gen.config().mlp, opts);
    paste_rgb(res.image, coords, rgb, H, W);
    res.decoded_pixels = coords.size();
    const auto t3 = clock::now();
    res.timings = {elapsed_ms(t0, t1), elapsed_ms(t1, t2), elapsed_ms(t2, t3), elapsed_ms(t0, t3)};
    return res;
}

}  // namespace detail

/// Full pipeline: one parameter generation, queries only at hole pixels,
/// paste-back onto the input. An empty mask returns the input untouched.
template <typename T>
InpaintResult<T> inpaint(const MaskedImage<T>& input, ParamGenerator<T>& gen, const QueryOptions& opts = {}) {
    input.validate();
    return detail::run_pipeline(input, gen, input.image, input.mask, input.height(), input.width(), opts);
}

/// Inpaints at a different output resolution: the input is bilinearly
/// resized, the mask conservatively resampled, and holes decoded at the
/// new intervals.
template <typename T>
InpaintResult<T> inpaint_at_resolution(const MaskedImage<T>& input, ParamGenerator<T>& gen, std::size_t out_h,
                                       std::size_t out_w, const QueryOptions& opts = {}) {
    input.validate();
    const std::size_t H = input.height(), W = input.width();
    if (out_h == H && out_w == W) return inpaint(input, gen, opts);
    const std::size_t grid = gen.config().grid_extent();
    if (out_h < grid || out_w < grid) throw ShapeError("inpaint: output resolution smaller than the parameter grid");
    Tensor<T> img = resize_bilinear(input.image.reshaped({1, 3, H, W}), out_h, out_w).reshaped({3, out_h, out_w});
    Tensor<T> mask = resample_max(input.mask.reshaped({1, 1, H, W}), out_h, out_w).reshaped({1, out_h, out_w});
    return detail::run_pipeline(input, gen, img, mask, out_h, out_w, opts);
}

}  // namespace coordfill
