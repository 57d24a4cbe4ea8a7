#pragma once

#include <algorithm>
#include <chrono>
#include <new>
#include <ostream>
#include <string>
#include <vector>

#include "coordfill/coord_query.hpp"
#include "coordfill/masks.hpp"
#include "coordfill/model.hpp"
#include "coordfill/synth.hpp"

namespace coordfill {

struct BenchRecord {
    std::string phase;  // paramgen, query, total, dconv
    std::size_t height = 0;
    std::size_t width = 0;
    double mask_ratio = 0;
    double wall_ms = 0;
    std::size_t decoded_pixels = 0;
    std::string status = "ok";
};

struct BenchConfig {
    std::vector<std::pair<std::size_t, std::size_t>> resolutions{{256, 256}, {512, 512}, {1024, 1024}};
    std::vector<double> mask_ratios{0.05, 0.15, 0.25};
    std::size_t repeats = 5;
    std::size_t warmups = 3;
    std::size_t workers = 1;
    bool include_dconv = false;
    std::uint64_t seed = 0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median wall time in milliseconds of `fn` over `repeats` runs after `warmups`.
template <typename F>
double time_median(F&& fn, std::size_t repeats, std::size_t warmups) {
    for (std::size_t i = 0; i < warmups; ++i) fn();
    std::vector<double> ms;
    for (std::size_t i = 0; i < std::max<std::size_t>(1, repeats); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return median(ms);
}

/// Times the query phase alone: view construction, hole coordinates,
/// MLP evaluation and paste-back.
template <typename T>
double time_query(const ParamMap<T>& map, const Tensor<T>& image, const Tensor<T>& mask, const MlpSpec& spec,
                  const QueryOptions& opts, std::size_t repeats, std::size_t warmups) {
    const std::size_t H = image.dim(1), W = image.dim(2);
    return time_median(
        [&] {
            Tensor<T> out = image;
            ParamView<T> view(map, H, W);
            auto coords = masked_coords(mask, W);
            Tensor<T> rgb = query_pixels(view, coords, spec, opts);
            detail::paste_rgb(out, coords, rgb, H, W);
        },
        repeats, warmups);
}

/// Per (resolution, ratio): paramgen (network only, input already
/// resampled), query, and the full pipeline; optionally a full-resolution
/// decode with the transposed-conv baseline. Allocation failures yield a row
/// with status "oom" and the sweep continues.
template <typename T>
std::vector<BenchRecord> run_bench(ParamGenerator<T>& gen, const BenchConfig& cfg, std::ostream* log = nullptr) {
    std::vector<BenchRecord> rows;
    const auto& g = gen.config();
    std::optional<ConvDecoder<T>> dconv;
    if (cfg.include_dconv) {
        Rng rng(cfg.seed + 99);
        const std::size_t w = ConvDecoder<T>::matched_width(g.feature_channels(), g.n_downsamples,
                                                            CoordFillModel<T>::query_head_parameters(g));
        dconv.emplace(g.feature_channels(), g.n_downsamples, w, rng);
    }
    QueryOptions opts;
    opts.workers = cfg.workers;
    for (auto [H, W] : cfg.resolutions) {
        Tensor<T> image = synth_dataset<T>(1, H, W, cfg.seed).front();
        for (double ratio : cfg.mask_ratios) {
            auto add = [&](const std::string& phase, auto&& measure, std::size_t decoded) {
                BenchRecord r{phase, H, W, ratio, 0.0, decoded, "ok"};
                try {
                    r.wall_ms = measure();
                } catch (const std::bad_alloc&) {
                    r.status = "oom";
                    r.wall_ms = 0;
                }
                if (log) *log << phase << ' ' << H << 'x' << W << " ratio " << ratio << ": " << r.wall_ms << " ms\n";
                rows.push_back(r);
            };
            try {
                Tensor<T> mask = mask_with_ratio<T>(H, W, ratio, cfg.seed + std::uint64_t(ratio * 1e6));
                MaskedImage<T> input{image, mask};
                const std::size_t holes = input.hole_count();
                Tensor<T> prepared = prepare_generator_input(image.reshaped({1, 3, H, W}), mask.reshaped({1, 1, H, W}),
                                                             g.fixed_input_res);
                add("paramgen",
                    [&] {
                        return time_median([&] { gen.generate_from_prepared(prepared, H, W); }, cfg.repeats, cfg.warmups);
                    },
                    0);
                ParamMap<T> map = gen.generate_from_prepared(prepared, H, W);
                add("query", [&] { return time_query(map, image, mask, g.mlp, opts, cfg.repeats, cfg.warmups); }, holes);
                add("total", [&] { return time_median([&] { inpaint(input, gen, opts); }, cfg.repeats, cfg.warmups); },
                    holes);
                if (dconv) {
                    NoGradGuard no_grad;
                    Var<T> feats = gen.features(Var<T>(prepared), false);
                    add("dconv", [&] { return time_median([&] { dconv->forward(feats, H, W); }, cfg.repeats, cfg.warmups); },
                        H * W);
                }
            } catch (const std::bad_alloc&) {
                rows.push_back({"total", H, W, ratio, 0.0, 0, "oom"});
            }
        }
    }
    return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& rows) {
    out << "phase,height,width,mask_ratio,wall_ms,decoded_pixels,status\n";
    for (const auto& r : rows)
        out << r.phase << ',' << r.height << ',' << r.width << ',' << r.mask_ratio << ',' << r.wall_ms << ','
            << r.decoded_pixels << ',' << r.status << '\n';
}

}  // namespace coordfill
