#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "coordfill/coord_query.hpp"
#include "coordfill/param_gen.hpp"

namespace coordfill {

enum class DecoderKind { pixel_query, conv, shared_mlp };

inline std::string to_string(DecoderKind k) {
    switch (k) {
        case DecoderKind::pixel_query: return "pixel_query";
        case DecoderKind::conv: return "conv";
        case DecoderKind::shared_mlp: return "shared_mlp";
    }
    return "?";
}

inline DecoderKind parse_decoder_kind(const std::string& s) {
    if (s == "pixel_query" || s == "query") return DecoderKind::pixel_query;
    if (s == "conv" || s == "d_conv") return DecoderKind::conv;
    if (s == "shared_mlp" || s == "mlp" || s == "d_mlp") return DecoderKind::shared_mlp;
    throw ConfigError("unknown decoder kind '" + s + "'");
}

inline std::string to_string(BlockKind k) { return k == BlockKind::attffc ? "attffc" : "resffc"; }

inline BlockKind parse_block_kind(const std::string& s) {
    if (s == "attffc") return BlockKind::attffc;
    if (s == "resffc") return BlockKind::resffc;
    throw ConfigError("unknown block_kind '" + s + "'");
}

inline std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::batch: return "batch";
        case NormKind::instance: return "instance";
        case NormKind::none: return "none";
    }
    return "?";
}

inline NormKind parse_norm_kind(const std::string& s) {
    if (s == "batch") return NormKind::batch;
    if (s == "instance") return NormKind::instance;
    if (s == "none") return NormKind::none;
    throw ConfigError("unknown norm '" + s + "'");
}

/// Transposed-conv decoder: (B, C, h, w) features -> (B, 3, H, W) image.
/// Stages double the extent while halving channels down to `width`, then a
/// nearest resize to (H, W), a 3x3 refine conv and a 3x3 RGB head.
template <typename T>
struct ConvDecoder {
    std::vector<ConvTranspose2d<T>> stages;
    Conv2d<T> refine;
    Conv2d<T> to_rgb;
    std::size_t width = 0;

    ConvDecoder() = default;
    ConvDecoder(std::size_t in_ch, std::size_t n_stages, std::size_t width_, Rng& rng) : width(width_) {
        std::size_t ch = in_ch;
        for (std::size_t i = n_stages; i-- > 0;) {
            const std::size_t out = width << i;
            stages.emplace_back(ch, out, 4, 2, 1, rng);
            ch = out;
        }
        refine = Conv2d<T>(ch, width, 3, 1, 1, rng);
        to_rgb = Conv2d<T>(width, 3, 3, 1, 1, rng);
    }

    static std::size_t parameter_count(std::size_t in_ch, std::size_t n_stages, std::size_t width) {
        std::size_t n = 0, ch = in_ch;
        for (std::size_t i = n_stages; i-- > 0;) {
            const std::size_t out = width << i;
            n += ch * out * 16 + out;
            ch = out;
        }
        return n + ch * width * 9 + width + width * 3 * 9 + 3;
    }

    /// Width whose parameter count is closest to `target`.
    static std::size_t matched_width(std::size_t in_ch, std::size_t n_stages, std::size_t target) {
        std::size_t best = 1;
        double best_err = 1e300;
        for (std::size_t w = 1; w <= 1024; ++w) {
            const double err = std::abs(double(parameter_count(in_ch, n_stages, w)) - double(target));
            if (err < best_err) {
                best_err = err;
                best = w;
            }
        }
        return best;
    }

    std::size_t parameter_count() const {
        ParamRefs<T> refs;
        const_cast<ConvDecoder*>(this)->collect("", refs);
        return refs.count();
    }

    Var<T> forward(const Var<T>& feats, std::size_t H, std::size_t W) const {
        Var<T> x = feats;
        for (const auto& s : stages) x = relu(s(x));
        if (x.shape()[2] != H || x.shape()[3] != W) x = resample_nearest(x, H, W);
        x = relu(refine(x));
        return sigmoid(to_rgb(x));
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(prefix + ".stage" + std::to_string(i), refs);
        refine.collect(prefix + ".refine", refs);
        to_rgb.collect(prefix + ".to_rgb", refs);
    }
};

/// One MLP shared by every pixel; input is the nearest low-resolution
/// feature concatenated with the positional encoding.
template <typename T>
struct SharedMlpDecoder {
    std::vector<Linear<T>> layers;
    std::size_t n_freq = 1;

    SharedMlpDecoder() = default;
    SharedMlpDecoder(std::size_t feat_ch, const MlpSpec& spec, Rng& rng) : n_freq(spec.n_freq) {
        std::size_t in = feat_ch + spec.input_dim();
        for (std::size_t l = 1; l < spec.layers.size(); ++l) {
            layers.emplace_back(in, spec.layers[l], rng);
            in = spec.layers[l];
        }
    }

    /// Returns (N, 3) for the listed pixels of an (H, W) output.
    Var<T> forward(const Var<T>& feats, std::size_t H, std::size_t W, const std::vector<PixelIndex>& pixels) const {
        const std::size_t h = feats.shape()[2], w = feats.shape()[3], D = 4 * n_freq;
        const double ex = double(W) / double(w), ey = double(H) / double(h);
        Tensor<T> enc({pixels.size(), D});
        for (std::size_t i = 0; i < pixels.size(); ++i)
            detail::encode_into(double(pixels[i].x), double(pixels[i].y), ex, ey, n_freq, enc.ptr() + i * D);
        Var<T> x = concat_rows(gather_patch_features(feats, pixels, H, W), Var<T>(std::move(enc)));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            x = layers[l](x);
            x = l + 1 < layers.size() ? relu(x) : sigmoid(x);
        }
        return x;
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".fc" + std::to_string(i), refs);
    }

private:
    // (N, a) ++ (N, b) -> (N, a + b)
    static Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
        const std::size_t N = a.shape()[0], A = a.shape()[1], Bc = b.shape()[1];
        Tensor<T> y({N, A + Bc});
        for (std::size_t n = 0; n < N; ++n) {
            std::copy_n(a.value().ptr() + n * A, A, y.ptr() + n * (A + Bc));
            std::copy_n(b.value().ptr() + n * Bc, Bc, y.ptr() + n * (A + Bc) + A);
        }
        return make_op<T>(std::move(y), {a, b}, [a, b, N, A, Bc](const Tensor<T>& gy) {
            if (a.requires_grad()) {
                auto& g = a.node()->grad_buffer();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t i = 0; i < A; ++i) g[n * A + i] += gy[n * (A + Bc) + i];
            }
            if (b.requires_grad()) {
                auto& g = b.node()->grad_buffer();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t i = 0; i < Bc; ++i) g[n * Bc + i] += gy[n * (A + Bc) + A + i];
            }
        });
    }
};

struct ModelConfig {
    GeneratorConfig generator;
    DecoderKind decoder = DecoderKind::pixel_query;
    std::size_t conv_decoder_width = 0;  // 0: match the pixel-query head's parameter count

    void validate() const { generator.validate(); }
};

/// Pixels (b, y, x) with a nonzero mask value, batch-major then row-major.
template <typename T>
std::vector<PixelIndex> hole_pixels(const Tensor<T>& masks) {
    require_rank(masks.shape(), 4, "hole_pixels");
    const std::size_t B = masks.dim(0), H = masks.dim(2), W = masks.dim(3);
    std::vector<PixelIndex> px;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                if (masks[(b * H + y) * W + x] != T(0)) px.push_back({uint32_t(b), uint32_t(y), uint32_t(x)});
    return px;
}

inline std::vector<PixelIndex> all_pixels(std::size_t B, std::size_t H, std::size_t W) {
    std::vector<PixelIndex> px;
    px.reserve(B * H * W);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) px.push_back({uint32_t(b), uint32_t(y), uint32_t(x)});
    return px;
}

/// Generator plus one of the three decoders.
template <typename T>
class CoordFillModel {
public:
    CoordFillModel() = default;
    CoordFillModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg), gen_(cfg.generator, rng) {
        const auto& g = cfg.generator;
        if (cfg.decoder == DecoderKind::conv) {
            if (cfg_.conv_decoder_width == 0)
                cfg_.conv_decoder_width =
                    ConvDecoder<T>::matched_width(g.feature_channels(), g.n_downsamples, query_head_parameters(g));
            conv_.emplace(g.feature_channels(), g.n_downsamples, cfg_.conv_decoder_width, rng);
        } else if (cfg.decoder == DecoderKind::shared_mlp) {
            mlp_.emplace(g.feature_channels(), g.mlp, rng);
        }
    }

    /// Parameters of the mapping head f, the pixel-query decoder's learnable part.
    static std::size_t query_head_parameters(const GeneratorConfig& g) {
        return (g.feature_channels() + (g.resolution_injection ? 2 : 0) + 1) * g.mlp.param_count();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamGenerator<T>& generator() { return gen_; }
    std::optional<ConvDecoder<T>>& conv_decoder() { return conv_; }
    std::optional<SharedMlpDecoder<T>>& mlp_decoder() { return mlp_; }

    /// Decoder output as a (B, 3, H, W) image. With `masked` the decoded
    /// values appear only inside the holes and `images` everywhere else;
    /// otherwise every pixel is decoded.
    Var<T> render(const Tensor<T>& images, const Tensor<T>& masks, bool masked, bool training) {
        require_rank(images.shape(), 4, "render");
        const std::size_t B = images.dim(0), H = images.dim(2), W = images.dim(3);
        const auto& g = cfg_.generator;
        if (cfg_.decoder == DecoderKind::pixel_query) {
            Var<T> grid = gen_.forward(images, masks, training);
            auto px = masked ? hole_pixels(masks) : all_pixels(B, H, W);
            return paste_pixels(images, decode_query(grid, H, W, px, g.mlp), px);
        }
        Var<T> feats = gen_.features(Var<T>(prepare_generator_input(images, masks, g.fixed_input_res)), training);
        if (cfg_.decoder == DecoderKind::conv) {
            Var<T> out = conv_->forward(feats, H, W);
            return masked ? composite(out, images, masks) : out;
        }
        auto px = masked ? hole_pixels(masks) : all_pixels(B, H, W);
        return paste_pixels(images, mlp_->forward(feats, H, W, px), px);
    }

    /// Inference composite: holes filled, everything else copied from `images`.
    Tensor<T> complete(const Tensor<T>& images, const Tensor<T>& masks) {
        NoGradGuard no_grad;
        return render(images, masks, true, false).value();
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        if (cfg_.decoder == DecoderKind::pixel_query) {
            gen_.collect(prefix + ".generator", refs);
            return;
        }
        // the mapping head is unused by the baseline decoders
        ParamRefs<T> all;
        gen_.collect(prefix + ".generator", all);
        const std::string head = prefix + ".generator.head";
        for (auto& e : all.params)
            if (e.name.rfind(head, 0) != 0) refs.params.push_back(e);
        for (auto& b : all.buffers) refs.buffers.push_back(b);
        if (conv_) conv_->collect(prefix + ".conv_decoder", refs);
        if (mlp_) mlp_->collect(prefix + ".mlp_decoder", refs);
    }

private:
    ModelConfig cfg_;
    ParamGenerator<T> gen_;
    std::optional<ConvDecoder<T>> conv_;
    std::optional<SharedMlpDecoder<T>> mlp_;
};

}  // namespace coordfill
