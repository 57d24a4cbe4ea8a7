#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "coordfill/ffc.hpp"
#include "coordfill/mlp.hpp"
#include "coordfill/nn.hpp"

namespace coordfill {

/// Image (3, H, W) in [0, 1] and binary hole mask (1, H, W), 1 = hole.
template <typename T>
struct MaskedImage {
    Tensor<T> image;
    Tensor<T> mask;

    std::size_t height() const { return image.dim(1); }
    std::size_t width() const { return image.dim(2); }

    void validate() const {
        require_rank(image.shape(), 3, "masked image");
        require_rank(mask.shape(), 3, "mask");
        if (image.dim(0) != 3) throw ShapeError("masked image: expected 3 channels, got " + shape_str(image.shape()));
        if (mask.dim(0) != 1 || mask.dim(1) != image.dim(1) || mask.dim(2) != image.dim(2))
            throw ShapeError("mask " + shape_str(mask.shape()) + " does not match image " + shape_str(image.shape()));
        for (T v : mask.data())
            if (v != T(0) && v != T(1)) throw ShapeError("mask values must be 0 or 1");
        for (T v : image.data())
            if (!std::isfinite(v) || v < T(0) || v > T(1)) throw ShapeError("image values must be finite and in [0, 1]");
    }

    std::size_t hole_count() const {
        std::size_t n = 0;
        for (T v : mask.data()) n += v != T(0);
        return n;
    }
};

struct GeneratorConfig {
    std::size_t fixed_input_res = 64;
    std::size_t base_channels = 8;
    std::size_t n_downsamples = 3;
    std::size_t n_blocks = 6;
    double alpha = 0.5;
    NormKind norm = NormKind::batch;
    BlockKind block_kind = BlockKind::attffc;
    bool resolution_injection = true;
    MlpSpec mlp;

    std::size_t grid_extent() const { return fixed_input_res >> n_downsamples; }
    std::size_t feature_channels() const { return base_channels << (n_downsamples - 1); }

    void validate() const {
        if (n_downsamples == 0) throw ConfigError("generator: n_downsamples must be >= 1");
        if (fixed_input_res == 0 || n_downsamples >= 31 || fixed_input_res % (std::size_t{1} << n_downsamples) != 0)
            throw ConfigError("generator: fixed_input_res " + std::to_string(fixed_input_res) +
                              " is not divisible by 2^" + std::to_string(n_downsamples));
        if (base_channels == 0) throw ConfigError("generator: base_channels must be positive");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("generator: alpha must lie in [0, 1]");
        mlp.validate();
    }
};

/// Per-patch MLP parameter vectors, (P, h, w), conditioned on a target resolution.
template <typename T>
struct ParamMap {
    Tensor<T> grid;
    std::size_t target_h = 0;
    std::size_t target_w = 0;

    std::size_t vector_length() const { return grid.dim(0); }
    std::size_t grid_h() const { return grid.dim(1); }
    std::size_t grid_w() const { return grid.dim(2); }
};

/// Resolution code fed to the mapping head: (log2(H/F), log2(W/F)).
inline std::pair<double, double> resolution_code(std::size_t H, std::size_t W, std::size_t fixed_res) {
    return {std::log2(double(H) / double(fixed_res)), std::log2(double(W) / double(fixed_res))};
}

/// Conservative low-resolution mask: a cell is a hole if any pixel it covers is.
template <typename T>
Tensor<T> downsample_mask(const Tensor<T>& mask, std::size_t h, std::size_t w) {
    const Shape s = mask.shape();
    if (s.size() == 3) return resample_max(mask.reshaped({1, s[0], s[1], s[2]}), h, w).reshaped({s[0], h, w});
    return resample_max(mask, h, w);
}

/// Network input at the fixed resolution: concat(I*(1-M), M), (B, 4, F, F).
/// images (B, 3, H, W), masks (B, 1, H, W).
template <typename T>
Tensor<T> prepare_generator_input(const Tensor<T>& images, const Tensor<T>& masks, std::size_t fixed_res) {
    require_rank(images.shape(), 4, "generator input");
    const std::size_t B = images.dim(0), H = images.dim(2), W = images.dim(3);
    Tensor<T> masked = images;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < H * W; ++p)
                if (masks[b * H * W + p] != T(0)) masked[(b * 3 + c) * H * W + p] = T(0);
    Tensor<T> img = resize_bilinear(masked, fixed_res, fixed_res);
    Tensor<T> m = resample_max(masks, fixed_res, fixed_res);
    const std::size_t F2 = fixed_res * fixed_res;
    Tensor<T> out({B, 4, fixed_res, fixed_res});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < F2; ++p)
                out[(b * 4 + c) * F2 + p] = m[b * F2 + p] != T(0) ? T(0) : img[(b * 3 + c) * F2 + p];
        std::copy_n(m.ptr() + b * F2, F2, out.ptr() + (b * 4 + 3) * F2);
    }
    return out;
}

/// Encoder (three stride-2 convs) -> FFC bottleneck -> per-location linear
/// map f(concat(feature, r)) to MLP parameter vectors.
template <typename T>
class ParamGenerator {
public:
    ParamGenerator() = default;
    ParamGenerator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        std::size_t ch = 4;
        for (std::size_t i = 0; i < cfg.n_downsamples; ++i) {
            const std::size_t out = cfg.base_channels << i;
            encoder_.emplace_back(ch, out, 3, 2, 1, rng);
            ch = out;
        }
        BlockConfig bc{ch, cfg.alpha, cfg.norm};
        for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
            if (cfg.block_kind == BlockKind::attffc) {
                AttFfcBlock<T> blk(bc, rng);
                blk.zero_init();
                blocks_.emplace_back(std::move(blk));
            } else {
                blocks_.emplace_back(ResFfcBlock<T>(bc, rng));
            }
        }
        const std::size_t head_in = ch + (cfg.resolution_injection ? 2 : 0);
        head_ = Conv2d<T>(head_in, cfg.mlp.param_count(), 1, 1, 0, rng);
        // Rows emitting MLP layer l's weights are scaled by 1/sqrt(fan_in_l)
        // so freshly generated MLPs neither explode nor vanish.
        auto& hw = head_.weight.mutable_value();
        std::size_t row = 0;
        const auto& layers = cfg.mlp.layers;
        for (std::size_t l = 1; l < layers.size(); ++l) {
            const T wscale = T(1.0 / std::sqrt(double(layers[l - 1])));
            const T bscale = T(0.1);
            for (std::size_t r = 0; r < layers[l - 1] * layers[l] + layers[l]; ++r, ++row) {
                const T s = r < layers[l - 1] * layers[l] ? wscale : bscale;
                for (std::size_t c = 0; c < head_in; ++c) hw[row * head_in + c] *= s;
            }
        }
    }

    const GeneratorConfig& config() const { return cfg_; }
    const Conv2d<T>& head() const { return head_; }
    Conv2d<T>& head() { return head_; }
    std::vector<Conv2d<T>>& encoder() { return encoder_; }
    std::vector<BottleneckBlock<T>>& blocks() { return blocks_; }

    /// (B, 4, F, F) -> (B, C, h, w)
    Var<T> features(const Var<T>& input, bool training) {
        const auto& s = input.shape();
        if (s.size() != 4 || s[1] != 4 || s[2] != cfg_.fixed_input_res || s[3] != cfg_.fixed_input_res)
            throw ShapeError("generator: expected input (B, 4, " + std::to_string(cfg_.fixed_input_res) + ", " +
                             std::to_string(cfg_.fixed_input_res) + "), got " + shape_str(s));
        Var<T> x = input;
        for (auto& conv : encoder_) x = relu(conv(x));
        for (auto& blk : blocks_) x = std::visit([&](auto& b) { return b.forward(x, training); }, blk);
        return x;
    }

    /// (B, C, h, w) features and one resolution code per sample -> (B, P, h, w).
    Var<T> map_parameters(const Var<T>& feats, const std::vector<std::pair<double, double>>& rcodes) {
        if (!cfg_.resolution_injection) return head_(feats);
        const std::size_t B = feats.shape()[0], h = feats.shape()[2], w = feats.shape()[3];
        if (rcodes.size() != B) throw ShapeError("generator: one resolution code per sample required");
        Tensor<T> r({B, 2, h, w});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < h * w; ++p) {
                r[(b * 2) * h * w + p] = T(rcodes[b].first);
                r[(b * 2 + 1) * h * w + p] = T(rcodes[b].second);
            }
        return head_(concat1<T>({feats, Var<T>(std::move(r))}));
    }

    /// Batched forward for images (B, 3, H, W) and masks (B, 1, H, W).
    Var<T> forward(const Tensor<T>& images, const Tensor<T>& masks, bool training) {
        const std::size_t B = images.dim(0), H = images.dim(2), W = images.dim(3);
        Var<T> in(prepare_generator_input(images, masks, cfg_.fixed_input_res));
        std::vector<std::pair<double, double>> r(B, resolution_code(H, W, cfg_.fixed_input_res));
        return map_parameters(features(in, training), r);
    }

    /// Inference: ParamMap conditioned on (target_h, target_w), defaulting to the input size.
    ParamMap<T> generate(const MaskedImage<T>& input, std::size_t target_h = 0, std::size_t target_w = 0) {
        input.validate();
        const std::size_t H = input.height(), W = input.width();
        Tensor<T> imgs = input.image.reshaped({1, 3, H, W});
        Tensor<T> masks = input.mask.reshaped({1, 1, H, W});
        Var<T> in(prepare_generator_input(imgs, masks, cfg_.fixed_input_res));
        return generate_from_prepared(in.value(), target_h ? target_h : H, target_w ? target_w : W);
    }

    /// Network forward on an already resampled (1, 4, F, F) input.
    ParamMap<T> generate_from_prepared(const Tensor<T>& prepared, std::size_t target_h, std::size_t target_w) {
        NoGradGuard no_grad;
        Var<T> grid = map_parameters(features(Var<T>(prepared), false),
                                     {resolution_code(target_h, target_w, cfg_.fixed_input_res)});
        const auto& s = grid.shape();
        return ParamMap<T>{grid.value().reshaped({s[1], s[2], s[3]}), target_h, target_w};
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect(prefix + ".encoder" + std::to_string(i), refs);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            std::visit([&](auto& b) { b.collect(prefix + ".block" + std::to_string(i), refs); }, blocks_[i]);
        head_.collect(prefix + ".head", refs);
    }

private:
    GeneratorConfig cfg_;
    std::vector<Conv2d<T>> encoder_;
    std::vector<BottleneckBlock<T>> blocks_;
    Conv2d<T> head_;
};

template <typename T>
struct SelectedPatch {
    std::size_t index = 0;  // row-major cell index y * w + x
    std::vector<T> params;
};

/// Parameter vectors of the cells marked in the low-resolution mask (h, w).
template <typename T>
std::vector<SelectedPatch<T>> select_masked_patches(const ParamMap<T>& map, const Tensor<T>& mask_lowres) {
    const std::size_t h = map.grid_h(), w = map.grid_w(), P = map.vector_length();
    if (mask_lowres.size() != h * w)
        throw ShapeError("select_masked_patches: mask " + shape_str(mask_lowres.shape()) + " does not match grid");
    std::vector<SelectedPatch<T>> out;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (mask_lowres[i] == T(0)) continue;
        SelectedPatch<T> s{i, std::vector<T>(P)};
        for (std::size_t p = 0; p < P; ++p) s.params[p] = map.grid[p * h * w + i];
        out.push_back(std::move(s));
    }
    return out;
}

/// Nearest-neighbour view of a ParamMap at output resolution (H, W). Only the
/// h*w patch vectors are stored (patch-major); pixel (y, x) reads patch
/// (floor(y*h/H), floor(x*w/W)).
template <typename T>
class ParamView {
public:
    ParamView(const ParamMap<T>& map, std::size_t H, std::size_t W)
        : h_(map.grid_h()), w_(map.grid_w()), P_(map.vector_length()), H_(H), W_(W), patches_(h_ * w_ * P_) {
        if (H < h_ || W < w_)
            throw ShapeError("upsample_parameters: output " + std::to_string(H) + "x" + std::to_string(W) +
                             " is smaller than the parameter grid " + std::to_string(h_) + "x" + std::to_string(w_));
        for (std::size_t p = 0; p < P_; ++p)
            for (std::size_t i = 0; i < h_ * w_; ++i) patches_[i * P_ + p] = map.grid[p * h_ * w_ + i];
    }

    std::size_t height() const { return H_; }
    std::size_t width() const { return W_; }
    std::size_t grid_h() const { return h_; }
    std::size_t grid_w() const { return w_; }
    std::size_t vector_length() const { return P_; }
    double interval_x() const { return double(W_) / double(w_); }
    double interval_y() const { return double(H_) / double(h_); }

    std::pair<std::size_t, std::size_t> patch_of(double y, double x) const {
        const auto py = std::min<std::size_t>(h_ - 1, std::size_t(std::floor(y * double(h_) / double(H_))));
        const auto px = std::min<std::size_t>(w_ - 1, std::size_t(std::floor(x * double(w_) / double(W_))));
        return {py, px};
    }

    std::span<const T> patch(std::size_t py, std::size_t px) const {
        return {patches_.data() + (py * w_ + px) * P_, P_};
    }

    std::span<const T> at(double y, double x) const {
        auto [py, px] = patch_of(y, x);
        return patch(py, px);
    }

private:
    std::size_t h_, w_, P_, H_, W_;
    std::vector<T> patches_;
};

template <typename T>
ParamView<T> upsample_parameters(const ParamMap<T>& map, std::size_t H, std::size_t W) {
    return ParamView<T>(map, H, W);
}

}  // namespace coordfill
