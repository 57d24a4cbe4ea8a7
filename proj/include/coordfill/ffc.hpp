#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <variant>

#include "coordfill/fft.hpp"
#include "coordfill/nn.hpp"

namespace coordfill {

enum class Activation { relu, identity };

struct FfcConfig {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    double alpha = 0.5;  // fraction of channels on the spectral (global) path
    std::size_t kernel = 3;
    NormKind norm = NormKind::batch;
    Activation activation = Activation::relu;
    // When set, the block runs in_ch -> in_ch and finishes with a 1x1
    // projection to out_ch (no norm, no activation).
    bool project = false;
};

inline std::size_t global_channels(std::size_t ch, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("ffc: alpha must lie in [0, 1]");
    return static_cast<std::size_t>(std::lround(alpha * double(ch)));
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation a) {
    return a == Activation::relu ? relu(x) : x;
}

/// Spectral path: 1x1 reduce, Fourier unit (1x1 conv on stacked real/imag
/// planes of the rfft2), residual sum, 1x1 expand.
template <typename T>
struct SpectralTransform {
    Conv2d<T> reduce;
    Norm<T> reduce_norm;
    Conv2d<T> fourier_conv;
    Norm<T> fourier_norm;
    Conv2d<T> expand;

    SpectralTransform() = default;
    SpectralTransform(std::size_t in_ch, std::size_t out_ch, NormKind norm, Rng& rng) {
        const std::size_t hidden = std::max<std::size_t>(1, out_ch / 2);
        reduce = Conv2d<T>(in_ch, hidden, 1, 1, 0, rng);
        reduce_norm = Norm<T>(hidden, norm);
        fourier_conv = Conv2d<T>(2 * hidden, 2 * hidden, 1, 1, 0, rng);
        fourier_norm = Norm<T>(2 * hidden, norm);
        expand = Conv2d<T>(hidden, out_ch, 1, 1, 0, rng);
    }

    Var<T> forward(const Var<T>& x, bool training) {
        Var<T> h = relu(reduce_norm.forward(reduce(x), training));
        const std::size_t H = h.shape()[2], W = h.shape()[3];
        Var<T> spec = rfft2_stacked(h);
        spec = relu(fourier_norm.forward(fourier_conv(spec), training));
        Var<T> fu = irfft2_stacked(spec, H, W);
        return expand(add(h, fu));
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        reduce.collect(prefix + ".reduce", refs);
        reduce_norm.collect(prefix + ".reduce_norm", refs);
        fourier_conv.collect(prefix + ".fourier_conv", refs);
        fourier_norm.collect(prefix + ".fourier_norm", refs);
        expand.collect(prefix + ".expand", refs);
    }
};

/// Fast Fourier Convolution. Channels [0, local) form the local path and
/// [local, ch) the global path; local->local, local->global and
/// global->local are k x k convolutions, global->global is spectral.
template <typename T>
struct FfcBlock {
    FfcConfig cfg;
    std::size_t in_l = 0, in_g = 0, out_l = 0, out_g = 0;
    std::optional<Conv2d<T>> l2l, l2g, g2l;
    std::optional<SpectralTransform<T>> g2g;
    Norm<T> norm_l, norm_g;
    std::optional<Conv2d<T>> projection;

    FfcBlock() = default;
    FfcBlock(const FfcConfig& c, Rng& rng) : cfg(c) {
        if (c.in_ch == 0 || c.out_ch == 0) throw ConfigError("ffc: channel counts must be positive");
        const std::size_t body_out = c.project ? c.in_ch : c.out_ch;
        in_g = global_channels(c.in_ch, c.alpha);
        out_g = global_channels(body_out, c.alpha);
        in_l = c.in_ch - in_g;
        out_l = body_out - out_g;
        const std::size_t k = c.kernel, pad = k / 2;
        if (in_l && out_l) l2l.emplace(in_l, out_l, k, 1, pad, rng);
        if (in_l && out_g) l2g.emplace(in_l, out_g, k, 1, pad, rng);
        if (in_g && out_l) g2l.emplace(in_g, out_l, k, 1, pad, rng);
        if (in_g && out_g) g2g.emplace(in_g, out_g, c.norm, rng);
        if (out_l) norm_l = Norm<T>(out_l, c.norm);
        if (out_g) norm_g = Norm<T>(out_g, c.norm);
        if (c.project) projection.emplace(body_out, c.out_ch, 1, 1, 0, rng);
    }

    Var<T> forward(const Var<T>& x, bool training) {
        require_rank(x.shape(), 4, "ffc_forward");
        if (x.shape()[1] != cfg.in_ch) {
            throw ShapeError("ffc_forward: expected " + std::to_string(cfg.in_ch) + " input channels, got " +
                             std::to_string(x.shape()[1]));
        }
        std::optional<Var<T>> xl, xg;
        if (in_l) xl = in_g ? slice1(x, 0, in_l) : x;
        if (in_g) xg = in_l ? slice1(x, in_l, cfg.in_ch) : x;

        auto accumulate = [](std::optional<Var<T>>& acc, Var<T> term) { acc = acc ? add(*acc, term) : term; };
        std::vector<Var<T>> parts;
        if (out_l) {
            std::optional<Var<T>> s;
            if (l2l) accumulate(s, (*l2l)(*xl));
            if (g2l) accumulate(s, (*g2l)(*xg));
            parts.push_back(activate(norm_l.forward(*s, training), cfg.activation));
        }
        if (out_g) {
            std::optional<Var<T>> s;
            if (l2g) accumulate(s, (*l2g)(*xl));
            if (g2g) accumulate(s, g2g->forward(*xg, training));
            parts.push_back(activate(norm_g.forward(*s, training), cfg.activation));
        }
        Var<T> y = parts.size() == 1 ? parts[0] : concat1(parts);
        return projection ? (*projection)(y) : y;
    }

    /// Makes the block output exactly zero while keeping gradients alive
    /// (zero affine scale; zero output convolutions when unnormalised).
    void zero_init_output() {
        if (projection) {
            projection->zero();
            return;
        }
        if (cfg.norm != NormKind::none) {
            if (out_l) norm_l.gamma.mutable_value().fill(T(0));
            if (out_g) norm_g.gamma.mutable_value().fill(T(0));
            return;
        }
        if (l2l) l2l->zero();
        if (g2l) g2l->zero();
        if (l2g) l2g->zero();
        if (g2g) g2g->expand.zero();
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        if (l2l) l2l->collect(prefix + ".l2l", refs);
        if (l2g) l2g->collect(prefix + ".l2g", refs);
        if (g2l) g2l->collect(prefix + ".g2l", refs);
        if (g2g) g2g->collect(prefix + ".g2g", refs);
        if (out_l) norm_l.collect(prefix + ".norm_l", refs);
        if (out_g) norm_g.collect(prefix + ".norm_g", refs);
        if (projection) projection->collect(prefix + ".projection", refs);
    }
};

struct BlockConfig {
    std::size_t channels = 0;
    double alpha = 0.5;
    NormKind norm = NormKind::batch;
};

/// Attention-gated FFC block:
///   attention = sigmoid(FFC_1(F))              one channel
///   noise     = FFC_2(concat(F, attention))
///   F'        = (F - noise) + FFC_3(F - noise)
template <typename T>
struct AttFfcBlock {
    FfcBlock<T> attention;
    FfcBlock<T> noise;
    FfcBlock<T> enhance;

    AttFfcBlock() = default;
    AttFfcBlock(const BlockConfig& c, Rng& rng)
        : attention({c.channels, 1, c.alpha, 3, c.norm, Activation::relu, true}, rng),
          noise({c.channels + 1, c.channels, c.alpha, 3, c.norm, Activation::identity, false}, rng),
          enhance({c.channels, c.channels, c.alpha, 3, c.norm, Activation::identity, false}, rng) {}

    std::size_t channels() const { return enhance.cfg.in_ch; }

    Var<T> attention_map(const Var<T>& f, bool training) { return sigmoid(attention.forward(f, training)); }

    Var<T> forward(const Var<T>& f, bool training) {
        if (f.shape().size() != 4 || f.shape()[1] != channels()) {
            throw ShapeError("attffc_forward: expected " + std::to_string(channels()) + " channels, got " +
                             shape_str(f.shape()));
        }
        Var<T> dm = attention_map(f, training);
        Var<T> d = noise.forward(concat1<T>({f, dm}), training);
        Var<T> cleaned = sub(f, d);
        return add(cleaned, enhance.forward(cleaned, training));
    }

    void zero_init() {
        noise.zero_init_output();
        enhance.zero_init_output();
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        attention.collect(prefix + ".attention", refs);
        noise.collect(prefix + ".noise", refs);
        enhance.collect(prefix + ".enhance", refs);
    }
};

/// Residual FFC: x + FFC(x).
template <typename T>
struct ResFfcBlock {
    FfcBlock<T> body;

    ResFfcBlock() = default;
    ResFfcBlock(const BlockConfig& c, Rng& rng)
        : body({c.channels, c.channels, c.alpha, 3, c.norm, Activation::relu, false}, rng) {}

    Var<T> forward(const Var<T>& x, bool training) {
        if (x.shape().size() != 4 || x.shape()[1] != body.cfg.in_ch)
            throw ShapeError("resffc_forward: channel mismatch, got " + shape_str(x.shape()));
        return add(x, body.forward(x, training));
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) { body.collect(prefix + ".body", refs); }
};

enum class BlockKind { attffc, resffc };

template <typename T>
using BottleneckBlock = std::variant<AttFfcBlock<T>, ResFfcBlock<T>>;

}  // namespace coordfill
