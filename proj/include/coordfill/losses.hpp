#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "coordfill/nn.hpp"

namespace coordfill {

/// Frozen conv stack used for the perceptual term. Tap 0 is the raw input,
/// tap k the activation after layer k.
template <typename T>
struct FeatureExtractor {
    std::vector<Conv2d<T>> layers;
    std::vector<std::size_t> taps;
    std::vector<T> tau;

    FeatureExtractor() = default;

    /// Random 4-layer stack; weights depend only on `seed`.
    static FeatureExtractor random(std::uint64_t seed, std::size_t width = 8) {
        Rng rng(seed);
        FeatureExtractor fe;
        const std::size_t ch[] = {3, width, 2 * width, 4 * width, 4 * width};
        for (std::size_t i = 0; i < 4; ++i) {
            fe.layers.emplace_back(ch[i], ch[i + 1], 3, i == 0 ? 1 : 2, 1, rng);
            fe.layers.back().weight.set_requires_grad(false);
            fe.layers.back().bias.set_requires_grad(false);
        }
        fe.taps = {1, 2, 3, 4};
        fe.tau.assign(4, T(0.25));
        return fe;
    }

    /// No layers, one tap at the input: the perceptual loss reduces to L1.
    static FeatureExtractor pixels() {
        FeatureExtractor fe;
        fe.taps = {0};
        fe.tau = {T(1)};
        return fe;
    }

    std::vector<Var<T>> features(const Var<T>& x) const {
        std::vector<Var<T>> out;
        Var<T> h = x;
        for (std::size_t k = 0; k <= layers.size(); ++k) {
            if (k > 0) h = relu(layers[k - 1](h));
            for (auto t : taps)
                if (t == k) out.push_back(h);
        }
        return out;
    }
};

/// sum_k tau_k * mean|E_k(out) - E_k(gt)|
template <typename T>
Var<T> perceptual_loss(const Var<T>& out, const Tensor<T>& gt, const FeatureExtractor<T>& fe) {
    require_same_shape(out.shape(), gt.shape(), "perceptual_loss");
    if (fe.tau.size() != fe.taps.size()) throw ConfigError("perceptual_loss: one weight per tap required");
    auto fo = fe.features(out);
    std::vector<Var<T>> fg;
    {
        NoGradGuard no_grad;
        fg = fe.features(Var<T>(gt));
    }
    Var<T> total(Tensor<T>({1}));
    for (std::size_t k = 0; k < fo.size(); ++k) total = add(total, scale(l1_loss(fo[k], fg[k].detach()), fe.tau[k]));
    return total;
}

struct DiscriminatorConfig {
    std::size_t in_ch = 3;
    std::size_t base_channels = 16;
    std::size_t n_layers = 4;
    std::size_t kernel = 4;
    std::size_t stride = 2;
};

template <typename T>
struct DiscriminatorOutput {
    Var<T> logits;
    std::vector<Var<T>> activations;  // one per hidden layer
};

/// Patch discriminator: n_layers strided convs with LeakyReLU(0.2),
/// channels base * 2^i, then a 3x3 conv to one logit per patch.
template <typename T>
struct Discriminator {
    DiscriminatorConfig cfg;
    std::vector<Conv2d<T>> layers;
    Conv2d<T> logits;

    Discriminator() = default;
    Discriminator(const DiscriminatorConfig& c, Rng& rng) : cfg(c) {
        if (c.n_layers == 0 || c.base_channels == 0 || c.kernel == 0 || c.stride == 0)
            throw ConfigError("discriminator: layer count, channels, kernel and stride must be positive");
        std::size_t ch = c.in_ch;
        for (std::size_t i = 0; i < c.n_layers; ++i) {
            layers.emplace_back(ch, c.base_channels << i, c.kernel, c.stride, (c.kernel - 1) / 2, rng);
            ch = c.base_channels << i;
        }
        logits = Conv2d<T>(ch, 1, 3, 1, 1, rng);
    }

    DiscriminatorOutput<T> operator()(const Var<T>& x) const {
        DiscriminatorOutput<T> out;
        Var<T> h = x;
        for (const auto& l : layers) {
            h = leaky_relu(l(h), T(0.2));
            out.activations.push_back(h);
        }
        out.logits = logits(h);
        return out;
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".conv" + std::to_string(i), refs);
        logits.collect(prefix + ".logits", refs);
    }
};

template <typename T>
struct AdversarialLosses {
    Var<T> g_loss;
    Var<T> d_loss;
};

/// d_loss = -E[log D(real)] - E[log(1 - D(fake))] on a detached fake;
/// g_loss = -E[log D(fake)] (non-saturating), differentiable w.r.t. fake.
template <typename T>
AdversarialLosses<T> adversarial_losses(const Discriminator<T>& D, const Var<T>& fake, const Tensor<T>& real) {
    require_same_shape(fake.shape(), real.shape(), "adversarial_losses");
    AdversarialLosses<T> out;
    out.d_loss = add(sigmoid_log_loss(D(Var<T>(real)).logits, true), sigmoid_log_loss(D(fake.detach()).logits, false));
    out.g_loss = sigmoid_log_loss(D(fake).logits, true);
    return out;
}

/// sum_i mean|D^i(gt) - D^i(out)| with the ground-truth activations held constant.
template <typename T>
Var<T> feature_matching_loss(const std::vector<Var<T>>& fake_acts, const std::vector<Var<T>>& real_acts) {
    if (fake_acts.size() != real_acts.size()) throw ShapeError("feature_matching_loss: layer count mismatch");
    Var<T> total(Tensor<T>({1}));
    for (std::size_t i = 0; i < fake_acts.size(); ++i) total = add(total, l1_loss(fake_acts[i], real_acts[i].detach()));
    return total;
}

template <typename T>
Var<T> feature_matching_loss(const Discriminator<T>& D, const Var<T>& out, const Tensor<T>& gt) {
    require_same_shape(out.shape(), gt.shape(), "feature_matching_loss");
    std::vector<Var<T>> real;
    {
        NoGradGuard no_grad;
        real = D(Var<T>(gt)).activations;
    }
    return feature_matching_loss(D(out).activations, real);
}

struct LossWeights {
    double perceptual = 10.0;
    double adversarial = 1.0;
    double feature_matching = 100.0;

    void validate() const {
        if (!(perceptual >= 0 && adversarial >= 0 && feature_matching >= 0))
            throw ConfigError("loss weights must be non-negative");
    }
};

inline double total_loss(double per, double adv, double fm, const LossWeights& w = {}) {
    return w.perceptual * per + w.adversarial * adv + w.feature_matching * fm;
}

template <typename T>
Var<T> total_loss(const Var<T>& per, const Var<T>& adv, const Var<T>& fm, const LossWeights& w = {}) {
    return add(add(scale(per, T(w.perceptual)), scale(adv, T(w.adversarial))), scale(fm, T(w.feature_matching)));
}

}  // namespace coordfill
