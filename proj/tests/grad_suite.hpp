#pragma once

#include <string>
#include <utility>
#include <vector>

#include "support.hpp"

namespace cftest {

struct GradCase {
    std::string name;
    GradCheckResult result;
};

// Toy G -> Q -> loss configuration: 8x8 images, 4x4 parameter grid.
inline GeneratorConfig toy_generator(BlockKind kind = BlockKind::attffc) {
    GeneratorConfig g;
    g.fixed_input_res = 8;
    g.n_downsamples = 1;
    g.base_channels = 4;
    g.n_blocks = 1;
    g.block_kind = kind;
    g.mlp.layers = {4, 8, 3};
    return g;
}

inline GradCheckResult end_to_end_check(DecoderKind decoder, bool masked, std::uint64_t seed) {
    ModelConfig mc;
    mc.generator = toy_generator();
    mc.decoder = decoder;
    Rng rng(seed);
    CoordFillModel<double> model(mc, rng);
    // a fresh model starts AttFFC blocks at the identity; perturb so every path carries signal
    ParamRefs<double> refs;
    model.collect("m", refs);
    Rng prng(seed + 1);
    for (auto& e : refs.params)
        for (auto& v : e.var->mutable_value().data()) v += std::normal_distribution<double>(0.0, 0.05)(prng);
    DiscriminatorConfig dc{3, 2, 2, 4, 2};
    Rng drng(seed + 2);
    Discriminator<double> D(dc, drng);
    auto fe = FeatureExtractor<double>::random(seed + 3, 2);
    auto images = randu({2, 3, 8, 8}, seed + 4);
    Tensor<double> masks({2, 1, 8, 8});
    for (std::size_t i = 0; i < masks.size(); ++i) masks[i] = (i * 7 + seed) % 3 == 0 ? 1.0 : 0.0;
    auto f = [&] {
        Var<double> out = model.render(images, masks, masked, true);
        auto adv = adversarial_losses(D, out, images);
        return total_loss(perceptual_loss(out, images, fe), adv.g_loss, feature_matching_loss(D, out, images));
    };
    std::vector<Var<double>*> vars;
    for (auto& e : refs.params) vars.push_back(e.var);
    return grad_check(f, vars, seed, 10);
}

inline std::vector<GradCase> run_grad_suite() {
    std::vector<GradCase> out;
    auto check = [&](const std::string& name, const std::function<Var<double>()>& f, std::vector<Var<double>*> vars,
                     std::uint64_t seed) { out.push_back({name, grad_check(f, vars, seed)}); };
    auto P = [](const Shape& s, std::uint64_t seed, double sd = 1.0) { return Var<double>::parameter(randn(s, seed, sd)); };

    {
        auto x = P({2, 3, 7, 7}, 1), w = P({4, 3, 3, 3}, 2, 0.3), b = P({4}, 3);
        check("conv2d", [&] { return weighted_sum(conv2d(x, w, b, 2, 1), 4); }, {&x, &w, &b}, 1);
    }
    {
        auto x = P({2, 3, 4, 4}, 5), w = P({3, 2, 4, 4}, 6, 0.3), b = P({2}, 7);
        check("conv_transpose2d", [&] { return weighted_sum(conv_transpose2d(x, w, b, 2, 1), 8); }, {&x, &w, &b}, 2);
    }
    {
        auto x = P({5, 6}, 9), w = P({4, 6}, 10), b = P({4}, 11);
        check("linear", [&] { return weighted_sum(linear(x, w, b), 12); }, {&x, &w, &b}, 3);
    }
    {
        auto x = P({2, 3, 4, 4}, 13);
        check("relu", [&] { return weighted_sum(relu(x), 14); }, {&x}, 4);
        check("leaky_relu", [&] { return weighted_sum(leaky_relu(x, 0.2), 15); }, {&x}, 5);
        check("sigmoid", [&] { return weighted_sum(sigmoid(x), 16); }, {&x}, 6);
        check("tanh", [&] { return weighted_sum(coordfill::tanh(x), 17); }, {&x}, 7);
        check("scale", [&] { return weighted_sum(scale(x, 2.5), 18); }, {&x}, 8);
        check("sum", [&] { return sum(x); }, {&x}, 9);
        check("mean", [&] { return mean(x); }, {&x}, 10);
        check("reshape", [&] { return weighted_sum(reshape(x, {6, 16}), 19); }, {&x}, 11);
        check("resample_nearest", [&] { return weighted_sum(resample_nearest(x, 7, 5), 20); }, {&x}, 12);
        check("slice1", [&] { return weighted_sum(slice1(x, 1, 3), 21); }, {&x}, 13);
    }
    {
        auto a = P({2, 3, 4, 4}, 22), b = P({2, 3, 4, 4}, 23), c = P({2, 1, 4, 4}, 24);
        check("add", [&] { return weighted_sum(add(a, b), 25); }, {&a, &b}, 14);
        check("sub", [&] { return weighted_sum(sub(a, b), 26); }, {&a, &b}, 15);
        check("mul", [&] { return weighted_sum(mul(a, b), 27); }, {&a, &b}, 16);
        check("concat1", [&] { return weighted_sum(concat1<double>({a, c}), 28); }, {&a, &c}, 17);
        check("l1_loss", [&] { return l1_loss(a, b); }, {&a, &b}, 18);
        check("sigmoid_log_loss_real", [&] { return sigmoid_log_loss(a, true); }, {&a}, 19);
        check("sigmoid_log_loss_fake", [&] { return sigmoid_log_loss(a, false); }, {&a}, 20);
    }
    {
        auto x = P({3, 4, 3, 3}, 29), g = P({4}, 30), b = P({4}, 31);
        Tensor<double> rm({4}), rv({4}, 1.0);
        check("batch_norm", [&] { return weighted_sum(batch_norm(x, g, b, rm, rv, true), 32); }, {&x, &g, &b}, 21);
        check("instance_norm", [&] { return weighted_sum(instance_norm(x, g, b), 33); }, {&x, &g, &b}, 22);
    }
    for (std::size_t W : {5, 6}) {
        auto x = P({2, 2, 4, W}, 34 + W);
        check("rfft2_stacked_w" + std::to_string(W), [&] { return weighted_sum(rfft2_stacked(x), 40 + W); }, {&x}, 23 + W);
        auto z = P({2, 4, 4, W / 2 + 1}, 50 + W);
        check("irfft2_stacked_w" + std::to_string(W), [&, W] { return weighted_sum(irfft2_stacked(z, 4, W), 60 + W); },
              {&z}, 30 + W);
    }
    {
        auto out = P({2, 3, 4, 4}, 70);
        auto img = randn({2, 3, 4, 4}, 71);
        Tensor<double> m({2, 1, 4, 4});
        for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 1;
        check("composite", [&] { return weighted_sum(composite(out, img, m), 72); }, {&out}, 40);
        auto px = hole_pixels(m);
        auto vals = P({px.size(), 3}, 73);
        check("paste_pixels", [&] { return weighted_sum(paste_pixels(img, vals, px), 74); }, {&vals}, 41);
        auto feats = P({2, 5, 2, 2}, 75);
        check("gather_patch_features", [&] { return weighted_sum(gather_patch_features(feats, px, 4, 4), 76); },
              {&feats}, 42);
    }
    {
        MlpSpec spec;
        spec.layers = {4, 8, 3};
        auto grid = P({2, spec.param_count(), 2, 2}, 77, 0.5);
        auto px = all_pixels(2, 5, 6);
        check("decode_query", [&] { return weighted_sum(decode_query(grid, 5, 6, px, spec), 78); }, {&grid}, 43);
    }
    {
        Rng rng(80);
        FfcBlock<double> ffc({4, 4, 0.5, 3, NormKind::batch, Activation::relu, false}, rng);
        auto x = P({2, 4, 6, 6}, 81);
        ParamRefs<double> refs;
        ffc.collect("ffc", refs);
        std::vector<Var<double>*> vars{&x};
        for (auto& e : refs.params) vars.push_back(e.var);
        check("ffc_forward", [&] { return weighted_sum(ffc.forward(x, true), 82); }, vars, 44);
    }
    {
        Rng rng(83);
        AttFfcBlock<double> blk({4, 0.5, NormKind::batch}, rng);
        auto x = P({2, 4, 6, 6}, 84);
        ParamRefs<double> refs;
        blk.collect("att", refs);
        std::vector<Var<double>*> vars{&x};
        for (auto& e : refs.params) vars.push_back(e.var);
        check("attffc_forward", [&] { return weighted_sum(blk.forward(x, true), 85); }, vars, 45);
    }
    {
        Rng rng(86);
        ResFfcBlock<double> blk({4, 0.5, NormKind::instance}, rng);
        auto x = P({2, 4, 6, 6}, 87);
        check("resffc_forward", [&] { return weighted_sum(blk.forward(x, true), 88); }, {&x}, 46);
    }
    out.push_back({"end_to_end_pixel_query_masked", end_to_end_check(DecoderKind::pixel_query, true, 90)});
    out.push_back({"end_to_end_pixel_query_full", end_to_end_check(DecoderKind::pixel_query, false, 91)});
    return out;
}

}  // namespace cftest
