#include <gtest/gtest.h>

#include "support.hpp"

using namespace cftest;

namespace {

template <typename M>
void zero_module(M& m) {
    ParamRefs<double> refs;
    m.collect("m", refs);
    zero_all(refs);
}

double impulse_coverage(std::uint64_t seed) {
    Rng rng(seed);
    FfcBlock<double> ffc({8, 8, 0.5, 3, NormKind::none, Activation::identity, false}, rng);
    const std::size_t H = 16, W = 16;
    Tensor<double> x({1, 8, H, W});
    for (std::size_t c = 0; c < 8; ++c) x.at(0, c, 3, 5) = 1.0;
    Tensor<double> zero({1, 8, H, W});
    NoGradGuard g;
    auto y = ffc.forward(Var<double>(x), false).value();
    auto y0 = ffc.forward(Var<double>(zero), false).value();
    std::size_t hit = 0;
    for (std::size_t p = 0; p < H * W; ++p) {
        bool any = false;
        for (std::size_t c = 0; c < 8; ++c) any = any || std::abs(y[c * H * W + p] - y0[c * H * W + p]) > 1e-8;
        hit += any;
    }
    return double(hit) / double(H * W);
}

}  // namespace

TEST(Ffc, ChannelSplit) {
    Rng rng(1);
    FfcBlock<double> ffc({6, 4, 0.5, 3, NormKind::batch, Activation::relu, false}, rng);
    EXPECT_EQ(ffc.in_g, 3u);
    EXPECT_EQ(ffc.in_l, 3u);
    EXPECT_EQ(ffc.out_g, 2u);
    EXPECT_EQ(ffc.out_l, 2u);
    EXPECT_THROW(global_channels(4, 1.5), ConfigError);
}

TEST(Ffc, ZeroWeightsGiveZero) {
    Rng rng(2);
    FfcBlock<double> ffc({4, 4, 0.5, 3, NormKind::none, Activation::relu, false}, rng);
    zero_module(ffc);
    auto y = ffc.forward(Var<double>(randn({2, 4, 6, 6}, 3)), false).value();
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ffc, AlphaZeroIsLocalConvolution) {
    Rng rng(4);
    FfcBlock<double> ffc({3, 5, 0.0, 3, NormKind::none, Activation::identity, false}, rng);
    ASSERT_FALSE(ffc.g2g.has_value());
    auto x = randn({1, 3, 7, 6}, 5);
    auto y = ffc.forward(Var<double>(x), false).value();
    auto ref = conv2d_loops(x, ffc.l2l->weight.value(), ffc.l2l->bias.value(), 1, 1);
    EXPECT_LE(max_abs_diff(y, ref), 1e-12);
}

TEST(Ffc, ImpulseResponseIsGlobal) {
    for (std::uint64_t s = 0; s < 3; ++s) EXPECT_GE(impulse_coverage(s), 0.9) << s;
}

TEST(Ffc, WrongChannelCountThrows) {
    Rng rng(6);
    FfcBlock<double> ffc({4, 4, 0.5, 3, NormKind::batch, Activation::relu, false}, rng);
    EXPECT_THROW(ffc.forward(Var<double>(Tensor<double>({1, 3, 4, 4})), false), ShapeError);
}

TEST(AttFfc, ZeroWeightsAreIdentity) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(s);
        AttFfcBlock<double> blk({8, 0.5, s % 2 ? NormKind::batch : NormKind::instance}, rng);
        zero_module(blk);
        auto f = randn({2, 8, 8, 8}, 100 + s);
        EXPECT_EQ(blk.forward(Var<double>(f), s % 3 == 0).value(), f) << s;
    }
}

TEST(AttFfc, FreshBlockIsIdentity) {
    Rng rng(7);
    AttFfcBlock<double> blk({8, 0.5, NormKind::batch}, rng);
    blk.zero_init();
    auto f = randn({1, 8, 6, 6}, 8);
    EXPECT_EQ(blk.forward(Var<double>(f), true).value(), f);
}

TEST(AttFfc, MatchesComposition) {
    Rng rng(9);
    AttFfcBlock<double> blk({6, 0.5, NormKind::instance}, rng);
    auto f = Var<double>(randn({2, 6, 5, 5}, 10));
    NoGradGuard g;
    auto out = blk.forward(f, false).value();
    auto dm = sigmoid(blk.attention.forward(f, false));
    auto d = blk.noise.forward(concat1<double>({f, dm}), false).value();
    Tensor<double> cleaned = f.value();
    for (std::size_t i = 0; i < cleaned.size(); ++i) cleaned[i] -= d[i];
    auto e = blk.enhance.forward(Var<double>(cleaned), false).value();
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], cleaned[i] + e[i], 1e-6);
}

TEST(AttFfc, AttentionMapIsOpenUnitInterval) {
    Rng rng(11);
    AttFfcBlock<double> blk({6, 0.5, NormKind::batch}, rng);
    auto m = blk.attention_map(Var<double>(randn({2, 6, 6, 6}, 12, 3.0)), false).value();
    ASSERT_EQ(m.shape(), (Shape{2, 1, 6, 6}));
    for (double v : m.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(AttFfc, ChannelMismatchThrows) {
    Rng rng(13);
    AttFfcBlock<double> blk({6, 0.5, NormKind::batch}, rng);
    EXPECT_THROW(blk.forward(Var<double>(Tensor<double>({1, 5, 4, 4})), false), ShapeError);
}

TEST(ResFfc, IsResidual) {
    Rng rng(14);
    ResFfcBlock<double> blk({6, 0.5, NormKind::instance}, rng);
    auto x = Var<double>(randn({1, 6, 5, 5}, 15));
    auto y = blk.forward(x, false).value();
    auto b = blk.body.forward(x, false).value();
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], x.value()[i] + b[i], 1e-12);
}
