#include <gtest/gtest.h>

#include "support.hpp"

using namespace cftest;

TEST(Rfft2, ConstantHasOnlyDc) {
    Tensor<double> x({1, 1, 4, 6}, 2.0);
    auto s = rfft2(x);
    ASSERT_EQ(s.re.shape(), (Shape{1, 1, 4, 4}));
    EXPECT_NEAR(s.re[0], 48.0, 1e-12);
    for (std::size_t i = 1; i < s.re.size(); ++i) {
        EXPECT_NEAR(s.re[i], 0.0, 1e-12);
        EXPECT_NEAR(s.im[i], 0.0, 1e-12);
    }
}

TEST(Rfft2, MatchesDirectDft) {
    for (auto [H, W] : {std::pair<std::size_t, std::size_t>{5, 7}, {4, 8}, {3, 1}, {6, 5}}) {
        auto x = randn({2, 1, H, W}, H * 10 + W);
        auto s = rfft2(x);
        for (std::size_t n = 0; n < 2; ++n) {
            auto ref = dft2_loops(x.ptr() + n * H * W, H, W);
            const std::size_t Wh = W / 2 + 1;
            for (std::size_t i = 0; i < H * Wh; ++i) {
                EXPECT_NEAR(s.re[n * H * Wh + i], ref[i].real(), 1e-9);
                EXPECT_NEAR(s.im[n * H * Wh + i], ref[i].imag(), 1e-9);
            }
        }
    }
}

TEST(Rfft2, RoundTripAllSmallSizes) {
    for (std::size_t H = 1; H <= 16; ++H)
        for (std::size_t W = 1; W <= 16; ++W) {
            auto x = randn<float>({1, 2, H, W}, H * 100 + W);
            EXPECT_LE(max_abs_diff(irfft2(rfft2(x)), x), 1e-5f) << H << "x" << W;
        }
}

TEST(Rfft2, Parseval) {
    const std::size_t H = 6, W = 7, Wh = W / 2 + 1;
    auto x = randn({1, 1, H, W}, 3);
    auto s = rfft2(x);
    double spatial = 0, spectral = 0;
    for (double v : x.data()) spatial += v * v;
    for (std::size_t ky = 0; ky < H; ++ky)
        for (std::size_t kx = 0; kx < Wh; ++kx) {
            const double m = (kx == 0 || (W % 2 == 0 && kx == W / 2)) ? 1.0 : 2.0;
            const std::size_t i = ky * Wh + kx;
            spectral += m * (s.re[i] * s.re[i] + s.im[i] * s.im[i]);
        }
    EXPECT_NEAR(spatial, spectral / double(H * W), 1e-9);
}

TEST(Rfft2, StackedChannelsInterleave) {
    auto x = randn({1, 2, 4, 4}, 4);
    auto s = rfft2(x);
    auto z = rfft2_stacked(Var<double>(x)).value();
    ASSERT_EQ(z.shape(), (Shape{1, 4, 4, 3}));
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 12; ++i) {
            EXPECT_DOUBLE_EQ(z[(2 * c) * 12 + i], s.re[c * 12 + i]);
            EXPECT_DOUBLE_EQ(z[(2 * c + 1) * 12 + i], s.im[c * 12 + i]);
        }
    EXPECT_LE(max_abs_diff(irfft2_stacked(Var<double>(z), 4, 4).value(), x), 1e-12);
}

TEST(Rfft2, RejectsEmptyExtent) { EXPECT_THROW(rfft2(Tensor<double>({1, 1, 0, 3})), ShapeError); }

TEST(Rfft2, StackedGradients) {
    for (std::size_t W : {4, 5}) {
        auto x = Var<double>::parameter(randn({1, 2, 3, W}, 5));
        auto r = grad_check([&] { return weighted_sum(rfft2_stacked(x), 6); }, {&x}, 1, 30);
        EXPECT_LE(r.max_rel, 1e-5) << W;
        auto z = Var<double>::parameter(randn({1, 4, 3, W / 2 + 1}, 7));
        auto ri = grad_check([&] { return weighted_sum(irfft2_stacked(z, 3, W), 8); }, {&z}, 2, 30);
        EXPECT_LE(ri.max_rel, 1e-5) << W;
    }
}
