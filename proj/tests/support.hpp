#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "coordfill/coordfill.hpp"

namespace cftest {

using namespace coordfill;

template <typename T = double>
Tensor<T> randn(const Shape& s, std::uint64_t seed, double sd = 1.0) {
    Rng rng(seed);
    return random_normal<T>(s, sd, rng);
}

template <typename T = double>
Tensor<T> randu(const Shape& s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    return random_uniform<T>(s, lo, hi, rng);
}

// Direct nested-loop cross-correlation.
template <typename T>
Tensor<T> conv2d_loops(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), k = w.dim(2);
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
    Tensor<T> y({B, O, Ho, Wo});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = b.empty() ? 0.0 : double(b[o]);
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const long yy = long(i * stride + u) - long(pad), xx = long(j * stride + v) - long(pad);
                                if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
                                s += double(x.at(n, c, std::size_t(yy), std::size_t(xx))) * double(w.at(o, c, u, v));
                            }
                    y.at(n, o, i, j) = T(s);
                }
    return y;
}

// O(N^2) 2-D DFT of a real (H, W) plane, bins (ky, kx) for kx <= W/2.
inline std::vector<std::complex<double>> dft2_loops(const double* x, std::size_t H, std::size_t W) {
    const std::size_t Wh = W / 2 + 1;
    std::vector<std::complex<double>> out(H * Wh);
    for (std::size_t ky = 0; ky < H; ++ky)
        for (std::size_t kx = 0; kx < Wh; ++kx) {
            std::complex<double> s = 0;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    const double a = -2.0 * std::numbers::pi * (double(ky * y) / double(H) + double(kx * xx) / double(W));
                    s += x[y * W + xx] * std::complex<double>(std::cos(a), std::sin(a));
                }
            out[ky * Wh + kx] = s;
        }
    return out;
}

// Reference MLP built from explicit matrices, independent of the flat layout code.
inline std::vector<double> mlp_reference(const std::vector<std::vector<std::vector<double>>>& W,
                                         const std::vector<std::vector<double>>& b, std::vector<double> x,
                                         bool sigmoid_out) {
    for (std::size_t l = 0; l < W.size(); ++l) {
        std::vector<double> y(W[l].size());
        for (std::size_t o = 0; o < W[l].size(); ++o) {
            double s = b[l][o];
            for (std::size_t i = 0; i < x.size(); ++i) s += W[l][o][i] * x[i];
            if (l + 1 < W.size())
                s = std::max(0.0, s);
            else if (sigmoid_out)
                s = 1.0 / (1.0 + std::exp(-s));
            y[o] = s;
        }
        x = y;
    }
    return x;
}

struct GradCheckResult {
    double max_rel = 0;
    std::size_t checked = 0;
};

// Central differences at step h on up to `per_tensor` random coordinates of
// each listed variable. Relative error is |a - n| / max(|a|, |n|, floor):
// the floor keeps coordinates whose true gradient is ~0 from dividing
// round-off by round-off.
inline GradCheckResult grad_check(const std::function<Var<double>()>& f, const std::vector<Var<double>*>& vars,
                                  std::uint64_t seed, std::size_t per_tensor = 10, double h = 1e-5,
                                  double floor = 1e-2) {
    for (auto* v : vars) v->zero_grad();
    Var<double> loss = f();
    backward(loss);
    std::vector<Tensor<double>> analytic;
    for (auto* v : vars) analytic.push_back(v->has_grad() ? v->grad() : Tensor<double>(v->shape()));
    GradCheckResult r;
    std::mt19937_64 rng(seed);
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < vars.size(); ++t) {
        auto& val = vars[t]->mutable_value();
        std::vector<std::size_t> idx(val.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(per_tensor, idx.size()));
        for (std::size_t i : idx) {
            const double orig = val[i];
            val[i] = orig + h;
            const double fp = f().item();
            val[i] = orig - h;
            const double fm = f().item();
            val[i] = orig;
            const double num = (fp - fm) / (2 * h), an = analytic[t][i];
            r.max_rel = std::max(r.max_rel, std::abs(an - num) / std::max({std::abs(an), std::abs(num), floor}));
            ++r.checked;
        }
    }
    return r;
}

// sum(y * R) for a fixed random R, so every output element gets a distinct weight.
inline Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
    return sum(mul(y, Var<double>(randn(y.shape(), seed))));
}

template <typename T>
void zero_all(ParamRefs<T>& refs) {
    for (auto& e : refs.params) e.var->mutable_value().fill(T(0));
}

}  // namespace cftest
