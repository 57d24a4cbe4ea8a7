#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "coordfill/autodiff.hpp"
#include "coordfill/ops.hpp"

namespace coordfill {

/// Named references into a module tree: learnable parameters and
/// non-learnable buffers (running statistics). Used by optimisers and
/// checkpoints.
template <typename T>
struct ParamRefs {
    struct Entry {
        std::string name;
        Var<T>* var;
    };
    struct Buffer {
        std::string name;
        Tensor<T>* tensor;
    };
    std::vector<Entry> params;
    std::vector<Buffer> buffers;

    void add(const std::string& name, Var<T>& v) { params.push_back({name, &v}); }
    void add_buffer(const std::string& name, Tensor<T>& t) { buffers.push_back({name, &t}); }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : params) n += e.var->value().size();
        return n;
    }
};

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> random_normal(const Shape& shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = T(dist(rng));
    return t;
}

template <typename T>
Tensor<T> random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = T(dist(rng));
    return t;
}

/// Square-kernel 2-D convolution with He-normal initialisation.
template <typename T>
struct Conv2d {
    Var<T> weight;
    Var<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv2d() = default;
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride_, std::size_t pad, Rng& rng,
           bool with_bias = true)
        : stride(stride_), padding(pad) {
        const double fan_in = double(in_ch * k * k);
        weight = Var<T>::parameter(random_normal<T>({out_ch, in_ch, k, k}, std::sqrt(2.0 / std::max(fan_in, 1.0)), rng));
        bias = with_bias ? Var<T>::parameter(Tensor<T>({out_ch})) : Var<T>();
    }

    std::size_t in_channels() const { return weight.value().dim(1); }
    std::size_t out_channels() const { return weight.value().dim(0); }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, padding); }

    void zero() {
        weight.mutable_value().fill(T(0));
        if (!bias.value().empty()) bias.mutable_value().fill(T(0));
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        refs.add(prefix + ".weight", weight);
        if (!bias.value().empty()) refs.add(prefix + ".bias", bias);
    }
};

/// Transposed convolution; weights (in_ch, out_ch, k, k).
template <typename T>
struct ConvTranspose2d {
    Var<T> weight;
    Var<T> bias;
    std::size_t stride = 2;
    std::size_t padding = 1;

    ConvTranspose2d() = default;
    ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride_, std::size_t pad, Rng& rng)
        : stride(stride_), padding(pad) {
        const double fan_in = double(in_ch * k * k) / double(stride_ * stride_);
        weight = Var<T>::parameter(random_normal<T>({in_ch, out_ch, k, k}, std::sqrt(2.0 / fan_in), rng));
        bias = Var<T>::parameter(Tensor<T>({out_ch}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv_transpose2d(x, weight, bias, stride, padding); }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        refs.add(prefix + ".weight", weight);
        refs.add(prefix + ".bias", bias);
    }
};

template <typename T>
struct Linear {
    Var<T> weight;  // (out, in)
    Var<T> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng) {
        weight = Var<T>::parameter(random_normal<T>({out, in}, std::sqrt(2.0 / double(in)), rng));
        bias = Var<T>::parameter(Tensor<T>({out}));
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        refs.add(prefix + ".weight", weight);
        refs.add(prefix + ".bias", bias);
    }
};

/// Batch or instance normalisation with affine parameters.
template <typename T>
struct Norm {
    NormKind kind = NormKind::batch;
    Var<T> gamma;
    Var<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;

    Norm() = default;
    Norm(std::size_t channels, NormKind kind_) : kind(kind_) {
        gamma = Var<T>::parameter(Tensor<T>({channels}, T(1)));
        beta = Var<T>::parameter(Tensor<T>({channels}));
        running_mean = Tensor<T>({channels});
        running_var = Tensor<T>({channels}, T(1));
    }

    Var<T> forward(const Var<T>& x, bool training) {
        switch (kind) {
            case NormKind::batch:
                return batch_norm(x, gamma, beta, running_mean, running_var, training);
            case NormKind::instance:
                return instance_norm(x, gamma, beta);
            case NormKind::none:
                break;
        }
        return x;
    }

    void collect(const std::string& prefix, ParamRefs<T>& refs) {
        if (kind == NormKind::none) return;
        refs.add(prefix + ".gamma", gamma);
        refs.add(prefix + ".beta", beta);
        if (kind == NormKind::batch) {
            refs.add_buffer(prefix + ".running_mean", running_mean);
            refs.add_buffer(prefix + ".running_var", running_var);
        }
    }
};

}  // namespace coordfill
