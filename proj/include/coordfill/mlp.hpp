#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "coordfill/ops.hpp"
#include "coordfill/tensor.hpp"

namespace coordfill {

enum class OutputActivation { sigmoid, identity };

/// Shape of the per-pixel query MLP. Hidden layers use ReLU.
struct MlpSpec {
    std::vector<std::size_t> layers{4, 32, 32, 32, 3};
    std::size_t n_freq = 1;
    OutputActivation output = OutputActivation::sigmoid;

    std::size_t input_dim() const { return layers.front(); }
    std::size_t output_dim() const { return layers.back(); }

    /// Sum over layers of in*out + out.
    std::size_t param_count() const {
        std::size_t p = 0;
        for (std::size_t l = 1; l < layers.size(); ++l) p += layers[l - 1] * layers[l] + layers[l];
        return p;
    }

    /// Scalar multiplies for one pixel.
    std::size_t multiplies_per_pixel() const {
        std::size_t p = 0;
        for (std::size_t l = 1; l < layers.size(); ++l) p += layers[l - 1] * layers[l];
        return p;
    }

    std::size_t widest() const {
        std::size_t m = 0;
        for (auto v : layers) m = std::max(m, v);
        return m;
    }

    void validate() const {
        if (layers.size() < 2) throw ConfigError("mlp spec needs at least an input and an output layer");
        if (n_freq == 0) throw ConfigError("mlp spec: n_freq must be >= 1");
        if (layers.front() != 4 * n_freq)
            throw ConfigError("mlp spec: input dim " + std::to_string(layers.front()) + " must equal 4*n_freq = " +
                              std::to_string(4 * n_freq));
        if (layers.back() != 3) throw ConfigError("mlp spec: output dim must be 3");
        for (auto v : layers)
            if (v == 0) throw ConfigError("mlp spec: zero-width layer");
    }
};

/// Sinusoidal encoding of a coordinate at the given intervals:
/// (sin, cos)(2^k * 2*pi*p_x/E_x), (sin, cos)(2^k * 2*pi*p_y/E_y) for k < n_freq.
/// p_x runs along the width, p_y along the height.
inline std::vector<double> encode_position(double px, double py, double ex, double ey, std::size_t n_freq = 1) {
    if (!(ex > 0.0) || !(ey > 0.0)) throw ConfigError("encode_position: intervals must be positive");
    std::vector<double> out;
    out.reserve(4 * n_freq);
    const double tx = px / ex, ty = py / ey;
    for (std::size_t k = 0; k < n_freq; ++k) {
        const double f = 2.0 * std::numbers::pi * double(std::size_t{1} << k);
        out.push_back(std::sin(f * tx));
        out.push_back(std::cos(f * tx));
        out.push_back(std::sin(f * ty));
        out.push_back(std::cos(f * ty));
    }
    return out;
}

/// Owning per-layer view of a flat parameter vector.
template <typename T>
struct MlpLayers {
    std::vector<Tensor<T>> weights;  // (out, in) row-major
    std::vector<Tensor<T>> biases;
};

/// Layout: for each layer in order, weight matrix (out, in) row-major, then bias.
template <typename T>
MlpLayers<T> unpack_mlp(std::span<const T> vector, const MlpSpec& spec) {
    if (vector.size() != spec.param_count()) {
        throw ShapeError("unpack_mlp: expected " + std::to_string(spec.param_count()) + " parameters, got " +
                         std::to_string(vector.size()));
    }
    MlpLayers<T> out;
    std::size_t off = 0;
    for (std::size_t l = 1; l < spec.layers.size(); ++l) {
        const std::size_t in = spec.layers[l - 1], o = spec.layers[l];
        out.weights.emplace_back(Shape{o, in}, std::vector<T>(vector.begin() + off, vector.begin() + off + o * in));
        off += o * in;
        out.biases.emplace_back(Shape{o}, std::vector<T>(vector.begin() + off, vector.begin() + off + o));
        off += o;
    }
    return out;
}

template <typename T>
std::vector<T> repack_mlp(const MlpLayers<T>& layers) {
    std::vector<T> v;
    for (std::size_t l = 0; l < layers.weights.size(); ++l) {
        v.insert(v.end(), layers.weights[l].data().begin(), layers.weights[l].data().end());
        v.insert(v.end(), layers.biases[l].data().begin(), layers.biases[l].data().end());
    }
    return v;
}

namespace detail {

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

/// Runs the MLP stored flat in `params` on `input`. `acts` receives every
/// layer's post-activation output concatenated (sum of layers[1..]) and the
/// final layer's outputs are its last output_dim entries.
template <typename T>
void mlp_forward(const T* params, const MlpSpec& spec, const T* input, T* acts) {
    const T* x = input;
    T* y = acts;
    const std::size_t L = spec.layers.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t in = spec.layers[l], out = spec.layers[l + 1];
        const T* w = params;
        const T* b = params + in * out;
        for (std::size_t o = 0; o < out; ++o) y[o] = b[o] + detail::dot(w + o * in, x, in);
        if (l + 1 < L) {
            for (std::size_t o = 0; o < out; ++o) y[o] = y[o] > T(0) ? y[o] : T(0);
        } else if (spec.output == OutputActivation::sigmoid) {
            for (std::size_t o = 0; o < out; ++o) y[o] = sigmoid_scalar(y[o]);
        }
        params += in * out + out;
        x = y;
        y += out;
    }
}

inline std::size_t mlp_activation_size(const MlpSpec& spec) {
    std::size_t n = 0;
    for (std::size_t l = 1; l < spec.layers.size(); ++l) n += spec.layers[l];
    return n;
}

/// Accumulates d(out)/d(params) given the stored activations from mlp_forward.
template <typename T>
void mlp_backward(const T* params, const MlpSpec& spec, const T* input, const T* acts, const T* grad_out,
                  T* grad_params, std::vector<T>& scratch_a, std::vector<T>& scratch_b) {
    const std::size_t L = spec.layers.size() - 1;
    std::vector<std::size_t> act_off(L + 1, 0), par_off(L + 1, 0);
    for (std::size_t l = 0; l < L; ++l) {
        act_off[l + 1] = act_off[l] + spec.layers[l + 1];
        par_off[l + 1] = par_off[l] + spec.layers[l] * spec.layers[l + 1] + spec.layers[l + 1];
    }
    scratch_a.assign(spec.widest(), T(0));
    scratch_b.assign(spec.widest(), T(0));
    std::vector<T>* g = &scratch_a;
    std::vector<T>* gprev = &scratch_b;
    // gradient w.r.t. pre-activation of the last layer
    {
        const std::size_t out = spec.layers[L];
        const T* y = acts + act_off[L - 1];
        for (std::size_t o = 0; o < out; ++o)
            (*g)[o] = spec.output == OutputActivation::sigmoid ? grad_out[o] * y[o] * (T(1) - y[o]) : grad_out[o];
    }
    for (std::size_t l = L; l-- > 0;) {
        const std::size_t in = spec.layers[l], out = spec.layers[l + 1];
        const T* w = params + par_off[l];
        T* gw = grad_params + par_off[l];
        T* gb = gw + in * out;
        const T* x = l == 0 ? input : acts + act_off[l - 1];
        for (std::size_t o = 0; o < out; ++o) {
            const T go = (*g)[o];
            gb[o] += go;
            if (go == T(0)) continue;
            for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * x[i];
        }
        if (l == 0) break;
        for (std::size_t i = 0; i < in; ++i) (*gprev)[i] = T(0);
        for (std::size_t o = 0; o < out; ++o) {
            const T go = (*g)[o];
            if (go == T(0)) continue;
            for (std::size_t i = 0; i < in; ++i) (*gprev)[i] += go * w[o * in + i];
        }
        // through the hidden ReLU of layer l-1
        for (std::size_t i = 0; i < in; ++i)
            if (!(x[i] > T(0))) (*gprev)[i] = T(0);
        std::swap(g, gprev);
    }
}

}  // namespace coordfill
