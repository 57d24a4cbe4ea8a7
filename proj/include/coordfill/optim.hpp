#pragma once

#include <cmath>
#include <vector>

#include "coordfill/nn.hpp"

namespace coordfill {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a fixed set of parameters (bias-corrected moments).
template <typename T>
class Adam {
public:
    Adam(ParamRefs<T> refs, AdamConfig cfg = {}) : refs_(std::move(refs)), cfg_(cfg) {
        for (auto& e : refs_.params) {
            m_.emplace_back(e.var->shape());
            v_.emplace_back(e.var->shape());
        }
    }

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::size_t steps() const { return t_; }

    void zero_grad() {
        for (auto& e : refs_.params) e.var->zero_grad();
    }

    /// Parameters without an accumulated gradient are left untouched.
    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < refs_.params.size(); ++i) {
            Var<T>& p = *refs_.params[i].var;
            if (!p.has_grad()) continue;
            const Tensor<T>& g = p.grad();
            Tensor<T>& w = p.mutable_value();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = double(g[k]);
                const double mk = cfg_.beta1 * double(m[k]) + (1.0 - cfg_.beta1) * gk;
                const double vk = cfg_.beta2 * double(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
                m[k] = T(mk);
                v[k] = T(vk);
                w[k] = T(double(w[k]) - cfg_.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg_.eps));
            }
        }
    }

    const ParamRefs<T>& params() const { return refs_; }

private:
    ParamRefs<T> refs_;
    AdamConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace coordfill
