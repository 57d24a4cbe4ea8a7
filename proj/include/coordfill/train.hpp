#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coordfill/checkpoint.hpp"
#include "coordfill/losses.hpp"
#include "coordfill/metrics.hpp"
#include "coordfill/model.hpp"
#include "coordfill/optim.hpp"

namespace coordfill {

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    AdamConfig adam;
    DiscriminatorConfig discriminator;
    std::size_t epochs = 1;
    std::size_t max_steps = 0;  // 0: run all epochs
    std::size_t batch_size = 8;
    bool masked_prediction = true;
    std::size_t resize_min = 32;
    std::size_t resize_max = 64;
    std::uint64_t seed = 0;
    std::uint64_t extractor_seed = 7;
    std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
    std::string out_dir;

    void validate() const {
        model.validate();
        weights.validate();
        if (!(adam.lr > 0)) throw ConfigError("train: learning rate must be positive");
        if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
        if (resize_min == 0 || resize_min > resize_max) throw ConfigError("train: invalid resize range");
        if (resize_min < model.generator.grid_extent())
            throw ConfigError("train: resize_min is smaller than the parameter grid");
    }
};

inline json to_json(const TrainConfig& c) {
    return {{"model", to_json(c.model)},
            {"lambda_per", c.weights.perceptual},
            {"lambda_adv", c.weights.adversarial},
            {"lambda_fm", c.weights.feature_matching},
            {"lr", c.adam.lr},
            {"epochs", c.epochs},
            {"max_steps", c.max_steps},
            {"batch_size", c.batch_size},
            {"masked_prediction", c.masked_prediction},
            {"resize_min", c.resize_min},
            {"resize_max", c.resize_max},
            {"seed", c.seed},
            {"disc_channels", c.discriminator.base_channels}};
}

/// Reads a training config. Besides a nested "model" object the four
/// ablation switches may be given at the top level: block_kind, decoder,
/// resolution_injection, masked_prediction.
inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    try {
        json model = j.value("model", json::object());
        json gen = model.value("generator", json::object());
        for (const char* k : {"block_kind", "resolution_injection", "base_channels", "fixed_input_res", "n_blocks", "norm",
                              "alpha", "mlp_layers", "mlp_n_freq", "n_downsamples"})
            if (j.contains(k)) gen[k] = j.at(k);
        model["generator"] = gen;
        if (j.contains("decoder")) model["decoder"] = j.at("decoder");
        c.model = model_config_from_json(model);
        c.weights.perceptual = j.value("lambda_per", c.weights.perceptual);
        c.weights.adversarial = j.value("lambda_adv", c.weights.adversarial);
        c.weights.feature_matching = j.value("lambda_fm", c.weights.feature_matching);
        c.adam.lr = j.value("lr", c.adam.lr);
        c.epochs = j.value("epochs", c.epochs);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.masked_prediction = j.value("masked_prediction", c.masked_prediction);
        c.resize_min = j.value("resize_min", c.resize_min);
        c.resize_max = j.value("resize_max", c.resize_max);
        c.seed = j.value("seed", c.seed);
        c.discriminator.base_channels = j.value("disc_channels", c.discriminator.base_channels);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

struct LossRecord {
    std::size_t step = 0;
    double l_per = 0;
    double l_adv_g = 0;
    double l_adv_d = 0;
    double l_fm = 0;
    double total = 0;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "step,l_per,l_adv_g,l_adv_d,l_fm,total\n";
    out.precision(9);
    for (const auto& r : history)
        out << r.step << ',' << r.l_per << ',' << r.l_adv_g << ',' << r.l_adv_d << ',' << r.l_fm << ',' << r.total << '\n';
}

/// Stacks samples into (B, 3, S, S) images and (B, 1, S, S) masks, resizing
/// images bilinearly and masks conservatively when S differs from the source.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<MaskedImage<T>>& data, const std::vector<std::size_t>& idx,
                                           std::size_t S) {
    const std::size_t B = idx.size();
    Tensor<T> images({B, 3, S, S}), masks({B, 1, S, S});
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = data[idx[b]];
        const std::size_t H = s.height(), W = s.width();
        Tensor<T> img = resize_bilinear(s.image.reshaped({1, 3, H, W}), S, S);
        Tensor<T> m = (H == S && W == S) ? s.mask.reshaped({1, 1, S, S}) : resample_max(s.mask.reshaped({1, 1, H, W}), S, S);
        std::copy(img.data().begin(), img.data().end(), images.ptr() + b * 3 * S * S);
        std::copy(m.data().begin(), m.data().end(), masks.ptr() + b * S * S);
    }
    return {std::move(images), std::move(masks)};
}

template <typename T>
struct Trainer {
    TrainConfig cfg;
    CoordFillModel<T>& model;
    Discriminator<T> disc;
    FeatureExtractor<T> extractor;
    ParamRefs<T> g_params, d_params;
    Adam<T> g_opt, d_opt;
    Rng rng;
    std::vector<LossRecord> history;
    std::size_t step_count = 0;

    Trainer(const TrainConfig& c, CoordFillModel<T>& m)
        : cfg(c), model(m), disc(init_disc(c)), extractor(FeatureExtractor<T>::random(c.extractor_seed)),
          g_params(collect_model(m)), d_params(collect_disc(disc)), g_opt(g_params, c.adam), d_opt(d_params, c.adam),
          rng(c.seed ^ 0x5bd1e995ULL) {
        cfg.validate();
    }

    /// One discriminator update followed by one generator update.
    LossRecord step(const Tensor<T>& images, const Tensor<T>& masks) {
        LossRecord rec;
        rec.step = ++step_count;
        Var<T> fake = model.render(images, masks, cfg.masked_prediction, true);

        d_opt.zero_grad();
        auto adv = sigmoid_log_loss(disc(Var<T>(images)).logits, true);
        Var<T> d_loss = add(adv, sigmoid_log_loss(disc(fake.detach()).logits, false));
        backward(d_loss);
        d_opt.step();
        rec.l_adv_d = double(d_loss.item());

        set_trainable(d_params, false);
        g_opt.zero_grad();
        std::vector<Var<T>> real_acts;
        {
            NoGradGuard no_grad;
            real_acts = disc(Var<T>(images)).activations;
        }
        auto out = disc(fake);
        Var<T> g_adv = sigmoid_log_loss(out.logits, true);
        Var<T> fm = feature_matching_loss(out.activations, real_acts);
        Var<T> per = perceptual_loss(fake, images, extractor);
        Var<T> total = total_loss(per, g_adv, fm, cfg.weights);
        rec.l_per = double(per.item());
        rec.l_adv_g = double(g_adv.item());
        rec.l_fm = double(fm.item());
        rec.total = double(total.item());
        if (!std::isfinite(rec.total)) {
            set_trainable(d_params, true);
            throw NumericError("generator loss diverged at step " + std::to_string(rec.step));
        }
        backward(total);
        g_opt.step();
        set_trainable(d_params, true);
        history.push_back(rec);
        return rec;
    }

    /// Runs the configured epochs over `data`; writes checkpoints and the
    /// loss CSV when out_dir is set.
    void run(const std::vector<MaskedImage<T>>& data, const std::function<void(const LossRecord&)>& on_step = {}) {
        namespace fs = std::filesystem;
        if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::uniform_int_distribution<std::size_t> size_dist(cfg.resize_min, cfg.resize_max);
        bool done = data.empty();
        for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t i = 0; i < order.size() && !done; i += cfg.batch_size) {
                std::vector<std::size_t> idx(order.begin() + long(i), order.begin() + long(std::min(order.size(), i + cfg.batch_size)));
                auto [images, masks] = make_batch(data, idx, size_dist(rng));
                auto rec = step(images, masks);
                if (on_step) on_step(rec);
                done = cfg.max_steps && step_count >= cfg.max_steps;
            }
            if (!cfg.out_dir.empty() && cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0)
                save(cfg.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".cfck");
        }
        if (!cfg.out_dir.empty()) {
            save(cfg.out_dir + "/checkpoint.cfck");
            write_loss_csv(cfg.out_dir + "/losses.csv", history);
        }
    }

    void save(const std::string& path) { save_model(path, model, json{{"train", to_json(cfg)}, {"steps", step_count}}); }

private:
    static Discriminator<T> init_disc(const TrainConfig& c) {
        Rng r(c.seed * 2654435761ULL + 17);
        return Discriminator<T>(c.discriminator, r);
    }
    static ParamRefs<T> collect_model(CoordFillModel<T>& m) {
        ParamRefs<T> refs;
        m.collect("model", refs);
        return refs;
    }
    static ParamRefs<T> collect_disc(Discriminator<T>& d) {
        ParamRefs<T> refs;
        d.collect("disc", refs);
        return refs;
    }
    static void set_trainable(ParamRefs<T>& refs, bool on) {
        for (auto& e : refs.params) e.var->set_requires_grad(on);
    }
};

/// Holes filled with the per-channel mean of the known pixels.
template <typename T>
Tensor<T> mean_fill(const Tensor<T>& image, const Tensor<T>& mask) {
    const std::size_t C = image.dim(0), HW = image.size() / C;
    Tensor<T> out = image;
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        std::size_t n = 0;
        for (std::size_t p = 0; p < HW; ++p)
            if (mask[p] == T(0)) {
                s += image[c * HW + p];
                ++n;
            }
        const T m = T(n ? s / double(n) : 0.5);
        for (std::size_t p = 0; p < HW; ++p)
            if (mask[p] != T(0)) out[c * HW + p] = m;
    }
    return out;
}

struct EvalReport {
    MetricReport model;
    MetricReport mean_fill;
    double proxy_perceptual = 0;
    std::size_t images = 0;
};

/// Average metrics of the model's composite and of mean filling over `data`.
template <typename T>
EvalReport evaluate(CoordFillModel<T>& model, const std::vector<MaskedImage<T>>& data, const FeatureExtractor<T>& fe) {
    EvalReport r;
    auto accumulate = [](MetricReport& acc, const MetricReport& m) {
        acc.psnr += capped_psnr(m.psnr);
        acc.ssim += m.ssim;
        acc.masked_psnr += capped_psnr(m.masked_psnr);
        acc.masked_ssim += m.masked_ssim;
    };
    for (const auto& s : data) {
        const std::size_t H = s.height(), W = s.width();
        Tensor<T> out = model.complete(s.image.reshaped({1, 3, H, W}), s.mask.reshaped({1, 1, H, W})).reshaped({3, H, W});
        accumulate(r.model, evaluate_pair(out, s.image, s.mask));
        accumulate(r.mean_fill, evaluate_pair(mean_fill(s.image, s.mask), s.image, s.mask));
        r.proxy_perceptual += proxy_perceptual(out, s.image, fe);
    }
    const double n = double(std::max<std::size_t>(1, data.size()));
    for (auto* m : {&r.model, &r.mean_fill}) {
        m->psnr /= n;
        m->ssim /= n;
        m->masked_psnr /= n;
        m->masked_ssim /= n;
    }
    r.proxy_perceptual /= n;
    r.images = data.size();
    return r;
}

}  // namespace coordfill
