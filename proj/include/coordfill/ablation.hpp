#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "coordfill/masks.hpp"
#include "coordfill/synth.hpp"
#include "coordfill/train.hpp"

namespace coordfill {

/// Seeded synthetic train/held-out split shared by every variant of a suite.
struct DatasetConfig {
    std::size_t train_images = 64;
    std::size_t heldout_images = 16;
    std::size_t image_size = 32;
    std::uint64_t seed = 1;
    std::uint64_t mask_seed = 1000;
    MaskSpec masks;
};

struct DatasetSplit {
    std::vector<MaskedImage<float>> train;
    std::vector<MaskedImage<float>> heldout;
};

inline DatasetSplit make_split(const DatasetConfig& d) {
    const std::size_t S = d.image_size;
    return {synth_masked_dataset<float>(d.train_images, S, S, d.seed, d.masks, d.mask_seed),
            synth_masked_dataset<float>(d.heldout_images, S, S, d.seed + 1, d.masks, d.mask_seed + d.train_images)};
}

inline DatasetConfig dataset_config_from_json(const json& j, DatasetConfig d = {}) {
    try {
        d.train_images = j.value("train_images", d.train_images);
        d.heldout_images = j.value("heldout_images", d.heldout_images);
        d.image_size = j.value("image_size", d.image_size);
        d.seed = j.value("dataset_seed", d.seed);
        d.mask_seed = j.value("mask_seed", d.mask_seed);
        d.masks.max_hole_ratio = j.value("max_hole_ratio", d.masks.max_hole_ratio);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset config: ") + e.what());
    }
    if (d.image_size == 0) throw ConfigError("dataset config: image_size must be positive");
    d.masks.validate();
    return d;
}

struct AblationVariant {
    std::string name;
    json overrides;  // merged over the suite's base training config
};

struct AblationSuite {
    json base = json::object();
    DatasetConfig dataset;
    std::vector<AblationVariant> variants;
    std::vector<std::uint64_t> seeds{0};
};

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    std::uint64_t dataset_seed = 0;
    TrainConfig config;
    EvalReport eval;
    double initial_total = 0;
    double final_total = 0;
};

/// Desk-scale training defaults: 200 steps of batch 16 at lr 1e-3 on 32x32 images.
inline json desk_training_base() {
    return {{"max_steps", 200}, {"epochs", 1000}, {"batch_size", 16}, {"lr", 1e-3}, {"resize_min", 32}, {"resize_max", 64}};
}

/// Three variants: pixel-query with masked supervision, pixel-query with
/// full-image supervision, and the shared-MLP decoder with masked supervision.
inline AblationSuite default_ablation_suite() {
    AblationSuite s;
    s.base = desk_training_base();
    s.variants = {{"pixel_query_masked", {{"decoder", "pixel_query"}, {"masked_prediction", true}}},
                  {"pixel_query_full", {{"decoder", "pixel_query"}, {"masked_prediction", false}}},
                  {"shared_mlp_masked", {{"decoder", "shared_mlp"}, {"masked_prediction", true}}}};
    s.seeds = {0, 1, 2};
    return s;
}

/// Training config of one (variant, seed) cell.
inline TrainConfig variant_config(const AblationSuite& s, const AblationVariant& v, std::uint64_t seed) {
    json j = s.base;
    j.update(v.overrides);
    j["seed"] = seed;
    return train_config_from_json(j);
}

inline AblationSuite ablation_suite_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("ablation suite must be a JSON object");
    AblationSuite s;
    try {
        s.base = desk_training_base();
        if (j.contains("base")) s.base.update(j.at("base"));
        s.dataset = dataset_config_from_json(j.value("dataset", json::object()));
        if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        const json& vs = j.at("variants");
        if (!vs.is_array() || vs.empty()) throw ConfigError("ablation suite: 'variants' must be a non-empty array");
        for (std::size_t i = 0; i < vs.size(); ++i) {
            json o = vs[i];
            if (!o.is_object()) throw ConfigError("ablation suite: each variant must be an object");
            std::string name = o.value("name", "variant" + std::to_string(i));
            o.erase("name");
            s.variants.push_back({name, o});
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("ablation suite: ") + e.what());
    }
    if (s.seeds.empty()) throw ConfigError("ablation suite: at least one seed required");
    for (const auto& v : s.variants) variant_config(s, v, 0);
    return s;
}

/// Trains every (variant, seed) cell from scratch on the shared split and
/// evaluates it on the held-out images.
inline std::vector<AblationRow> run_ablation(const AblationSuite& suite,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
    const DatasetSplit split = make_split(suite.dataset);
    std::vector<AblationRow> rows;
    for (const auto& v : suite.variants)
        for (std::uint64_t seed : suite.seeds) {
            AblationRow row;
            row.variant = v.name;
            row.seed = seed;
            row.dataset_seed = suite.dataset.seed;
            row.config = variant_config(suite, v, seed);
            Rng rng(seed);
            CoordFillModel<float> model(row.config.model, rng);
            Trainer<float> trainer(row.config, model);
            trainer.run(split.train);
            if (!trainer.history.empty()) {
                row.initial_total = trainer.history.front().total;
                row.final_total = trainer.history.back().total;
            }
            row.eval = evaluate(model, split.heldout, trainer.extractor);
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        }
    return rows;
}

inline void write_ablation_csv_header(std::ostream& out) {
    out << "variant,seed,dataset_seed,decoder,block,masked_prediction,resolution_injection,psnr,ssim,masked_psnr,"
           "masked_ssim,proxy_perceptual\n";
}

inline void write_ablation_csv_row(std::ostream& out, const AblationRow& r) {
    const auto& g = r.config.model.generator;
    const auto& m = r.eval.model;
    out << r.variant << ',' << r.seed << ',' << r.dataset_seed << ',' << to_string(r.config.model.decoder) << ','
        << to_string(g.block_kind) << ',' << (r.config.masked_prediction ? 1 : 0) << ','
        << (g.resolution_injection ? 1 : 0) << ',' << m.psnr << ',' << m.ssim << ',' << m.masked_psnr << ','
        << m.masked_ssim << ',' << r.eval.proxy_perceptual << '\n';
}

}  // namespace coordfill
