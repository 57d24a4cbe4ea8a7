#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "coordfill/coordfill.hpp"

using namespace coordfill;

namespace {

constexpr int kUsageError = 2;

std::optional<std::uint64_t> resolve_seed(const CLI::Option* opt, std::uint64_t value) {
    if (opt->count()) return value;
    if (const char* env = std::getenv("COORDFILL_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("COORDFILL_SEED is not an unsigned integer: ") + env);
        }
    }
    return std::nullopt;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);)
        if (!item.empty()) out.push_back(item);
    return out;
}

std::pair<std::size_t, std::size_t> parse_extent(const std::string& s) {
    const auto x = s.find_first_of("xX");
    try {
        std::size_t used = 0;
        if (x == std::string::npos) {
            const std::size_t v = std::stoul(s, &used);
            if (used == s.size() && v > 0) return {v, v};
        } else {
            const std::size_t h = std::stoul(s.substr(0, x), &used);
            const std::string rest = s.substr(x + 1);
            std::size_t used_w = 0;
            const std::size_t w = std::stoul(rest, &used_w);
            if (used == x && used_w == rest.size() && h > 0 && w > 0) return {h, w};
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("invalid resolution '" + s + "' (expected H, or HxW)");
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

struct InpaintArgs {
    std::string input, mask, checkpoint, output, out_res;
    std::size_t workers = 1;
};

int cmd_inpaint(const InpaintArgs& a) {
    MaskedImage<float> in{read_image<float>(a.input), read_mask<float>(a.mask)};
    if (in.mask.dim(1) != in.image.dim(1) || in.mask.dim(2) != in.image.dim(2))
        throw ShapeError("mask " + shape_str(in.mask.shape()) + " does not match image " + shape_str(in.image.shape()));
    auto model = load_model<float>(a.checkpoint);
    QueryOptions opts;
    opts.workers = a.workers;
    std::size_t H = in.height(), W = in.width();
    if (!a.out_res.empty()) std::tie(H, W) = parse_extent(a.out_res);

    if (model.config().decoder != DecoderKind::pixel_query) {
        if (H != in.height() || W != in.width())
            throw ConfigError("--out-res requires a pixel-query checkpoint");
        const auto t0 = std::chrono::steady_clock::now();
        Tensor<float> out = model.complete(in.image.reshaped({1, 3, H, W}), in.mask.reshaped({1, 1, H, W}));
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        write_image(a.output, out.reshaped({3, H, W}));
        std::cout << "decoder=" << to_string(model.config().decoder) << " total_ms=" << ms
                  << " decoded_pixels=" << (H * W) << "\n";
        return 0;
    }
    auto res = inpaint_at_resolution(in, model.generator(), H, W, opts);
    write_image(a.output, res.image);
    std::cout << "resample_ms=" << res.timings.resample_ms << " paramgen_ms=" << res.timings.paramgen_ms
              << " query_ms=" << res.timings.query_ms << " total_ms=" << res.timings.total_ms
              << " decoded_pixels=" << res.decoded_pixels << " selected_patches=" << res.selected_patches << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, out_dir;
};

int cmd_train(const TrainArgs& a, std::optional<std::uint64_t> seed) {
    json j = desk_training_base();
    json dataset = json::object();
    if (!a.config.empty()) {
        json user = read_json_file(a.config);
        if (!user.is_object()) throw ConfigError(a.config + ": expected a JSON object");
        if (user.contains("dataset")) {
            dataset = user.at("dataset");
            user.erase("dataset");
        }
        j.update(user);
    }
    if (seed) j["seed"] = *seed;
    TrainConfig cfg = train_config_from_json(j);
    cfg.out_dir = a.out_dir;
    const DatasetSplit split = make_split(dataset_config_from_json(dataset));

    Rng rng(cfg.seed);
    CoordFillModel<float> model(cfg.model, rng);
    Trainer<float> trainer(cfg, model);
    const std::size_t every = std::max<std::size_t>(1, cfg.max_steps / 10);
    trainer.run(split.train, [&](const LossRecord& r) {
        if (r.step == 1 || r.step % every == 0)
            std::cout << "step " << r.step << " total=" << r.total << " per=" << r.l_per << " adv_g=" << r.l_adv_g
                      << " adv_d=" << r.l_adv_d << " fm=" << r.l_fm << "\n";
    });
    if (!trainer.history.empty())
        std::cout << "initial_total=" << trainer.history.front().total << " final_total=" << trainer.history.back().total
                  << "\n";
    const EvalReport e = evaluate(model, split.heldout, trainer.extractor);
    std::cout << "heldout masked_psnr=" << e.model.masked_psnr << " mean_fill_masked_psnr=" << e.mean_fill.masked_psnr
              << " ssim=" << e.model.ssim << "\n";
    std::cout << "wrote " << cfg.out_dir << "/checkpoint.cfck and " << cfg.out_dir << "/losses.csv\n";
    return 0;
}

struct BenchArgs {
    std::string checkpoint, resolutions = "256,512,1024", ratios = "0.05,0.15,0.25", output;
    std::size_t repeats = 5, warmups = 3, workers = 1;
    bool dconv = false;
};

int cmd_bench(const BenchArgs& a, std::uint64_t seed) {
    BenchConfig cfg;
    cfg.resolutions.clear();
    for (const auto& r : split(a.resolutions, ',')) cfg.resolutions.push_back(parse_extent(r));
    cfg.mask_ratios.clear();
    for (const auto& r : split(a.ratios, ',')) {
        try {
            cfg.mask_ratios.push_back(std::stod(r));
        } catch (const std::exception&) {
            throw ConfigError("invalid mask ratio '" + r + "'");
        }
        if (!(cfg.mask_ratios.back() >= 0.0 && cfg.mask_ratios.back() <= 1.0))
            throw ConfigError("mask ratio " + r + " outside [0, 1]");
    }
    if (cfg.resolutions.empty() || cfg.mask_ratios.empty()) throw ConfigError("bench needs resolutions and mask ratios");
    if (a.repeats == 0) throw ConfigError("--repeats must be positive");
    cfg.repeats = a.repeats;
    cfg.warmups = a.warmups;
    cfg.workers = a.workers;
    cfg.include_dconv = a.dconv;
    cfg.seed = seed;

    std::optional<CoordFillModel<float>> loaded;
    ParamGenerator<float> fresh;
    ParamGenerator<float>* gen = nullptr;
    if (!a.checkpoint.empty()) {
        loaded.emplace(load_model<float>(a.checkpoint));
        gen = &loaded->generator();
    } else {
        Rng rng(seed);
        fresh = ParamGenerator<float>(GeneratorConfig{}, rng);
        gen = &fresh;
    }
    auto rows = run_bench(*gen, cfg, &std::cerr);
    if (a.output.empty()) {
        write_bench_csv(std::cout, rows);
    } else {
        std::ofstream out(a.output);
        if (!out) throw IoError("cannot write " + a.output);
        write_bench_csv(out, rows);
        std::cerr << "wrote " << a.output << "\n";
    }
    return 0;
}

struct AblateArgs {
    std::string suite, preset, out_dir;
};

int cmd_ablate(const AblateArgs& a, std::optional<std::uint64_t> seed) {
    AblationSuite suite;
    if (!a.suite.empty())
        suite = ablation_suite_from_json(read_json_file(a.suite));
    else if (a.preset == "default")
        suite = default_ablation_suite();
    else
        throw ConfigError("ablate needs --suite FILE or --preset default");
    if (seed) suite.seeds = {*seed};
    std::filesystem::create_directories(a.out_dir);
    const std::string path = a.out_dir + "/ablation.csv";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    write_ablation_csv_header(out);
    run_ablation(suite, [&](const AblationRow& r) {
        write_ablation_csv_row(out, r);
        out.flush();
        std::cout << r.variant << " seed " << r.seed << ": masked_psnr=" << r.eval.model.masked_psnr
                  << " ssim=" << r.eval.model.ssim << "\n";
    });
    std::cout << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coordinate-query image inpainting"};
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Random seed (falls back to $COORDFILL_SEED, then 0)");

    InpaintArgs ia;
    auto* inp = app.add_subcommand("inpaint", "Fill the holes of one image");
    inp->add_option("--input", ia.input, "Input image (PNG or PPM)")->required();
    inp->add_option("--mask", ia.mask, "Mask image; bright pixels are holes")->required();
    inp->add_option("--checkpoint", ia.checkpoint, "Model checkpoint")->required();
    inp->add_option("--output", ia.output, "Output image (.png, or .ppm)")->required();
    inp->add_option("--out-res", ia.out_res, "Output resolution HxW");
    inp->add_option("--workers", ia.workers, "Query worker threads")->check(CLI::PositiveNumber);

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train on the synthetic dataset");
    tr->add_option("--config", ta.config, "JSON training config");
    tr->add_option("--out-dir", ta.out_dir, "Directory for checkpoints and losses.csv")->required();

    BenchArgs ba;
    auto* be = app.add_subcommand("bench", "Time parameter generation and pixel queries");
    be->add_option("--checkpoint", ba.checkpoint, "Model checkpoint (default: seeded random weights)");
    be->add_option("--resolutions", ba.resolutions, "Comma-separated list of N or HxW");
    be->add_option("--mask-ratios", ba.ratios, "Comma-separated hole fractions");
    be->add_option("--repeats", ba.repeats, "Timed repeats per row (median reported)");
    be->add_option("--warmups", ba.warmups, "Untimed warmup runs per row");
    be->add_option("--workers", ba.workers, "Query worker threads")->check(CLI::PositiveNumber);
    be->add_flag("--dconv", ba.dconv, "Also time the transposed-conv baseline decoder");
    be->add_option("--output", ba.output, "CSV path (default: stdout)");

    AblateArgs aa;
    auto* ab = app.add_subcommand("ablate", "Train and evaluate model variants");
    ab->add_option("--suite", aa.suite, "JSON suite file");
    ab->add_option("--preset", aa.preset, "Built-in suite: default");
    ab->add_option("--out-dir", aa.out_dir, "Directory for ablation.csv")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        const auto seed = resolve_seed(seed_opt, seed_value);
        if (inp->parsed()) return cmd_inpaint(ia);
        if (tr->parsed()) return cmd_train(ta, seed);
        if (be->parsed()) return cmd_bench(ba, seed.value_or(0));
        if (ab->parsed()) return cmd_ablate(aa, seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
