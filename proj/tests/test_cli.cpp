#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace cftest;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "coordfill_cli_out.txt";
    const std::string cmd = std::string(COORDFILL_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

class Cli : public ::testing::Test {
protected:
    static fs::path dir;

    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / "coordfill_cli";
        fs::remove_all(dir);
        fs::create_directories(dir);
        write_json("init.json", {{"epochs", 0}, {"n_blocks", 2}});
        ASSERT_EQ(run("train --config " + path("init.json") + " --out-dir " + path("init")).code, 0);
        write_image(path("img.ppm"), synth_dataset<float>(1, 64, 64, 3).front());
        write_image(path("mask.png"), mask_with_ratio<float>(64, 64, 0.2, 4));
        write_image(path("empty.png"), Tensor<float>({1, 64, 64}));
        write_image(path("small_mask.png"), Tensor<float>({1, 32, 64}, 1.f));
    }

    static std::string path(const std::string& name) { return (dir / name).string(); }
    static std::string checkpoint() { return path("init/checkpoint.cfck"); }

    static void write_json(const std::string& name, const json& j) { std::ofstream(path(name)) << j.dump(); }

    static std::vector<std::string> lines(const std::string& file) {
        std::ifstream in(file);
        std::vector<std::string> out;
        for (std::string l; std::getline(in, l);) out.push_back(l);
        return out;
    }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, ZeroEpochTrainingWritesInitialCheckpoint) {
    EXPECT_TRUE(fs::exists(checkpoint()));
    auto l = lines(path("init/losses.csv"));
    ASSERT_EQ(l.size(), 1u);
    EXPECT_EQ(l[0], "step,l_per,l_adv_g,l_adv_d,l_fm,total");
}

TEST_F(Cli, InvalidTrainConfigExitsWithTwo) {
    write_json("bad_block.json", {{"block_kind", "dense"}});
    auto r = run("train --config " + path("bad_block.json") + " --out-dir " + path("bad"));
    EXPECT_EQ(r.code, 2) << r.out;
    EXPECT_NE(r.out.find("block_kind"), std::string::npos) << r.out;
    write_json("bad_lr.json", {{"lr", -1}});
    EXPECT_EQ(run("train --config " + path("bad_lr.json") + " --out-dir " + path("bad")).code, 2);
    EXPECT_EQ(run("train --config " + path("missing.json") + " --out-dir " + path("bad")).code, 2);
}

TEST_F(Cli, InpaintKeepsKnownPixels) {
    auto r = run("inpaint --input " + path("img.ppm") + " --mask " + path("mask.png") + " --checkpoint " + checkpoint() +
                 " --output " + path("out.png") + " --workers 2");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("paramgen_ms="), std::string::npos);
    auto in = read_rgb8(path("img.ppm")), out = read_rgb8(path("out.png"));
    auto mask = read_mask<float>(path("mask.png"));
    ASSERT_EQ(out.height, 64u);
    std::size_t holes = 0;
    for (std::size_t p = 0; p < 64 * 64; ++p) {
        holes += mask[p] != 0;
        if (mask[p] == 0)
            for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(out.pixels[p * 3 + c], in.pixels[p * 3 + c]) << p;
    }
    EXPECT_NE(r.out.find("decoded_pixels=" + std::to_string(holes)), std::string::npos) << r.out;
}

TEST_F(Cli, EmptyMaskReproducesInput) {
    auto r = run("inpaint --input " + path("img.ppm") + " --mask " + path("empty.png") + " --checkpoint " + checkpoint() +
                 " --output " + path("same.ppm"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("decoded_pixels=0"), std::string::npos) << r.out;
    EXPECT_EQ(read_rgb8(path("same.ppm")).pixels, read_rgb8(path("img.ppm")).pixels);
}

TEST_F(Cli, InpaintErrors) {
    auto r = run("inpaint --input " + path("img.ppm") + " --mask " + path("small_mask.png") + " --checkpoint " +
                 checkpoint() + " --output " + path("x.png"));
    EXPECT_EQ(r.code, 2) << r.out;
    EXPECT_FALSE(fs::exists(path("x.png")));
    EXPECT_EQ(run("inpaint --input " + path("nope.png") + " --mask " + path("mask.png") + " --checkpoint " + checkpoint() +
                  " --output " + path("x.png"))
                  .code,
              2);
    EXPECT_EQ(run("inpaint --input " + path("img.ppm") + " --mask " + path("mask.png") + " --checkpoint " +
                  path("nope.cfck") + " --output " + path("x.png"))
                  .code,
              2);
    EXPECT_NE(run("inpaint --input " + path("img.ppm")).code, 0);
}

TEST_F(Cli, InpaintAtOtherResolution) {
    auto r = run("inpaint --input " + path("img.ppm") + " --mask " + path("mask.png") + " --checkpoint " + checkpoint() +
                 " --output " + path("big.png") + " --out-res 96x80");
    ASSERT_EQ(r.code, 0) << r.out;
    auto img = read_rgb8(path("big.png"));
    EXPECT_EQ(img.height, 96u);
    EXPECT_EQ(img.width, 80u);
    EXPECT_EQ(run("inpaint --input " + path("img.ppm") + " --mask " + path("mask.png") + " --checkpoint " +
                  checkpoint() + " --output " + path("big.png") + " --out-res 9x")
                  .code,
              2);
}

TEST_F(Cli, BenchWritesCsv) {
    auto r = run("bench --checkpoint " + checkpoint() + " --resolutions 64,48x80 --mask-ratios 0,0.1 --repeats 1 --warmups 0 "
                 "--output " + path("bench.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    auto l = lines(path("bench.csv"));
    ASSERT_EQ(l.size(), 1u + 2 * 2 * 3);
    EXPECT_EQ(l[0], "phase,height,width,mask_ratio,wall_ms,decoded_pixels,status");
    EXPECT_EQ(l[2].rfind("query,64,64,0,", 0), 0u) << l[2];
    EXPECT_NE(l[2].find(",0,ok"), std::string::npos) << l[2];
    EXPECT_EQ(run("bench --resolutions 64 --mask-ratios 2").code, 2);
}

TEST_F(Cli, AblateOneVariantOneRow) {
    const json base = {{"max_steps", 1}, {"batch_size", 2}, {"n_blocks", 1}, {"resize_max", 32}};
    const json dataset = {{"train_images", 2}, {"heldout_images", 2}};
    write_json("one.json", {{"base", base}, {"dataset", dataset}, {"variants", {{{"name", "pq"}}}}});
    auto r = run("ablate --suite " + path("one.json") + " --out-dir " + path("ab1"));
    ASSERT_EQ(r.code, 0) << r.out;
    auto l = lines(path("ab1/ablation.csv"));
    ASSERT_EQ(l.size(), 2u);
    EXPECT_EQ(l[0],
              "variant,seed,dataset_seed,decoder,block,masked_prediction,resolution_injection,psnr,ssim,masked_psnr,"
              "masked_ssim,proxy_perceptual");

    write_json("two.json", {{"base", base},
                            {"dataset", dataset},
                            {"variants", {{{"name", "pq"}}, {{"name", "dconv"}, {"decoder", "conv"}}}}});
    r = run("ablate --suite " + path("two.json") + " --out-dir " + path("ab2") + " --seed 5");
    ASSERT_EQ(r.code, 0) << r.out;
    l = lines(path("ab2/ablation.csv"));
    ASSERT_EQ(l.size(), 3u);
    EXPECT_EQ(l[1].rfind("pq,5,1,pixel_query,", 0), 0u) << l[1];
    EXPECT_EQ(l[2].rfind("dconv,5,1,conv,", 0), 0u) << l[2];

    write_json("bad_suite.json", {{"variants", {{{"decoder", "mystery"}}}}});
    EXPECT_EQ(run("ablate --suite " + path("bad_suite.json") + " --out-dir " + path("ab3")).code, 2);
}

TEST_F(Cli, TrainingIsDeterministicGivenSeed) {
    write_json("short.json", {{"max_steps", 2}, {"batch_size", 2}, {"n_blocks", 1}, {"resize_max", 32},
                              {"dataset", {{"train_images", 4}, {"heldout_images", 1}}}});
    ASSERT_EQ(run("--seed 3 train --config " + path("short.json") + " --out-dir " + path("d1")).code, 0);
    const std::string env = "COORDFILL_SEED=3 ";
    const int status = std::system((env + COORDFILL_CLI + " train --config " + path("short.json") + " --out-dir " +
                                    path("d2") + " > /dev/null 2>&1")
                                       .c_str());
    ASSERT_EQ(WEXITSTATUS(status), 0);
    auto a = lines(path("d1/losses.csv")), b = lines(path("d2/losses.csv"));
    EXPECT_EQ(a.size(), 3u);
    EXPECT_EQ(a, b);
}
