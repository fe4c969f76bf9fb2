#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "toolnet/checkpoint.hpp"
#include "toolnet/cli.hpp"

using namespace toolnet;
using testutil::read_file;
using testutil::TempDir;

namespace {

int run_cli(std::vector<std::string> args) {
    std::vector<const char*> argv{"toolnet"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(Cli, UnknownFlagIsAUsageError) {
    EXPECT_EQ(run_cli({"gen-data", "--does-not-exist", "1"}), 2);
    EXPECT_EQ(run_cli({"no-such-subcommand"}), 2);
    EXPECT_EQ(run_cli({}), 2);  // a subcommand is required
}

TEST(Cli, MissingFilesExitOneWithThePath) {
    ::testing::internal::CaptureStderr();
    int code = run_cli({"train", "--arch", "toolnet-h", "--manifest", "/nonexistent/m.txt",
                        "--out", "/tmp/toolnet_test_never"});
    std::string err = ::testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 1);
    EXPECT_NE(err.find("/nonexistent/m.txt"), std::string::npos);
}

TEST(Cli, GenDataProducesPairsManifestAndConfig) {
    TempDir dir("cli_gen");
    EXPECT_EQ(run_cli({"gen-data", "--n", "16", "--seed", "7", "--size", "64x64", "--out",
                       dir.str(), "--ratios", "1,0,0"}),
              0);
    Manifest m = load_manifest(dir.str() + "/manifest.txt");
    EXPECT_EQ(m.entries.size(), 16u);
    int files = 0;
    for (const auto& e : m.entries) {
        files += std::filesystem::exists(m.resolve(e.image_path));
        files += std::filesystem::exists(m.resolve(e.mask_path));
    }
    EXPECT_EQ(files, 32);
    EXPECT_TRUE(std::filesystem::exists(dir.str() + "/run_config.toml"));
}

TEST(Cli, EndToEndTrainEvalInferBench) {
    TempDir data_dir("cli_data");
    TempDir run_dir("cli_run");
    ASSERT_EQ(run_cli({"gen-data", "--n", "4", "--seed", "3", "--size", "64x64", "--out",
                       data_dir.str(), "--ratios", "0.5,0.25,0.25"}),
              0);
    std::string manifest = data_dir.str() + "/manifest.txt";

    // tiny training run: stepsize 4 -> 24 iterations
    ASSERT_EQ(run_cli({"train", "--arch", "toolnet-h", "--manifest", manifest, "--out",
                       run_dir.str(), "--seed", "1", "--stepsize", "4", "--scales", "4",
                       "--base-width", "2"}),
              0);
    std::string ckpt = run_dir.str() + "/final.tnck";
    EXPECT_TRUE(std::filesystem::exists(ckpt));
    EXPECT_TRUE(std::filesystem::exists(run_dir.str() + "/run_config.toml"));

    // train log has one record per iteration plus a header
    std::ifstream log(run_dir.str() + "/train_log.csv");
    ASSERT_TRUE(log.good());
    std::string line;
    int records = 0;
    while (std::getline(log, line))
        if (!line.empty() && line[0] != '#') ++records;
    EXPECT_EQ(records, 24);

    // eval prints the metric table
    ::testing::internal::CaptureStdout();
    ASSERT_EQ(run_cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--split", "train"}),
              0);
    std::string table = ::testing::internal::GetCapturedStdout();
    EXPECT_NE(table.find("mean_dsc"), std::string::npos);
    EXPECT_NE(table.find("\nmean\t"), std::string::npos);

    // infer twice: byte-identical masks
    std::string img = data_dir.str() + "/images/img_0000.png";
    std::string m1 = run_dir.str() + "/mask1.png";
    std::string m2 = run_dir.str() + "/mask2.png";
    ASSERT_EQ(run_cli({"infer", "--checkpoint", ckpt, "--image", img, "--out", m1, "--manifest",
                       manifest}),
              0);
    ASSERT_EQ(run_cli({"infer", "--checkpoint", ckpt, "--image", img, "--out", m2, "--manifest",
                       manifest}),
              0);
    EXPECT_EQ(read_file(m1), read_file(m2));
    Image8 mask = read_png(m1);
    for (uint8_t v : mask.px) EXPECT_TRUE(v == 0 || v == 255);

    // bench with a single repeat: mean equals the lone sample, fps = 1000/mean
    std::string bench_out = run_dir.str() + "/bench.tsv";
    ASSERT_EQ(run_cli({"bench", "--checkpoint", ckpt, "--repeats", "1", "--warmup", "1", "--out",
                       bench_out}),
              0);
    EXPECT_TRUE(std::filesystem::exists(bench_out));
    EXPECT_TRUE(std::filesystem::exists(bench_out + ".config.toml"));
}

TEST(Cli, InferOnBlackImageWithZeroHeadsIsAllBackground) {
    TempDir dir("cli_black");
    // untrained checkpoint: score heads are zero-initialized
    ArchConfig cfg;
    cfg.scales = 2;
    cfg.base_width = 2;
    cfg.input_h = cfg.input_w = 32;
    Network net = build_toolnet_h(cfg, 4);
    std::string ckpt = dir.str() + "/fresh.tnck";
    save_checkpoint(ckpt, net);

    Image8 black(32, 32, 3);
    std::string img = dir.str() + "/black.png";
    write_png(img, black);
    std::string out = dir.str() + "/mask.png";
    ASSERT_EQ(run_cli({"infer", "--checkpoint", ckpt, "--image", img, "--out", out}), 0);
    Image8 mask = read_png(out);
    for (uint8_t v : mask.px) EXPECT_EQ(v, 0);  // argmax ties resolve to background
}

TEST(Cli, InferRejectsIndivisibleImageSizes) {
    TempDir dir("cli_indiv");
    ArchConfig cfg;
    cfg.scales = 6;
    cfg.base_width = 2;
    cfg.input_h = cfg.input_w = 64;
    Network net = build_toolnet_ms(cfg, 1);
    std::string ckpt = dir.str() + "/n.tnck";
    save_checkpoint(ckpt, net);
    Image8 odd(48, 40, 3);  // 40 not divisible by 32
    std::string img = dir.str() + "/odd.png";
    write_png(img, odd);
    ::testing::internal::CaptureStderr();
    int code = run_cli({"infer", "--checkpoint", ckpt, "--image", img, "--out",
                        dir.str() + "/m.png"});
    std::string err = ::testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 1);
    EXPECT_NE(err.find("divisible"), std::string::npos);
}

TEST(Cli, LrRangeTestPrintsOneRowPerRange) {
    TempDir data_dir("cli_lrt");
    ASSERT_EQ(run_cli({"gen-data", "--n", "2", "--seed", "5", "--size", "64x64", "--out",
                       data_dir.str(), "--ratios", "1,0,0"}),
              0);
    ::testing::internal::CaptureStdout();
    ASSERT_EQ(run_cli({"lr-range-test", "--arch", "toolnet-ms", "--manifest",
                       data_dir.str() + "/manifest.txt", "--ranges", "1e-8:1e-6,1e-7:1e-5",
                       "--stepsize", "3", "--scales", "2", "--base-width", "2"}),
              0);
    std::string out = ::testing::internal::GetCapturedStdout();
    int rows = 0;
    std::istringstream ss(out);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 3);  // header + two ranges
}

TEST(Cli, SeededCommandsAreReproducible) {
    TempDir a("cli_rep_a"), b("cli_rep_b");
    ASSERT_EQ(run_cli({"gen-data", "--n", "3", "--seed", "11", "--size", "64x64", "--out",
                       a.str(), "--ratios", "1,0,0"}),
              0);
    ASSERT_EQ(run_cli({"gen-data", "--n", "3", "--seed", "11", "--size", "64x64", "--out",
                       b.str(), "--ratios", "1,0,0"}),
              0);
    EXPECT_EQ(read_file(a.str() + "/manifest.txt"), read_file(b.str() + "/manifest.txt"));
    EXPECT_EQ(read_file(a.str() + "/images/img_0002.png"),
              read_file(b.str() + "/images/img_0002.png"));
}
