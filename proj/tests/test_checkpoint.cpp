#include <gtest/gtest.h>

#include <fstream>

#include "helpers.hpp"
#include "toolnet/checkpoint.hpp"
#include "toolnet/presets.hpp"

using namespace toolnet;
using testutil::read_file;
using testutil::TempDir;

namespace {

Network small_net(uint64_t seed = 5) {
    ArchConfig cfg;
    cfg.scales = 2;
    cfg.base_width = 3;
    cfg.input_h = cfg.input_w = 16;
    return build_toolnet_h(cfg, seed);
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    TempDir dir("ckpt_rt");
    Network net = small_net();
    // non-trivial values so the float narrowing path is exercised
    RngStream rng(1);
    for (auto& rec : net.graph.params())
        for (auto& v : rec.value.values()) v += 0.01 * rng.normal();
    std::string p1 = dir.str() + "/a.tnck";
    std::string p2 = dir.str() + "/b.tnck";
    save_checkpoint(p1, net);
    Network back = load_network(p1);
    save_checkpoint(p2, back);
    EXPECT_EQ(read_file(p1), read_file(p2));
}

TEST(Checkpoint, RestoresConfigTagAndValues) {
    TempDir dir("ckpt_cfg");
    Network net = small_net(9);
    net.cfg.renorm_fused = false;  // non-default field must round-trip
    Network rebuilt = build_toolnet_h(net.cfg, 9);
    std::string path = dir.str() + "/n.tnck";
    save_checkpoint(path, rebuilt);
    Checkpoint ck = read_checkpoint(path);
    EXPECT_EQ(ck.tag, "toolnet-h");
    EXPECT_EQ(ck.cfg.scales, 2);
    EXPECT_EQ(ck.cfg.base_width, 3);
    EXPECT_FALSE(ck.cfg.renorm_fused);
    Network loaded = load_network(ck);
    ASSERT_EQ(loaded.graph.num_params(), rebuilt.graph.num_params());
    for (size_t i = 0; i < loaded.graph.num_params(); ++i) {
        const auto& a = loaded.graph.params()[i];
        const auto& b = rebuilt.graph.params()[i];
        EXPECT_EQ(a.name, b.name);
        for (long j = 0; j < a.shape.numel(); ++j)
            EXPECT_EQ(a.value[static_cast<size_t>(j)],
                      static_cast<double>(static_cast<float>(b.value[static_cast<size_t>(j)])));
    }
}

TEST(Checkpoint, InputSizeOverrideKeepsWeights) {
    TempDir dir("ckpt_size");
    Network net = small_net(3);
    std::string path = dir.str() + "/n.tnck";
    save_checkpoint(path, net);
    Network resized = load_network(path, 32, 32);
    EXPECT_EQ(resized.graph.shape_of(resized.input), (Shape{1, 3, 32, 32}));
    EXPECT_EQ(resized.graph.num_params(), net.graph.num_params());
}

TEST(Checkpoint, RejectsGarbageAndWrongMagic) {
    TempDir dir("ckpt_bad");
    std::string path = dir.str() + "/bad.tnck";
    std::ofstream(path, std::ios::binary) << "MAGIC????";
    EXPECT_THROW(read_checkpoint(path), std::runtime_error);
    EXPECT_THROW(read_checkpoint(dir.str() + "/missing.tnck"), std::runtime_error);

    // right magic, truncated body
    std::ofstream(path, std::ios::binary | std::ios::trunc) << "TNCK";
    EXPECT_THROW(read_checkpoint(path), std::runtime_error);
}

TEST(Checkpoint, CountOnlyGraphsCannotBeSaved) {
    Network net = build_toolnet_h(desk_toolnet_config(), 0, /*materialize=*/false);
    TempDir dir("ckpt_unmat");
    EXPECT_THROW(save_checkpoint(dir.str() + "/x.tnck", net), std::runtime_error);
}
