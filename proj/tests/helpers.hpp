#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "toolnet/rng.hpp"
#include "toolnet/tensor.hpp"

namespace testutil {

inline toolnet::Tensor rand_tensor(toolnet::Shape s, toolnet::RngStream& rng, double lo = -1.0,
                                   double hi = 1.0) {
    toolnet::Tensor t(s);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// Random one-hot map over K channels.
inline toolnet::Tensor rand_one_hot(toolnet::Shape s, toolnet::RngStream& rng) {
    toolnet::Tensor t(s);
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                int k = static_cast<int>(rng.below(static_cast<uint64_t>(s.c)));
                t.at(n, k, y, x) = 1.0;
            }
    return t;
}

inline std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in.good()) << "cannot open " << path;
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

class TempDir {
public:
    explicit TempDir(const std::string& name) {
        path_ = std::filesystem::temp_directory_path() / ("toolnet_test_" + name);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string str() const { return path_.string(); }
    std::filesystem::path path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
