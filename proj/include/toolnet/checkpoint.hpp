#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "toolnet/arch.hpp"

namespace toolnet {

// Checkpoint container, magic "TNCK". Little-endian throughout; header
// carries the architecture tag and config, then one record per parameter
// (name, rank, dims, raw 32-bit float data) in registration order. Saving is
// deterministic and save -> load -> save round-trips byte-identically.

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 24)};
    os.write(b, 4);
}

inline void put_u8(std::ostream& os, uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<uint32_t>(v)); }

inline void put_f64(std::ostream& os, double v) {
    uint64_t u = std::bit_cast<uint64_t>(v);
    put_u32(os, static_cast<uint32_t>(u));
    put_u32(os, static_cast<uint32_t>(u >> 32));
}

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint8_t get_u8(std::istream& is) {
    int c = is.get();
    if (c < 0) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint8_t>(c);
}

inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

inline double get_f64(std::istream& is) {
    uint64_t lo = get_u32(is);
    uint64_t hi = get_u32(is);
    return std::bit_cast<double>(lo | (hi << 32));
}

inline std::string get_str(std::istream& is) {
    uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Network& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write("TNCK", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_str(os, net.tag);
    const ArchConfig& c = net.cfg;
    detail::put_u32(os, static_cast<uint32_t>(c.in_channels));
    detail::put_u32(os, static_cast<uint32_t>(c.num_classes));
    detail::put_u32(os, static_cast<uint32_t>(c.scales));
    detail::put_u32(os, static_cast<uint32_t>(c.base_width));
    detail::put_u32(os, static_cast<uint32_t>(c.width_cap));
    detail::put_f64(os, c.width_growth);
    detail::put_f64(os, c.width_multiplier);
    detail::put_u32(os, static_cast<uint32_t>(c.input_h));
    detail::put_u32(os, static_cast<uint32_t>(c.input_w));
    detail::put_u8(os, c.renorm_fused ? 1 : 0);
    detail::put_f64(os, c.dropout_p);
    detail::put_u8(os, c.activation == Activation::PReLU ? 0 : 1);

    const auto& params = net.graph.params();
    detail::put_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& rec : params) {
        if (rec.value.empty() && rec.shape.numel() > 0)
            throw std::runtime_error("save_checkpoint: parameter '" + rec.name +
                                     "' was never materialized");
        detail::put_str(os, rec.name);
        detail::put_u8(os, 4);
        detail::put_u32(os, static_cast<uint32_t>(rec.shape.n));
        detail::put_u32(os, static_cast<uint32_t>(rec.shape.c));
        detail::put_u32(os, static_cast<uint32_t>(rec.shape.h));
        detail::put_u32(os, static_cast<uint32_t>(rec.shape.w));
        for (long i = 0; i < rec.shape.numel(); ++i)
            detail::put_f32(os, static_cast<float>(rec.value[static_cast<size_t>(i)]));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

struct Checkpoint {
    std::string tag;
    ArchConfig cfg;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "TNCK")
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 " in " + path);
    Checkpoint ck;
    ck.tag = detail::get_str(is);
    ArchConfig& c = ck.cfg;
    c.in_channels = static_cast<int>(detail::get_u32(is));
    c.num_classes = static_cast<int>(detail::get_u32(is));
    c.scales = static_cast<int>(detail::get_u32(is));
    c.base_width = static_cast<int>(detail::get_u32(is));
    c.width_cap = static_cast<int>(detail::get_u32(is));
    c.width_growth = detail::get_f64(is);
    c.width_multiplier = detail::get_f64(is);
    c.input_h = static_cast<int>(detail::get_u32(is));
    c.input_w = static_cast<int>(detail::get_u32(is));
    c.renorm_fused = detail::get_u8(is) != 0;
    c.dropout_p = detail::get_f64(is);
    c.activation = detail::get_u8(is) == 0 ? Activation::PReLU : Activation::ReLU;

    uint32_t count = detail::get_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = detail::get_str(is);
        uint8_t rank = detail::get_u8(is);
        if (rank != 4)
            throw std::runtime_error("checkpoint: unsupported tensor rank " +
                                     std::to_string(rank));
        Shape s;
        s.n = static_cast<int>(detail::get_u32(is));
        s.c = static_cast<int>(detail::get_u32(is));
        s.h = static_cast<int>(detail::get_u32(is));
        s.w = static_cast<int>(detail::get_u32(is));
        Tensor t(s);
        for (long j = 0; j < s.numel(); ++j)
            t[static_cast<size_t>(j)] = static_cast<double>(detail::get_f32(is));
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

// Rebuilds the architecture recorded in the checkpoint and installs its
// weights. Spatial input size may be overridden (it does not affect the
// parameters), e.g. to run inference at the size of a given image.
inline Network load_network(const Checkpoint& ck, int input_h = 0, int input_w = 0) {
    ArchConfig cfg = ck.cfg;
    if (input_h > 0) cfg.input_h = input_h;
    if (input_w > 0) cfg.input_w = input_w;
    Network net = build_network(ck.tag, cfg, /*seed=*/0, /*materialize=*/true);
    if (ck.tensors.size() != net.graph.num_params())
        throw std::runtime_error(detail::concat("checkpoint has ", ck.tensors.size(),
                                                " tensors but architecture expects ",
                                                net.graph.num_params()));
    for (const auto& [name, tensor] : ck.tensors) {
        int pid = net.graph.param_id(name);
        if (pid < 0) throw std::runtime_error("checkpoint tensor has no matching parameter: " + name);
        ParamRecord& rec = net.graph.param(pid);
        if (rec.shape != tensor.shape())
            throw_shape_error("checkpoint tensor '", name, "' is ", tensor.shape().str(),
                              " but architecture expects ", rec.shape.str());
        rec.value = tensor;
    }
    return net;
}

inline Network load_network(const std::string& path, int input_h = 0, int input_w = 0) {
    return load_network(read_checkpoint(path), input_h, input_w);
}

}  // namespace toolnet
