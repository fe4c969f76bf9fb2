#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "toolnet/image.hpp"
#include "toolnet/rng.hpp"
#include "toolnet/tensor.hpp"

namespace toolnet {

enum class Split { Train, Validation, Test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "validation") return Split::Validation;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split: " + s + " (expected train|validation|test)");
}

struct ManifestEntry {
    std::string id;
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    Split split = Split::Train;
};

struct Manifest {
    std::array<double, 3> means{0.0, 0.0, 0.0};
    std::vector<ManifestEntry> entries;
    std::string dir;  // resolved location, not serialized

    std::vector<ManifestEntry> split_entries(Split s) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(e);
        return out;
    }

    std::string resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        if (p.is_absolute() || dir.empty()) return rel;
        return (std::filesystem::path(dir) / p).string();
    }
};

inline void save_manifest(const Manifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out.precision(17);
    out << "mean_r = " << m.means[0] << "\n";
    out << "mean_g = " << m.means[1] << "\n";
    out << "mean_b = " << m.means[2] << "\n";
    for (const auto& e : m.entries)
        out << e.id << '\t' << e.image_path << '\t' << e.mask_path << '\t'
            << split_name(e.split) << '\n';
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    Manifest m;
    m.dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("mean_", 0) == 0) {
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("bad manifest header line: " + line);
            double v = std::stod(line.substr(eq + 1));
            char c = line[5];
            m.means[c == 'r' ? 0 : c == 'g' ? 1 : 2] = v;
            continue;
        }
        ManifestEntry e;
        size_t a = line.find('\t');
        size_t b = a == std::string::npos ? a : line.find('\t', a + 1);
        size_t c = b == std::string::npos ? b : line.find('\t', b + 1);
        if (c == std::string::npos)
            throw std::runtime_error("bad manifest record: " + line);
        e.id = line.substr(0, a);
        e.image_path = line.substr(a + 1, b - a - 1);
        e.mask_path = line.substr(b + 1, c - b - 1);
        e.split = parse_split(line.substr(c + 1));
        m.entries.push_back(std::move(e));
    }
    return m;
}

// --- encodings ---------------------------------------------------------------

// One-hot map of a strictly binary {0, 255} mask: channel 0 marks background,
// channel 1 marks instrument.
inline Tensor one_hot(const Image8& mask, int classes = 2) {
    if (mask.ch != 1) throw std::invalid_argument("one_hot: mask must be single-channel");
    if (classes != 2) throw std::invalid_argument("one_hot: only two classes are supported");
    std::set<int> offending;
    for (uint8_t v : mask.px)
        if (v != 0 && v != 255) offending.insert(v);
    if (!offending.empty()) {
        std::string vals;
        int shown = 0;
        for (int v : offending) {
            if (shown++ == 8) {
                vals += ", ...";
                break;
            }
            vals += (vals.empty() ? "" : ", ") + std::to_string(v);
        }
        throw std::invalid_argument("one_hot: mask contains non-binary values {" + vals + "}");
    }
    Tensor t({1, 2, mask.h, mask.w});
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            bool fg = mask.at(y, x, 0) == 255;
            t.at(0, fg ? 1 : 0, y, x) = 1.0;
        }
    return t;
}

// Maps 8-bit channels to [0,1] and subtracts the per-channel dataset means
// recorded in the manifest header.
inline Tensor normalize(const Image8& image, const std::array<double, 3>& means) {
    if (image.ch != 3) throw std::invalid_argument("normalize: expected a 3-channel image");
    Tensor t({1, 3, image.h, image.w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x)
                t.at(0, c, y, x) = image.at(y, x, c) / 255.0 - means[static_cast<size_t>(c)];
    return t;
}

inline Image8 denormalize(const Tensor& t, const std::array<double, 3>& means) {
    Shape s = t.shape();
    if (s.n != 1 || s.c != 3) throw std::invalid_argument("denormalize: expected a 1x3xHxW tensor");
    Image8 img(s.w, s.h, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                double v = (t.at(0, c, y, x) + means[static_cast<size_t>(c)]) * 255.0;
                img.at(y, x, c) = static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
            }
    return img;
}

struct Sample {
    Image8 image;
    Image8 mask;
    std::string id;
};

inline Sample load_sample(const std::string& image_path, const std::string& mask_path,
                          std::string id = "") {
    Sample s;
    s.image = read_png(image_path);
    s.mask = read_png(mask_path);
    if (s.image.w != s.mask.w || s.image.h != s.mask.h)
        throw std::runtime_error("image/mask dimensions differ: " + image_path + " is " +
                                 std::to_string(s.image.w) + "x" + std::to_string(s.image.h) +
                                 ", " + mask_path + " is " + std::to_string(s.mask.w) + "x" +
                                 std::to_string(s.mask.h));
    s.id = id.empty() ? std::filesystem::path(image_path).stem().string() : std::move(id);
    return s;
}

// --- dataset splitting --------------------------------------------------------

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

// Seeded shuffle, then contiguous assignment. A positive ratio that rounds to
// an empty split is rejected.
inline void split_dataset(Manifest& m, SplitRatios r, uint64_t seed) {
    double sum = r.train + r.validation + r.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    if (r.train < 0 || r.validation < 0 || r.test < 0)
        throw std::invalid_argument("split ratios must be non-negative");
    long n = static_cast<long>(m.entries.size());
    long n_train = std::lround(r.train * n);
    long n_val = std::lround(r.validation * n);
    if (n_train + n_val > n) n_val = n - n_train;
    long n_test = n - n_train - n_val;
    auto check = [n](double ratio, long count, const char* name) {
        if (ratio > 0.0 && count == 0)
            throw std::invalid_argument(detail::concat("split '", name, "' is empty (ratio ",
                                                       ratio, " of ", n, " samples)"));
    };
    check(r.train, n_train, "train");
    check(r.validation, n_val, "validation");
    check(r.test, n_test, "test");

    std::vector<long> order(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    RngStream rng(seed, "split");
    for (long i = n - 1; i > 0; --i) {
        long j = static_cast<long>(rng.below(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (long i = 0; i < n; ++i) {
        Split s = i < n_train ? Split::Train : i < n_train + n_val ? Split::Validation
                                                                   : Split::Test;
        m.entries[static_cast<size_t>(order[static_cast<size_t>(i)])].split = s;
    }
}

// --- synthetic data -----------------------------------------------------------

namespace detail {

// Low-frequency value noise: a coarse random grid interpolated with
// smoothstep weights.
class ValueNoise {
public:
    ValueNoise(int cells, RngStream& rng) : cells_(cells), grid_((cells + 1) * (cells + 1)) {
        for (double& v : grid_) v = rng.uniform();
    }

    double at(double v, double u) const {  // v, u in [0, 1]
        double gy = v * cells_;
        double gx = u * cells_;
        int y0 = std::min(static_cast<int>(gy), cells_ - 1);
        int x0 = std::min(static_cast<int>(gx), cells_ - 1);
        double fy = smooth(gy - y0);
        double fx = smooth(gx - x0);
        double a = grid_[idx(y0, x0)] * (1 - fx) + grid_[idx(y0, x0 + 1)] * fx;
        double b = grid_[idx(y0 + 1, x0)] * (1 - fx) + grid_[idx(y0 + 1, x0 + 1)] * fx;
        return a * (1 - fy) + b * fy;
    }

private:
    static double smooth(double t) { return t * t * (3 - 2 * t); }
    size_t idx(int y, int x) const { return static_cast<size_t>(y) * (cells_ + 1) + x; }
    int cells_;
    std::vector<double> grid_;
};

inline double segment_distance(double py, double px, double ay, double ax, double by,
                               double bx) {
    double dy = by - ay, dx = bx - ax;
    double len2 = dy * dy + dx * dx;
    double t = len2 > 0 ? ((py - ay) * dy + (px - ax) * dx) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    double ry = py - (ay + t * dy), rx = px - (ax + t * dx);
    return std::sqrt(ry * ry + rx * rx);
}

// Rounded shaft entering from a border plus a two-prong jaw at the tip.
struct Instrument {
    double ey, ex;          // entry point on the border
    double by, bx;          // jaw base
    double t1y, t1x, t2y, t2x;  // prong tips
    double half_width;
    double prong_half_width;
    double shade;           // base gray level

    bool contains(double y, double x) const {
        if (segment_distance(y, x, ey, ex, by, bx) <= half_width) return true;
        if (segment_distance(y, x, by, bx, t1y, t1x) <= prong_half_width) return true;
        if (segment_distance(y, x, by, bx, t2y, t2x) <= prong_half_width) return true;
        return false;
    }

    // Normalized position along the shaft, for axial shading.
    double axial(double y, double x) const {
        double dy = by - ey, dx = bx - ex;
        double len2 = dy * dy + dx * dx;
        if (len2 <= 0) return 0.0;
        return std::clamp(((y - ey) * dy + (x - ex) * dx) / len2, 0.0, 1.0);
    }
};

inline Instrument make_instrument(int h, int w, RngStream& rng) {
    Instrument t{};
    int side = static_cast<int>(rng.below(4));  // 0 top, 1 bottom, 2 left, 3 right
    double pos = rng.uniform(0.15, 0.85);
    double base_angle;
    switch (side) {
        case 0: t.ey = 0; t.ex = pos * w; base_angle = 0.5; break;         // pointing down
        case 1: t.ey = h - 1; t.ex = pos * w; base_angle = -0.5; break;    // pointing up
        case 2: t.ey = pos * h; t.ex = 0; base_angle = 0.0; break;         // pointing right
        default: t.ey = pos * h; t.ex = w - 1; base_angle = 1.0; break;    // pointing left
    }
    // angle in units of pi; jitter keeps the tool slanted but inward
    double ang = (base_angle + rng.uniform(-0.2, 0.2)) * std::numbers::pi;
    double diry = std::sin(ang);
    double dirx = std::cos(ang);
    if (side == 0 && diry < 0.2) diry = 0.2;
    if (side == 1 && diry > -0.2) diry = -0.2;
    if (side == 2 && dirx < 0.2) dirx = 0.2;
    if (side == 3 && dirx > -0.2) dirx = -0.2;
    double norm = std::sqrt(diry * diry + dirx * dirx);
    diry /= norm;
    dirx /= norm;

    double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    double len = rng.uniform(0.50, 0.90) * diag;
    t.half_width = rng.uniform(0.040, 0.075) * std::min(h, w);
    double jaw_len = rng.uniform(3.0, 4.5) * t.half_width;
    t.prong_half_width = rng.uniform(0.40, 0.60) * t.half_width;
    t.by = t.ey + diry * (len - jaw_len);
    t.bx = t.ex + dirx * (len - jaw_len);
    double open1 = rng.uniform(0.15, 0.35);
    double open2 = rng.uniform(0.15, 0.35);
    auto rot = [&](double a, double& oy, double& ox) {
        oy = diry * std::cos(a) + dirx * std::sin(a);
        ox = -diry * std::sin(a) + dirx * std::cos(a);
    };
    double p1y, p1x, p2y, p2x;
    rot(open1, p1y, p1x);
    rot(-open2, p2y, p2x);
    t.t1y = t.by + p1y * jaw_len;
    t.t1x = t.bx + p1x * jaw_len;
    t.t2y = t.by + p2y * jaw_len;
    t.t2x = t.bx + p2x * jaw_len;
    t.shade = rng.uniform(0.55, 0.75);
    return t;
}

}  // namespace detail

struct GenOptions {
    int count = 16;
    uint64_t seed = 0;
    int height = 64;
    int width = 64;
    std::string out_dir;
    SplitRatios ratios{1.0, 0.0, 0.0};
    uint64_t split_seed = 0;  // defaults to seed
};

// Renders `count` tool-on-tissue scenes: low-frequency reddish tissue noise,
// 1-2 metallic instruments entering from a border, specular highlight blobs,
// optional blur. The mask is the exact rasterization of the instrument shapes
// (blur applies to the image only), with foreground fraction forced into
// [2%, 40%]. Fully determined by (count, seed, size).
inline Manifest generate_synthetic(const GenOptions& opt) {
    if (opt.count < 1) throw std::invalid_argument("generate_synthetic: count must be >= 1");
    if (opt.height % 32 != 0 || opt.width % 32 != 0 || opt.height <= 0 || opt.width <= 0)
        throw std::invalid_argument(detail::concat("generate_synthetic: size ", opt.height, "x",
                                                   opt.width, " must be divisible by 32"));
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(opt.out_dir) / "images");
    fs::create_directories(fs::path(opt.out_dir) / "masks");

    Manifest manifest;
    manifest.dir = opt.out_dir;
    int h = opt.height, w = opt.width;
    long pixels = static_cast<long>(h) * w;
    std::array<double, 3> mean_acc{0.0, 0.0, 0.0};

    for (int i = 0; i < opt.count; ++i) {
        std::string tag = std::to_string(i);
        tag.insert(0, 4 - std::min<size_t>(4, tag.size()), '0');
        std::string id = "img_" + tag;
        RngStream geom(opt.seed, "sample." + tag + ".geom");
        RngStream render(opt.seed, "sample." + tag + ".render");

        // instrument geometry, redrawn until the class imbalance lands in range
        std::vector<detail::Instrument> tools;
        Image8 mask(w, h, 1);
        for (int attempt = 0; attempt < 64; ++attempt) {
            tools.clear();
            int n_tools = geom.bernoulli(0.6) ? 1 : 2;
            for (int k = 0; k < n_tools; ++k) tools.push_back(detail::make_instrument(h, w, geom));
            long fg = 0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    bool on = false;
                    for (const auto& t : tools)
                        if (t.contains(y + 0.5, x + 0.5)) { on = true; break; }
                    mask.at(y, x, 0) = on ? 255 : 0;
                    fg += on;
                }
            double frac = static_cast<double>(fg) / pixels;
            if (frac >= 0.02 && frac <= 0.40) break;
            if (attempt == 63)
                throw std::runtime_error("generate_synthetic: could not reach target foreground "
                                         "fraction for " + id);
        }

        // tissue in reddish tones, tools in metallic gray with axial shading
        detail::ValueNoise n_r(4, render), n_g(4, render), n_b(4, render), n_t(6, render);
        std::vector<double> img(static_cast<size_t>(pixels) * 3);
        auto px = [&](int y, int x, int c) -> double& {
            return img[(static_cast<size_t>(y) * w + x) * 3 + c];
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = static_cast<double>(y) / h, u = static_cast<double>(x) / w;
                const detail::Instrument* hit = nullptr;
                for (const auto& t : tools)
                    if (t.contains(y + 0.5, x + 0.5)) { hit = &t; break; }
                if (hit) {
                    double shade = hit->shade + 0.15 * (hit->axial(y + 0.5, x + 0.5) - 0.5) +
                                   0.08 * (n_t.at(v, u) - 0.5);
                    px(y, x, 0) = shade;
                    px(y, x, 1) = shade;
                    px(y, x, 2) = shade + 0.02;
                } else {
                    px(y, x, 0) = 0.45 + 0.28 * n_r.at(v, u);
                    px(y, x, 1) = 0.14 + 0.16 * n_g.at(v, u);
                    px(y, x, 2) = 0.13 + 0.14 * n_b.at(v, u);
                }
            }

        // specular highlights on both tissue and tool
        std::vector<long> tool_px;
        for (long p = 0; p < pixels; ++p)
            if (mask.px[static_cast<size_t>(p)] == 255) tool_px.push_back(p);
        int blobs = 3 + static_cast<int>(render.below(5));
        for (int bidx = 0; bidx < blobs; ++bidx) {
            double cy, cx;
            if (bidx % 2 == 1 && !tool_px.empty()) {
                long p = tool_px[render.below(tool_px.size())];
                cy = static_cast<double>(p / w);
                cx = static_cast<double>(p % w);
            } else {
                cy = render.uniform(0.0, h);
                cx = render.uniform(0.0, w);
            }
            double sigma = render.uniform(0.012, 0.035) * std::min(h, w);
            double amp = render.uniform(0.30, 0.70);
            int r = static_cast<int>(std::ceil(3 * sigma));
            for (int y = std::max(0, static_cast<int>(cy) - r);
                 y <= std::min(h - 1, static_cast<int>(cy) + r); ++y)
                for (int x = std::max(0, static_cast<int>(cx) - r);
                     x <= std::min(w - 1, static_cast<int>(cx) + r); ++x) {
                    double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    double gain = amp * std::exp(-d2 / (2 * sigma * sigma));
                    for (int c = 0; c < 3; ++c) px(y, x, c) += gain;
                }
        }

        // motion/focus blur on the image only, half the time
        if (render.bernoulli(0.5)) {
            std::vector<double> blurred(img.size());
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int c = 0; c < 3; ++c) {
                        double acc = 0.0;
                        int cnt = 0;
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                int yy = y + dy, xx = x + dx;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                                acc += px(yy, xx, c);
                                ++cnt;
                            }
                        blurred[(static_cast<size_t>(y) * w + x) * 3 + c] = acc / cnt;
                    }
            img = std::move(blurred);
        }

        Image8 out(w, h, 3);
        for (long p = 0; p < pixels * 3; ++p) {
            double v = std::clamp(img[static_cast<size_t>(p)], 0.0, 1.0);
            uint8_t q = static_cast<uint8_t>(std::lround(v * 255.0));
            out.px[static_cast<size_t>(p)] = q;
            // means taken from the quantized bytes, matching what normalize() sees
            mean_acc[static_cast<size_t>(p % 3)] += q / 255.0;
        }

        std::string image_rel = "images/" + id + ".png";
        std::string mask_rel = "masks/" + id + ".png";
        write_png((fs::path(opt.out_dir) / image_rel).string(), out);
        write_png((fs::path(opt.out_dir) / mask_rel).string(), mask);
        manifest.entries.push_back({id, image_rel, mask_rel, Split::Train});
    }

    for (int c = 0; c < 3; ++c)
        manifest.means[static_cast<size_t>(c)] =
            mean_acc[static_cast<size_t>(c)] / (static_cast<double>(pixels) * opt.count);

    split_dataset(manifest, opt.ratios, opt.split_seed ? opt.split_seed : opt.seed);
    save_manifest(manifest, (fs::path(opt.out_dir) / "manifest.txt").string());
    return manifest;
}

}  // namespace toolnet
