#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "toolnet/graph.hpp"

namespace toolnet {

enum class Activation { PReLU, ReLU };

// Topology knobs shared by all three builders. Stage j (1-based) runs at
// 1/2^(j-1) of the input resolution with width
// round(min(base_width * growth^(j-1), width_cap) * width_multiplier).
struct ArchConfig {
    int in_channels = 3;
    int num_classes = 2;
    int scales = 6;  // M: number of prediction scales / encoder stages
    int base_width = 32;
    int width_cap = 448;
    double width_growth = 2.0;
    double width_multiplier = 1.0;
    int input_h = 64;
    int input_w = 64;
    bool renorm_fused = true;  // softmax the fused map before loss and mask
    double dropout_p = 0.5;
    Activation activation = Activation::PReLU;

    int downsample_factor() const { return 1 << (scales - 1); }

    int stage_width(int j) const {
        double w = base_width * std::pow(width_growth, j - 1);
        if (w > width_cap) w = width_cap;
        w *= width_multiplier;
        long r = std::lround(w);
        return r < 1 ? 1 : static_cast<int>(r);
    }

    void validate() const {
        if (scales < 2) throw std::invalid_argument("arch: need at least 2 scales");
        if (base_width < 1) throw std::invalid_argument("arch: base_width must be >= 1");
        if (in_channels < 1 || num_classes < 2)
            throw std::invalid_argument("arch: bad channel configuration");
        if (width_growth < 1.0 || width_multiplier <= 0.0)
            throw std::invalid_argument("arch: bad width scaling");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw std::invalid_argument("arch: dropout probability must be in [0,1)");
        int f = downsample_factor();
        if (input_h < f || input_w < f || input_h % f != 0 || input_w % f != 0)
            throw std::invalid_argument(detail::concat(
                "arch: input ", input_h, "x", input_w, " must be divisible by ", f,
                " for ", scales, " scales; resize the input (no silent padding)"));
    }
};

// The maps a forward pass produces: the M per-scale predictions (holistic
// variant only), the fused prediction, and the map the final mask comes from.
struct ScalePredictions {
    std::vector<Tensor> per_scale;
    Tensor fused;
    Tensor final_map;
    bool has_fused = false;
};

// A built graph plus the node ids of its taps.
struct Network {
    Graph graph{0};
    ArchConfig cfg;
    std::string tag;
    NodeId input = -1;
    NodeId target = -1;
    std::vector<NodeId> scale_preds;   // softmaxed full-resolution maps (toolnet-h)
    NodeId fused_pred = -1;            // toolnet-h
    NodeId final_pred = -1;
    std::vector<NodeId> scale_losses;  // toolnet-h per-scale Dice terms
    NodeId fused_loss = -1;            // toolnet-h
    NodeId total_loss = -1;
    NodeId pre_upsample = -1;          // baseline: score map before the final upsample
};

namespace detail {

struct EncoderTaps {
    std::vector<NodeId> stage_out;  // final activation of each stage, coarsest last
    std::vector<int> widths;
};

// M stages of two 3x3 convolutions + activation each, 2x2 maxpool between
// stages, dropout after the last (smallest-scale) activation.
inline EncoderTaps build_encoder(Graph& g, NodeId x, const ArchConfig& cfg) {
    EncoderTaps taps;
    NodeId cur = x;
    int in_ch = cfg.in_channels;
    for (int j = 1; j <= cfg.scales; ++j) {
        int width = cfg.stage_width(j);
        std::string stage = "enc" + std::to_string(j);
        for (int conv = 1; conv <= 2; ++conv) {
            std::string base = stage + ".conv" + std::to_string(conv);
            int w = g.add_param(base + ".w", {width, in_ch, 3, 3}, Init::He);
            int b = g.add_param(base + ".b", {1, 1, 1, width}, Init::Zeros);
            cur = g.conv2d(cur, w, b, 1, 1, base);
            if (cfg.activation == Activation::PReLU) {
                int a = g.add_param(stage + ".act" + std::to_string(conv) + ".a",
                                    {1, width, 1, 1}, Init::Const, 0.25, /*decay=*/false);
                cur = g.prelu(cur, a, stage + ".act" + std::to_string(conv));
            } else {
                cur = g.relu(cur, stage + ".act" + std::to_string(conv));
            }
            in_ch = width;
        }
        if (j == cfg.scales) cur = g.dropout(cur, cfg.dropout_p, stage + ".dropout");
        taps.stage_out.push_back(cur);
        taps.widths.push_back(width);
        if (j < cfg.scales) cur = g.maxpool2d(cur, 2, 2, stage + ".pool");
    }
    return taps;
}

// 1x1 convolution producing K class scores; zero-initialized so untrained
// networks start from the uniform prediction.
inline NodeId score_head(Graph& g, NodeId x, int width, int classes, const std::string& name) {
    int w = g.add_param(name + ".w", {classes, width, 1, 1}, Init::Zeros);
    int b = g.add_param(name + ".b", {1, 1, 1, classes}, Init::Zeros);
    return g.conv2d(x, w, b, 1, 0, name);
}

// Trainable transposed convolution initialized to bilinear interpolation.
inline NodeId upsample(Graph& g, NodeId x, int channels, int factor, const std::string& name) {
    int k = 2 * factor - factor % 2;
    int w = g.add_param(name + ".w", {channels, channels, k, k}, Init::Bilinear,
                        static_cast<double>(factor));
    return g.conv_transpose2d(x, w, factor, bilinear_pad(factor), name);
}

}  // namespace detail

// Cascaded variant: class scores at every scale, summed coarse-to-fine with a
// learned 2x upsample between consecutive scales, one Dice loss on the final
// softmax.
inline Network build_toolnet_ms(const ArchConfig& cfg, uint64_t seed = 0,
                                bool materialize = true) {
    cfg.validate();
    Network net;
    net.cfg = cfg;
    net.tag = "toolnet-ms";
    net.graph = Graph(seed, materialize);
    Graph& g = net.graph;
    net.input = g.input({1, cfg.in_channels, cfg.input_h, cfg.input_w});
    auto taps = detail::build_encoder(g, net.input, cfg);
    std::vector<NodeId> scores;
    for (int j = 1; j <= cfg.scales; ++j)
        scores.push_back(detail::score_head(g, taps.stage_out[j - 1], taps.widths[j - 1],
                                            cfg.num_classes, "score" + std::to_string(j)));
    NodeId run = scores.back();
    for (int j = cfg.scales - 1; j >= 1; --j) {
        NodeId up = detail::upsample(g, run, cfg.num_classes, 2, "up" + std::to_string(j));
        run = g.add(up, scores[j - 1], "sum" + std::to_string(j));
    }
    net.final_pred = g.softmax_channels(run, "final");
    net.target = g.target({1, cfg.num_classes, cfg.input_h, cfg.input_w});
    net.total_loss = g.dice_loss(net.final_pred, net.target, "loss");
    return net;
}

// Holistically-nested variant: every scale's score is upsampled straight to
// full resolution and softmaxed, the fused prediction is a learned weighted
// sum of the per-scale maps, and the training objective is the multi-scale
// Dice loss over all M + 1 terms.
inline Network build_toolnet_h(const ArchConfig& cfg, uint64_t seed = 0,
                               bool materialize = true) {
    cfg.validate();
    Network net;
    net.cfg = cfg;
    net.tag = "toolnet-h";
    net.graph = Graph(seed, materialize);
    Graph& g = net.graph;
    net.input = g.input({1, cfg.in_channels, cfg.input_h, cfg.input_w});
    auto taps = detail::build_encoder(g, net.input, cfg);
    for (int j = 1; j <= cfg.scales; ++j) {
        NodeId score = detail::score_head(g, taps.stage_out[j - 1], taps.widths[j - 1],
                                          cfg.num_classes, "score" + std::to_string(j));
        if (j > 1)
            score = detail::upsample(g, score, cfg.num_classes, 1 << (j - 1),
                                     "up" + std::to_string(j));
        net.scale_preds.push_back(
            g.softmax_channels(score, "pred" + std::to_string(j)));
    }
    int wfuse = g.add_param("fusion.w", {1, 1, 1, cfg.scales}, Init::Const,
                            1.0 / cfg.scales, /*decay=*/false);
    NodeId fused_raw = g.fuse_scales(net.scale_preds, wfuse, "fusion");
    net.fused_pred = cfg.renorm_fused ? g.softmax_channels(fused_raw, "fused") : fused_raw;
    net.final_pred = net.fused_pred;
    net.target = g.target({1, cfg.num_classes, cfg.input_h, cfg.input_w});
    MSDLConfig loss_cfg{cfg.scales, 1.0, {}};
    net.fused_loss = g.dice_loss(net.fused_pred, net.target, "loss_fused");
    std::vector<NodeId> terms{net.fused_loss};
    std::vector<double> weights{loss_cfg.lambda_bar};
    for (int j = 1; j <= cfg.scales; ++j) {
        NodeId d = g.dice_loss(net.scale_preds[j - 1], net.target,
                               "loss_s" + std::to_string(j));
        net.scale_losses.push_back(d);
        terms.push_back(d);
        weights.push_back(loss_cfg.scale_weight(static_cast<size_t>(j - 1)));
    }
    net.total_loss = g.weighted_sum_scalars(terms, weights, "loss");
    return net;
}

// Width-configurable stand-in for the classic fully convolutional baseline:
// same encoder family with ReLU activations, predictions fused only from the
// three coarsest scales, and a final upsample of a 1/8-resolution score map.
inline Network build_baseline_fcn8s(const ArchConfig& cfg_in, uint64_t seed = 0,
                                    bool materialize = true) {
    ArchConfig cfg = cfg_in;
    cfg.activation = Activation::ReLU;
    cfg.validate();
    if (cfg.scales < 4)
        throw std::invalid_argument("baseline: needs at least 4 scales for the skip pattern");
    Network net;
    net.cfg = cfg;
    net.tag = "baseline";
    net.graph = Graph(seed, materialize);
    Graph& g = net.graph;
    net.input = g.input({1, cfg.in_channels, cfg.input_h, cfg.input_w});
    auto taps = detail::build_encoder(g, net.input, cfg);
    int m = cfg.scales;
    NodeId run = detail::score_head(g, taps.stage_out[m - 1], taps.widths[m - 1],
                                    cfg.num_classes, "score" + std::to_string(m));
    for (int j = m - 1; j >= m - 2; --j) {
        NodeId skip = detail::score_head(g, taps.stage_out[j - 1], taps.widths[j - 1],
                                         cfg.num_classes, "score" + std::to_string(j));
        NodeId up = detail::upsample(g, run, cfg.num_classes, 2, "up" + std::to_string(j));
        run = g.add(up, skip, "sum" + std::to_string(j));
    }
    net.pre_upsample = run;  // 1 / 2^(M-3) of the input resolution
    run = detail::upsample(g, run, cfg.num_classes, 1 << (m - 3), "up_final");
    net.final_pred = g.softmax_channels(run, "final");
    net.target = g.target({1, cfg.num_classes, cfg.input_h, cfg.input_w});
    net.total_loss = g.dice_loss(net.final_pred, net.target, "loss");
    return net;
}

inline Network build_network(const std::string& tag, const ArchConfig& cfg, uint64_t seed = 0,
                             bool materialize = true) {
    if (tag == "toolnet-ms") return build_toolnet_ms(cfg, seed, materialize);
    if (tag == "toolnet-h") return build_toolnet_h(cfg, seed, materialize);
    if (tag == "baseline") return build_baseline_fcn8s(cfg, seed, materialize);
    throw std::invalid_argument("unknown architecture tag: " + tag);
}

// Runs one image through the network and collects every prediction map.
// Train mode enables dropout (masks keyed on the runtime's iteration); eval
// mode is deterministic.
inline ScalePredictions run_forward(Network& net, Runtime<double>& rt, const Tensor& image,
                                    bool train = false, long iteration = 0) {
    Shape want = net.graph.shape_of(net.input);
    if (image.shape().c != want.c)
        throw_shape_error("forward: image has ", image.shape().c, " channels, expected ",
                          want.c);
    if (image.shape() != want)
        throw_shape_error("forward: image ", image.shape().str(), " does not match network input ",
                          want.str(), "; spatial dims must be divisible by ",
                          net.cfg.downsample_factor(), " (resize the input, no silent padding)");
    rt.set_train(train);
    rt.set_iteration(iteration);
    rt.set_input(net.input, image);
    rt.forward(net.final_pred);
    ScalePredictions out;
    for (NodeId id : net.scale_preds) out.per_scale.push_back(rt.value(id));
    if (net.fused_pred >= 0) {
        out.fused = rt.value(net.fused_pred);
        out.has_fused = true;
    }
    out.final_map = rt.value(net.final_pred);
    return out;
}

}  // namespace toolnet
