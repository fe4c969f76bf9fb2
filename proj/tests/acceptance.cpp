// Acceptance suite: exercises every release criterion end to end and prints
// one pass/fail line per criterion. Exit code = number of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "toolnet/bench.hpp"
#include "toolnet/checkpoint.hpp"
#include "toolnet/cli.hpp"
#include "toolnet/data.hpp"
#include "toolnet/graph.hpp"
#include "toolnet/metrics.hpp"
#include "toolnet/optim.hpp"
#include "toolnet/presets.hpp"

using namespace toolnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }

    void note(const std::string& what) {
        detail += (detail.empty() ? "" : "; ") + what;
    }
};

double now_s() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

Tensor rand_tensor(Shape s, RngStream& rng, double lo, double hi) {
    Tensor t(s);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

Tensor rand_one_hot(Shape s, RngStream& rng) {
    Tensor t(s);
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                t.at(n, static_cast<int>(rng.below(static_cast<uint64_t>(s.c))), y, x) = 1.0;
    return t;
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

std::string strip_timing_column(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
        auto comma = line.rfind(',');
        out += line.substr(0, comma) + "\n";
    }
    return out;
}

// --- criterion 1: gradient suite ------------------------------------------------

double fd_conv2d(RngStream& rng) {
    int ci = 1 + static_cast<int>(rng.below(3));
    int co = 1 + static_cast<int>(rng.below(3));
    int k = 1 + static_cast<int>(rng.below(3));
    int h = k + static_cast<int>(rng.below(4));
    int stride = 1 + static_cast<int>(rng.below(2));
    int pad = static_cast<int>(rng.below(2));
    Graph g;
    int x = g.add_param("x", {1, ci, h, h});
    int w = g.add_param("w", {co, ci, k, k});
    int b = g.add_param("b", {1, 1, 1, co});
    g.param(x).value = rand_tensor({1, ci, h, h}, rng, -1, 1);
    g.param(w).value = rand_tensor({co, ci, k, k}, rng, -1, 1);
    g.param(b).value = rand_tensor({1, 1, 1, co}, rng, -0.2, 0.2);
    NodeId conv = g.conv2d(g.param_node(x), w, b, stride, pad);
    std::vector<double> probe(static_cast<size_t>(g.shape_of(conv).numel()));
    for (auto& v : probe) v = rng.uniform(-1, 1);
    NodeId loss = g.dot_const(conv, probe);
    Runtime<double> rt(g);
    double worst = 0;
    for (const char* p : {"x", "w", "b"})
        worst = std::max(worst, finite_diff_check(rt, loss, p, 1e-5, 16));
    return worst;
}

double fd_conv_transpose2d(RngStream& rng) {
    int ci = 1 + static_cast<int>(rng.below(3));
    int co = 1 + static_cast<int>(rng.below(3));
    int stride = 1 + static_cast<int>(rng.below(2));
    int k = stride + static_cast<int>(rng.below(3));
    int h = 2 + static_cast<int>(rng.below(4));
    int max_pad = ((h - 1) * stride + k - 1) / 2;  // keeps the output non-empty
    int pad = static_cast<int>(rng.below(static_cast<uint64_t>(std::min(k, max_pad + 1))));
    Graph g;
    int x = g.add_param("x", {1, ci, h, h});
    int w = g.add_param("w", {ci, co, k, k});
    g.param(x).value = rand_tensor({1, ci, h, h}, rng, -1, 1);
    g.param(w).value = rand_tensor({ci, co, k, k}, rng, -1, 1);
    NodeId up = g.conv_transpose2d(g.param_node(x), w, stride, pad);
    std::vector<double> probe(static_cast<size_t>(g.shape_of(up).numel()));
    for (auto& v : probe) v = rng.uniform(-1, 1);
    NodeId loss = g.dot_const(up, probe);
    Runtime<double> rt(g);
    double worst = 0;
    for (const char* p : {"x", "w"})
        worst = std::max(worst, finite_diff_check(rt, loss, p, 1e-5, 16));
    return worst;
}

double fd_prelu(RngStream& rng) {
    int c = 1 + static_cast<int>(rng.below(3));
    int h = 3 + static_cast<int>(rng.below(4));
    Shape s{1, c, h, h};
    Graph g;
    int x = g.add_param("x", s);
    int a = g.add_param("a", {1, c, 1, 1});
    Tensor xv(s);
    for (double& v : xv.values()) {
        v = rng.uniform(0.05, 1.0);  // keep clear of the kink for clean differences
        if (rng.bernoulli(0.5)) v = -v;
    }
    g.param(x).value = xv;
    g.param(a).value = rand_tensor({1, c, 1, 1}, rng, -0.5, 1.0);
    NodeId act = g.prelu(g.param_node(x), a);
    std::vector<double> probe(static_cast<size_t>(s.numel()));
    for (auto& v : probe) v = rng.uniform(-1, 1);
    NodeId loss = g.dot_const(act, probe);
    Runtime<double> rt(g);
    double worst = 0;
    for (const char* p : {"x", "a"})
        worst = std::max(worst, finite_diff_check(rt, loss, p, 1e-5, 16));
    return worst;
}

double fd_softmax(RngStream& rng) {
    int c = 2 + static_cast<int>(rng.below(3));
    int h = 2 + static_cast<int>(rng.below(4));
    Shape s{1, c, h, h};
    Graph g;
    int x = g.add_param("x", s);
    g.param(x).value = rand_tensor(s, rng, -3, 3);
    NodeId sm = g.softmax_channels(g.param_node(x));
    std::vector<double> probe(static_cast<size_t>(s.numel()));
    for (auto& v : probe) v = rng.uniform(-1, 1);
    NodeId loss = g.dot_const(sm, probe);
    Runtime<double> rt(g);
    return finite_diff_check(rt, loss, "x", 1e-5, 16);
}

double fd_dice(RngStream& rng) {
    int h = 4 + static_cast<int>(rng.below(4));
    Shape s{1, 2, h, h};
    Graph g;
    int pred = g.add_param("pred", s);
    g.param(pred).value = rand_tensor(s, rng, 0.05, 0.95);
    NodeId tgt = g.target(s);
    NodeId loss = g.dice_loss(g.param_node(pred), tgt);
    Runtime<double> rt(g);
    rt.set_input(tgt, rand_one_hot(s, rng));
    return finite_diff_check(rt, loss, "pred", 1e-5, 16);  // class-weight path included
}

double fd_msdl(RngStream& rng) {
    int scales = 2 + static_cast<int>(rng.below(2));
    int h = 4 + static_cast<int>(rng.below(3));
    Shape s{1, 2, h, h};
    Graph g;
    std::vector<NodeId> preds;
    for (int j = 0; j < scales; ++j) {
        int pid = g.add_param("scores" + std::to_string(j), s);
        g.param(pid).value = rand_tensor(s, rng, -1, 1);
        preds.push_back(g.softmax_channels(g.param_node(pid)));
    }
    int wf = g.add_param("fusion.w", {1, 1, 1, scales}, Init::Const, 1.0 / scales, false);
    NodeId fused = g.softmax_channels(g.fuse_scales(preds, wf));
    NodeId tgt = g.target(s);
    std::vector<NodeId> terms{g.dice_loss(fused, tgt)};
    std::vector<double> weights{1.0};
    for (NodeId p : preds) {
        terms.push_back(g.dice_loss(p, tgt));
        weights.push_back(1.0);
    }
    NodeId total = g.weighted_sum_scalars(terms, weights);
    Runtime<double> rt(g);
    rt.set_input(tgt, rand_one_hot(s, rng));
    double worst = finite_diff_check(rt, total, "fusion.w", 1e-5, 16);
    worst = std::max(worst, finite_diff_check(rt, total, "scores0", 1e-5, 16));
    return worst;
}

Outcome criterion_gradients() {
    Outcome out;
    double t0 = now_s();
    struct OpCase {
        const char* name;
        double (*fn)(RngStream&);
    };
    const OpCase cases[] = {{"conv2d", fd_conv2d},
                            {"conv_transpose2d", fd_conv_transpose2d},
                            {"prelu", fd_prelu},
                            {"softmax", fd_softmax},
                            {"dice_loss", fd_dice},
                            {"msdl", fd_msdl}};
    double overall = 0;
    for (const auto& c : cases) {
        RngStream rng(2024, c.name);
        double worst = 0;
        for (int i = 0; i < 20; ++i) worst = std::max(worst, c.fn(rng));
        overall = std::max(overall, worst);
        out.require(worst < 1e-4, detail::concat(c.name, " max rel err ", worst));
    }
    double elapsed = now_s() - t0;
    out.require(elapsed < 120.0, detail::concat("runtime ", elapsed, "s >= 120s"));
    out.note(detail::concat("max rel err ", overall, ", ", elapsed, "s"));
    return out;
}

// --- criterion 2: soft-Dice identity ---------------------------------------------

double soft_dice_closed_form(const Tensor& pred, const Tensor& gt) {
    Shape s = pred.shape();
    double loss = 0.0;
    for (int k = 0; k < s.c; ++k) {
        double cross = 0, p2 = 0, g2 = 0;
        for (int n = 0; n < s.n; ++n)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    double p = pred.at(n, k, y, x), g = gt.at(n, k, y, x);
                    cross += p * g;
                    p2 += p * p;
                    g2 += g * g;
                }
        loss += (1.0 - 2.0 * cross / (p2 + g2 + kDiceEps)) / s.c;
    }
    return loss;
}

Outcome criterion_soft_dice_identity() {
    Outcome out;
    RngStream rng(7);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Shape s{1, 2, 16, 16};
        Tensor pred = rand_tensor(s, rng, 0, 1);
        Tensor gt = rand_one_hot(s, rng);
        worst = std::max(worst,
                         std::abs(dice_loss(pred, gt, false).loss - soft_dice_closed_form(pred, gt)));
    }
    out.require(worst < 1e-9, detail::concat("identity gap ", worst));

    Tensor pred({1, 2, 1, 2}), gt({1, 2, 1, 2});
    pred.at(0, 0, 0, 0) = 0.8;
    pred.at(0, 1, 0, 0) = 0.2;
    pred.at(0, 0, 0, 1) = 0.4;
    pred.at(0, 1, 0, 1) = 0.6;
    gt.at(0, 0, 0, 0) = 1.0;
    gt.at(0, 1, 0, 1) = 1.0;
    double got = dice_loss(pred, gt, false).loss;
    double expected = 0.2 * 0.5 / (1.8 + kDiceEps) + 0.2 * 0.5 / (1.4 + kDiceEps);
    out.require(std::abs(got - expected) < 1e-9,
                detail::concat("hand example ", got, " vs ", expected));
    out.require(std::abs(got - 0.126984) < 1e-6, "hand example differs from 0.126984");
    out.note(detail::concat("identity gap ", worst, ", hand value ", got));
    return out;
}

// --- criterion 3: loss anchors ----------------------------------------------------

Outcome criterion_loss_anchors() {
    Outcome out;
    RngStream rng(8);
    Shape s{1, 2, 16, 16};
    Tensor gt = rand_one_hot(s, rng);
    double perfect = dice_loss(gt, gt, false).loss;
    out.require(perfect < 1e-6, detail::concat("perfect prediction loss ", perfect));

    Tensor comp(s);
    for (long i = 0; i < gt.numel(); ++i)
        comp[static_cast<size_t>(i)] = 1.0 - gt[static_cast<size_t>(i)];
    double worst_case = dice_loss(comp, gt, false).loss;
    out.require(std::abs(worst_case - 1.0) < 1e-6,
                detail::concat("complement loss ", worst_case));

    Tensor pred = rand_tensor(s, rng, 0, 1);
    std::vector<Tensor> preds{pred};
    MSDLConfig cfg{1, 1.0, {}};
    double msdl_value = msdl(preds, pred, gt, cfg, false).loss;
    double dice_value = dice_loss(pred, gt, false).loss;
    out.require(msdl_value == 2.0 * dice_value, "degenerate multi-scale loss != 2 x Dice");
    out.note(detail::concat("perfect ", perfect, ", complement ", worst_case));
    return out;
}

// --- criterion 4: CLR anchors -------------------------------------------------------

Outcome criterion_clr() {
    Outcome out;
    CLRPolicy p{1e-7, 1e-5, 100};
    out.require(std::abs(clr_lr(0, p) - 1e-7) < 1e-12, "lr(0) != base");
    out.require(std::abs(clr_lr(100, p) - 1e-5) < 1e-12, "lr(stepsize) != max");
    out.require(std::abs(clr_lr(200, p) - 1e-7) < 1e-12, "lr(2*stepsize) != base");
    out.require(std::abs(clr_lr(150, p) - 5.05e-6) < 1e-12,
                detail::concat("lr(150) = ", clr_lr(150, p)));
    return out;
}

// --- criterion 5: metric oracle ------------------------------------------------------

ConfusionCounts confusion_enumeration(const BinaryMask& pred, const BinaryMask& gt) {
    ConfusionCounts c;
    for (int k = 0; k < 2; ++k)
        for (size_t i = 0; i < pred.v.size(); ++i) {
            bool p = pred.v[i] == k, g = gt.v[i] == k;
            if (p && g) ++c.tp[k];
            if (p && !g) ++c.fp[k];
            if (!p && g) ++c.fn[k];
            if (!p && !g) ++c.tn[k];
        }
    return c;
}

Outcome criterion_metrics() {
    Outcome out;
    RngStream rng(9);
    for (int trial = 0; trial < 100 && out.pass; ++trial) {
        BinaryMask pred(16, 16), gt(16, 16);
        for (auto& v : pred.v) v = rng.bernoulli(rng.uniform(0.1, 0.9));
        for (auto& v : gt.v) v = rng.bernoulli(rng.uniform(0.1, 0.9));
        ConfusionCounts fast = confusion(pred, gt);
        ConfusionCounts slow = confusion_enumeration(pred, gt);
        for (int k = 0; k < 2; ++k) {
            out.require(fast.tp[k] == slow.tp[k] && fast.fp[k] == slow.fp[k] &&
                            fast.fn[k] == slow.fn[k] && fast.tn[k] == slow.tn[k],
                        "confusion disagrees with enumeration");
        }
        out.require(mean_dsc(fast) >= mean_iou(fast), "mean DSC < mean IoU");
    }

    // 4x4 hand example: TP=3, FP=2, FN=1, TN=10
    BinaryMask pred(4, 4), gt(4, 4);
    gt.v[0] = gt.v[1] = gt.v[2] = gt.v[3] = 1;
    pred.v[0] = pred.v[1] = pred.v[2] = pred.v[8] = pred.v[9] = 1;
    ConfusionCounts c = confusion(pred, gt);
    double iou = mean_iou(c), dsc = mean_dsc(c), bal = balanced_accuracy_fg(c);
    out.require(std::abs(iou - (3.0 / 6.0 + 10.0 / 13.0) / 2.0) < 1e-9,
                detail::concat("mean IoU ", iou));
    // hand evaluation of 2TP/(2TP+FP+FN): fg 6/9, bg 20/23 (a printed 6/10
    // fails the formula; the enumeration oracle fixes the constant)
    out.require(std::abs(dsc - (6.0 / 9.0 + 20.0 / 23.0) / 2.0) < 1e-9,
                detail::concat("mean DSC ", dsc));
    out.require(std::abs(bal - 0.5 * (0.75 + 10.0 / 12.0)) < 1e-9,
                detail::concat("balanced accuracy ", bal));
    out.note(detail::concat("hand values ", iou, " / ", dsc, " / ", bal));
    return out;
}

// --- criteria 6, 7, 10: overfit runs, deep supervision, determinism -------------------

struct OverfitArtifacts {
    bool ok = false;
    std::string detail;
    double h_dsc = 0, ms_dsc = 0;
    double h_seconds = 0, ms_seconds = 0;
    std::vector<double> h_terms_before, h_terms_after;
    std::string run1_dir, run2_dir;
};

double train_mean_dsc(Network& net, const std::vector<TrainSample>& data) {
    Runtime<double> rt(net.graph);
    double acc = 0;
    for (const auto& s : data) {
        ScalePredictions preds = run_forward(net, rt, s.image, false);
        ConfusionCounts c = confusion(argmax_mask(preds.final_map), argmax_mask(s.target));
        acc += mean_dsc(c);
    }
    return acc / static_cast<double>(data.size());
}

OverfitArtifacts run_overfit(const std::string& scratch) {
    OverfitArtifacts art;
    OverfitPreset preset = overfit_desk_preset();

    GenOptions gen;
    gen.count = preset.n_images;
    gen.seed = preset.data_seed;
    gen.height = preset.arch.input_h;
    gen.width = preset.arch.input_w;
    gen.out_dir = scratch + "/data";
    gen.ratios = {1.0, 0.0, 0.0};
    Manifest manifest = generate_synthetic(gen);
    auto samples = load_split_samples(manifest, Split::Train);

    auto one_run = [&](const std::string& tag, const std::string& out_dir, double& dsc,
                       double& seconds, std::vector<double>* before,
                       std::vector<double>* after) {
        Network net = build_network(tag, preset.arch, preset.train_seed);
        TrainConfig cfg = preset.train_config();
        cfg.out_dir = out_dir;
        double t0 = now_s();
        if (before) {
            Runtime<double> rt(net.graph);
            *before = measure_loss_terms(net, rt, samples);
        }
        train_loop(net, samples, cfg);
        seconds = now_s() - t0;
        if (after) {
            Runtime<double> rt(net.graph);
            *after = measure_loss_terms(net, rt, samples);
        }
        dsc = train_mean_dsc(net, samples);
    };

    art.run1_dir = scratch + "/h_run1";
    art.run2_dir = scratch + "/h_run2";
    one_run("toolnet-h", art.run1_dir, art.h_dsc, art.h_seconds, &art.h_terms_before,
            &art.h_terms_after);
    double dsc2 = 0, sec2 = 0;
    one_run("toolnet-h", art.run2_dir, dsc2, sec2, nullptr, nullptr);
    one_run("toolnet-ms", scratch + "/ms_run", art.ms_dsc, art.ms_seconds, nullptr, nullptr);
    art.ok = true;
    return art;
}

Outcome criterion_overfit(const OverfitArtifacts& art) {
    Outcome out;
    out.require(art.ok, "overfit runs did not complete");
    if (!art.ok) return out;
    out.require(art.h_dsc >= 0.95, detail::concat("toolnet-h train mean DSC ", art.h_dsc));
    out.require(art.ms_dsc >= 0.90, detail::concat("toolnet-ms train mean DSC ", art.ms_dsc));
    out.require(art.h_seconds < 600, detail::concat("toolnet-h run took ", art.h_seconds, "s"));
    out.require(art.ms_seconds < 600, detail::concat("toolnet-ms run took ", art.ms_seconds, "s"));
    auto ck1 = read_bytes(art.run1_dir + "/final.tnck");
    auto ck2 = read_bytes(art.run2_dir + "/final.tnck");
    out.require(!ck1.empty() && ck1 == ck2, "repeated seeded run is not bitwise identical");
    out.note(detail::concat("DSC h=", art.h_dsc, " ms=", art.ms_dsc, "; ", art.h_seconds,
                            "s/", art.ms_seconds, "s"));
    return out;
}

Outcome criterion_deep_supervision(const OverfitArtifacts& art) {
    Outcome out;
    out.require(art.ok, "overfit runs did not complete");
    if (!art.ok) return out;
    // terms: [total, fused, s1..sM] measured over the train set before/after
    out.require(art.h_terms_before.size() == art.h_terms_after.size() &&
                    art.h_terms_before.size() >= 3,
                "missing per-scale loss terms");
    for (size_t i = 1; i < art.h_terms_before.size(); ++i) {
        out.require(art.h_terms_after[i] < art.h_terms_before[i],
                    detail::concat("term ", i, " did not decrease: ", art.h_terms_before[i],
                                   " -> ", art.h_terms_after[i]));
    }
    if (out.pass)
        out.note(detail::concat("all ", art.h_terms_before.size() - 1,
                                " loss terms decreased (fused + per-scale)"));
    return out;
}

Outcome criterion_determinism(const OverfitArtifacts& art) {
    Outcome out;
    out.require(art.ok, "overfit runs did not complete");
    if (!art.ok) return out;
    auto ck1 = read_bytes(art.run1_dir + "/final.tnck");
    auto ck2 = read_bytes(art.run2_dir + "/final.tnck");
    out.require(!ck1.empty() && ck1 == ck2, "checkpoints differ across identical seeds");

    auto log1 = read_bytes(art.run1_dir + "/train_log.csv");
    auto log2 = read_bytes(art.run2_dir + "/train_log.csv");
    std::string s1(log1.begin(), log1.end()), s2(log2.begin(), log2.end());
    // wall-clock column masked: timing is the one non-deterministic field
    out.require(!s1.empty() && strip_timing_column(s1) == strip_timing_column(s2),
                "train logs differ across identical seeds");

    Network loaded = load_network(art.run1_dir + "/final.tnck");
    std::string resaved = art.run1_dir + "/resaved.tnck";
    save_checkpoint(resaved, loaded);
    out.require(read_bytes(resaved) == ck1, "save/load round trip changed bytes");
    return out;
}

// --- criterion 8: parameter counts ---------------------------------------------------

Outcome criterion_parameter_counts() {
    Outcome out;
    Graph hand;
    hand.add_param("w", {4, 2, 3, 3});
    hand.add_param("b", {1, 1, 1, 4});
    out.require(count_parameters(hand) == 76, "hand-counted convolution != 76");

    long ms = count_parameters(build_toolnet_ms(full_toolnet_config(), 0, false).graph);
    long h = count_parameters(build_toolnet_h(full_toolnet_config(), 0, false).graph);
    long base = count_parameters(build_baseline_fcn8s(full_baseline_config(), 0, false).graph);
    out.require(ms >= 6'500'000 && ms <= 8'500'000, detail::concat("cascade count ", ms));
    out.require(h >= 6'500'000 && h <= 8'500'000, detail::concat("holistic count ", h));
    out.require(h > ms, "holistic count not above cascade count");
    out.require(base >= 10 * ms, detail::concat("baseline count ", base, " < 10x ", ms));
    out.note(detail::concat("ms=", ms, " h=", h, " baseline=", base));
    return out;
}

// --- criterion 9: benchmark ordering ---------------------------------------------------

Outcome criterion_benchmark(const std::string& scratch) {
    Outcome out;
    Network ms = build_toolnet_ms(desk_toolnet_config(), 1);
    Network base = build_baseline_fcn8s(desk_baseline_config(), 1);
    long pms = count_parameters(ms.graph);
    long pbase = count_parameters(base.graph);
    out.require(pbase >= 10 * pms, detail::concat("baseline ", pbase, " < 10x ", pms));

    BenchReport rms = bench_latency<float>(ms, 500, 20);
    BenchReport rbase = bench_latency<float>(base, 500, 20);
    out.require(rms.mean_ms() < rbase.mean_ms(),
                detail::concat("ordering violated: ", rms.mean_ms(), " vs ", rbase.mean_ms()));
    out.note(detail::concat("mean ms ", rms.mean_ms(), " (cascade) vs ", rbase.mean_ms(),
                            " (baseline), 500 repeats"));
    std::ofstream(scratch + "/bench_ms.tsv") << format_bench_report(rms);
    std::ofstream(scratch + "/bench_baseline.tsv") << format_bench_report(rbase);
    return out;
}

}  // namespace

int main() {
    std::string scratch = (fs::temp_directory_path() / "toolnet_acceptance").string();
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    int failures = 0;
    auto report = [&failures](int id, const std::string& name, const Outcome& out) {
        std::printf("criterion %2d [%s] %s%s%s\n", id, out.pass ? "PASS" : "FAIL", name.c_str(),
                    out.detail.empty() ? "" : " -- ", out.detail.c_str());
        std::fflush(stdout);
        if (!out.pass) ++failures;
    };

    report(1, "gradient suite (finite differences < 1e-4, < 2 min)", criterion_gradients());
    report(2, "soft-Dice identity (< 1e-9 on 1000 pairs + hand value)",
           criterion_soft_dice_identity());
    report(3, "loss anchors (perfect / complement / degenerate multi-scale)",
           criterion_loss_anchors());
    report(4, "cyclical learning-rate anchors", criterion_clr());
    report(5, "metric oracle (enumeration + hand values + DSC >= IoU)", criterion_metrics());

    OverfitArtifacts art;
    try {
        art = run_overfit(scratch);
    } catch (const std::exception& e) {
        art.ok = false;
        art.detail = e.what();
    }
    Outcome c6 = criterion_overfit(art);
    if (!art.detail.empty()) c6.note(art.detail);
    report(6, "overfit runs (train mean DSC: holistic >= 0.95, cascade >= 0.90)", c6);
    report(7, "deep supervision (every per-scale term decreases)",
           criterion_deep_supervision(art));
    report(8, "parameter-count targets", criterion_parameter_counts());

    Outcome c9;
    try {
        c9 = criterion_benchmark(scratch);
    } catch (const std::exception& e) {
        c9.pass = false;
        c9.detail = e.what();
    }
    report(9, "benchmark ordering (cascade faster than 10x baseline)", c9);
    report(10, "determinism (checkpoints, logs, save/load round trip)",
           criterion_determinism(art));

    if (failures == 0) std::printf("all criteria passed\n");
    return failures;
}
