#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "toolnet/bench.hpp"
#include "toolnet/checkpoint.hpp"
#include "toolnet/data.hpp"
#include "toolnet/metrics.hpp"
#include "toolnet/optim.hpp"
#include "toolnet/presets.hpp"

namespace toolnet::cli {

namespace detail {

inline std::pair<int, int> parse_size(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos)
        throw CLI::ValidationError("--size", "expected HxW, e.g. 64x64, got '" + s + "'");
    int h = std::stoi(s.substr(0, x));
    int w = std::stoi(s.substr(x + 1));
    if (h <= 0 || w <= 0) throw CLI::ValidationError("--size", "size must be positive");
    return {h, w};
}

inline SplitRatios parse_ratios(const std::string& s) {
    SplitRatios r;
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &r.train, &r.validation, &r.test) != 3)
        throw CLI::ValidationError("--ratios", "expected three comma-separated values");
    return r;
}

inline std::vector<LrRange> parse_ranges(const std::string& s) {
    std::vector<LrRange> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos)
            throw CLI::ValidationError("--ranges", "expected base:max pairs, got '" + item + "'");
        out.push_back({std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
    }
    if (out.empty()) throw CLI::ValidationError("--ranges", "no ranges given");
    return out;
}

// Resolved-configuration audit trail, written next to a run's outputs.
inline void write_resolved_config(const CLI::App* sub, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write resolved config: " + path);
    out << sub->config_to_str(/*default_also=*/true, /*write_description=*/false);
}

struct ArchFlags {
    std::string preset = "desk";
    int scales = 0;
    int base_width = 0;
    int width_cap = 0;
    double width_growth = 0.0;
    double width_mult = 0.0;
    double dropout = -1.0;
    bool no_renorm_fused = false;

    void attach(CLI::App* sub) {
        sub->add_option("--preset", preset, "Width preset: desk, full, or baseline-desk/baseline-full")
            ->capture_default_str();
        sub->add_option("--scales", scales, "Number of prediction scales (encoder stages)");
        sub->add_option("--base-width", base_width, "Channels at the first stage");
        sub->add_option("--width-cap", width_cap, "Maximum stage width");
        sub->add_option("--width-growth", width_growth, "Per-stage width multiplier");
        sub->add_option("--width-mult", width_mult, "Global width multiplier");
        sub->add_option("--dropout", dropout, "Dropout probability at the smallest scale");
        sub->add_flag("--no-renorm-fused", no_renorm_fused,
                      "Skip the softmax over the fused prediction");
    }

    ArchConfig resolve(const std::string& arch_tag) const {
        ArchConfig cfg;
        if (preset == "desk")
            cfg = arch_tag == "baseline" ? desk_baseline_config() : desk_toolnet_config();
        else if (preset == "full")
            cfg = arch_tag == "baseline" ? full_baseline_config() : full_toolnet_config();
        else if (preset == "baseline-desk")
            cfg = desk_baseline_config();
        else if (preset == "baseline-full")
            cfg = full_baseline_config();
        else
            throw CLI::ValidationError("--preset", "unknown preset '" + preset + "'");
        if (scales > 0) cfg.scales = scales;
        if (base_width > 0) cfg.base_width = base_width;
        if (width_cap > 0) cfg.width_cap = width_cap;
        if (width_growth > 0) cfg.width_growth = width_growth;
        if (width_mult > 0) cfg.width_multiplier = width_mult;
        if (dropout >= 0) cfg.dropout_p = dropout;
        if (no_renorm_fused) cfg.renorm_fused = false;
        return cfg;
    }
};

inline std::vector<TrainSample> load_train_split(const Manifest& manifest, Split split) {
    std::vector<TrainSample> samples = load_split_samples(manifest, split);
    if (samples.empty())
        throw std::runtime_error(toolnet::detail::concat("no samples in split '",
                                                         split_name(split), "'"));
    Shape first = samples.front().image.shape();
    for (const auto& s : samples)
        if (s.image.shape() != first)
            throw std::runtime_error("training images must share one size; '" + s.id +
                                     "' differs");
    return samples;
}

}  // namespace detail

// Dispatches gen-data | train | infer | eval | bench | lr-range-test.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Lightweight multi-scale networks for binary tool segmentation"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads for the compute kernels")
        ->capture_default_str();

    // --- gen-data ---------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic tool-on-tissue dataset");
    int gen_n = 16;
    uint64_t gen_seed = 7;
    std::string gen_size = "64x64";
    std::string gen_out;
    std::string gen_ratios = "0.8,0.1,0.1";
    gen->add_option("--n", gen_n, "Number of image/mask pairs")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--size", gen_size, "Image size HxW (divisible by 32)")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--ratios", gen_ratios, "train,validation,test split ratios")
        ->capture_default_str();
    gen->set_config("--config");

    // --- train ------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train an architecture on a manifest");
    std::string tr_arch, tr_manifest, tr_out;
    detail::ArchFlags tr_flags;
    TrainConfig tr_cfg;
    double tr_base_lr = 1e-7, tr_max_lr = 1e-5;
    long tr_stepsize = 0;
    double tr_lr_scale = 1.0;
    train->add_option("--arch", tr_arch, "toolnet-ms | toolnet-h | baseline")
        ->required()
        ->check(CLI::IsMember({"toolnet-ms", "toolnet-h", "baseline"}));
    train->add_option("--manifest", tr_manifest, "Dataset manifest")->required();
    train->add_option("--out", tr_out, "Run directory for checkpoints and logs")->required();
    train->add_option("--seed", tr_cfg.seed, "Training seed")->capture_default_str();
    train->add_option("--base-lr", tr_base_lr, "Lower learning-rate bound")->capture_default_str();
    train->add_option("--max-lr", tr_max_lr, "Upper learning-rate bound")->capture_default_str();
    train->add_option("--lr-scale", tr_lr_scale, "Multiplier applied to both bounds")
        ->capture_default_str();
    train->add_option("--stepsize", tr_stepsize,
                      "Iterations per half-cycle (0 = 2 x train-split size)")
        ->capture_default_str();
    train->add_option("--momentum", tr_cfg.momentum, "SGD momentum")->capture_default_str();
    train->add_option("--weight-decay", tr_cfg.weight_decay, "L2 weight decay")
        ->capture_default_str();
    train->add_option("--batch-size", tr_cfg.batch_size, "Batch size (must be 1)")
        ->capture_default_str();
    train->add_option("--ckpt-every", tr_cfg.checkpoint_every,
                      "Checkpoint interval in iterations (0 = once per stepsize)")
        ->capture_default_str();
    tr_flags.attach(train);
    train->set_config("--config");

    // --- infer --------------------------------------------------------------
    auto* infer = app.add_subcommand("infer", "Segment one image with a trained checkpoint");
    std::string in_ckpt, in_image, in_out, in_precision = "f64", in_manifest, in_means;
    infer->add_option("--checkpoint", in_ckpt, "Checkpoint path")->required();
    infer->add_option("--image", in_image, "Input image (PNG)")->required();
    infer->add_option("--out", in_out, "Output mask path (PNG, 0/255)")->required();
    infer->add_option("--manifest", in_manifest,
                      "Manifest whose header supplies the normalization means");
    infer->add_option("--means", in_means, "Normalization means r,g,b (default 0.5,0.5,0.5)");
    infer->add_option("--precision", in_precision, "f32 | f64")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();

    // --- eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    std::string ev_ckpt, ev_manifest, ev_split = "test", ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
    ev->add_option("--split", ev_split, "train | validation | test")->capture_default_str();
    ev->add_option("--out", ev_out, "Write the metric table here (default: stdout only)");

    // --- bench ----------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "Measure single-frame inference latency");
    std::string be_ckpt, be_size, be_out, be_precision = "f32";
    int be_repeats = 500, be_warmup = 20;
    bench->add_option("--checkpoint", be_ckpt, "Checkpoint path")->required();
    bench->add_option("--size", be_size, "Input size HxW (default: checkpoint input size)");
    bench->add_option("--repeats", be_repeats, "Timed inferences")->capture_default_str();
    bench->add_option("--warmup", be_warmup, "Untimed warmup inferences")->capture_default_str();
    bench->add_option("--precision", be_precision, "f32 | f64")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    bench->add_option("--out", be_out, "Write the full report here (default: summary to stdout)");

    // --- lr-range-test -----------------------------------------------------------
    auto* lrt = app.add_subcommand("lr-range-test",
                                   "Sweep candidate learning-rate ranges for stepsize iterations");
    std::string lr_arch, lr_manifest, lr_ranges = "1e-8:1e-6,1e-7:1e-5,1e-6:1e-4";
    long lr_stepsize = 0;
    uint64_t lr_seed = 1;
    detail::ArchFlags lr_flags;
    lrt->add_option("--arch", lr_arch, "toolnet-ms | toolnet-h | baseline")
        ->required()
        ->check(CLI::IsMember({"toolnet-ms", "toolnet-h", "baseline"}));
    lrt->add_option("--manifest", lr_manifest, "Dataset manifest")->required();
    lrt->add_option("--ranges", lr_ranges, "Comma-separated base:max pairs")
        ->capture_default_str();
    lrt->add_option("--stepsize", lr_stepsize, "Sweep length (0 = 2 x train-split size)")
        ->capture_default_str();
    lrt->add_option("--seed", lr_seed, "Seed")->capture_default_str();
    lr_flags.attach(lrt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    set_num_threads(threads);
    namespace fs = std::filesystem;
    try {
        if (gen->parsed()) {
            auto [h, w] = detail::parse_size(gen_size);
            GenOptions opt;
            opt.count = gen_n;
            opt.seed = gen_seed;
            opt.height = h;
            opt.width = w;
            opt.out_dir = gen_out;
            opt.ratios = detail::parse_ratios(gen_ratios);
            Manifest m = generate_synthetic(opt);
            detail::write_resolved_config(gen, (fs::path(gen_out) / "run_config.toml").string());
            std::cout << "wrote " << m.entries.size() << " samples to " << gen_out << "\n";
        } else if (train->parsed()) {
            Manifest manifest = load_manifest(tr_manifest);
            auto samples = detail::load_train_split(manifest, Split::Train);
            ArchConfig cfg = tr_flags.resolve(tr_arch);
            cfg.input_h = samples.front().image.shape().h;
            cfg.input_w = samples.front().image.shape().w;
            Network net = build_network(tr_arch, cfg, tr_cfg.seed);
            tr_cfg.clr.base_lr = tr_base_lr * tr_lr_scale;
            tr_cfg.clr.max_lr = tr_max_lr * tr_lr_scale;
            tr_cfg.clr.stepsize = tr_stepsize;
            tr_cfg.out_dir = tr_out;
            fs::create_directories(tr_out);
            detail::write_resolved_config(train,
                                          (fs::path(tr_out) / "run_config.toml").string());
            std::cout << "training " << tr_arch << " (" << count_parameters(net.graph)
                      << " parameters) on " << samples.size() << " frames\n";
            TrainResult res = train_loop(net, samples, tr_cfg);
            std::cout << "final loss " << res.records.back().loss << ", checkpoint "
                      << res.final_checkpoint << "\n";
        } else if (infer->parsed()) {
            Image8 image = read_png(in_image);
            Checkpoint ck = read_checkpoint(in_ckpt);
            Network net = load_network(ck, image.h, image.w);
            std::array<double, 3> means{0.5, 0.5, 0.5};
            if (!in_manifest.empty()) {
                means = load_manifest(in_manifest).means;
            } else if (!in_means.empty()) {
                if (std::sscanf(in_means.c_str(), "%lf,%lf,%lf", &means[0], &means[1],
                                &means[2]) != 3)
                    throw CLI::ValidationError("--means", "expected r,g,b");
            }
            Tensor input = normalize(image, means);
            BinaryMask mask;
            if (in_precision == "f64") {
                Runtime<double> rt(net.graph);
                ScalePredictions preds = run_forward(net, rt, input, false);
                mask = argmax_mask(preds.final_map);
            } else {
                Runtime<float> rt(net.graph);
                rt.set_train(false);
                rt.set_input(net.input, input.cast<float>());
                rt.forward(net.final_pred);
                mask = argmax_mask(rt.value(net.final_pred).cast<double>());
            }
            write_png(in_out, mask_to_image(mask));
            detail::write_resolved_config(infer, in_out + ".config.toml");
            std::cout << "wrote " << in_out << "\n";
        } else if (ev->parsed()) {
            Manifest manifest = load_manifest(ev_manifest);
            Checkpoint ck = read_checkpoint(ev_ckpt);
            auto entries = manifest.split_entries(parse_split(ev_split));
            if (entries.empty())
                throw std::runtime_error("no samples in split '" + ev_split + "'");
            Sample first = load_sample(manifest.resolve(entries[0].image_path),
                                       manifest.resolve(entries[0].mask_path));
            Network sized = load_network(ck, first.image.h, first.image.w);
            Runtime<double> rt(sized.graph);
            Report report = evaluate(sized, rt, manifest, parse_split(ev_split));
            std::string table = format_report(report);
            std::cout << table;
            if (report.skipped > 0)
                std::cerr << "skipped " << report.skipped << " unreadable frame(s)\n";
            if (!ev_out.empty()) {
                std::ofstream out(ev_out);
                if (!out) throw std::runtime_error("cannot write report: " + ev_out);
                out << table;
                detail::write_resolved_config(ev, ev_out + ".config.toml");
            }
        } else if (bench->parsed()) {
            Checkpoint ck = read_checkpoint(be_ckpt);
            int h = 0, w = 0;
            if (!be_size.empty()) std::tie(h, w) = detail::parse_size(be_size);
            Network net = load_network(ck, h, w);
            BenchReport report = be_precision == "f32"
                                     ? bench_latency<float>(net, be_repeats, be_warmup)
                                     : bench_latency<double>(net, be_repeats, be_warmup);
            std::cout << "mean " << report.mean_ms() << " ms, " << report.fps() << " fps over "
                      << report.repeats << " inferences (warmup " << report.warmup << ")\n";
            if (!be_out.empty()) {
                std::ofstream out(be_out);
                if (!out) throw std::runtime_error("cannot write report: " + be_out);
                out << format_bench_report(report);
                detail::write_resolved_config(bench, be_out + ".config.toml");
            }
        } else if (lrt->parsed()) {
            Manifest manifest = load_manifest(lr_manifest);
            auto samples = detail::load_train_split(manifest, Split::Train);
            ArchConfig cfg = lr_flags.resolve(lr_arch);
            cfg.input_h = samples.front().image.shape().h;
            cfg.input_w = samples.front().image.shape().w;
            auto results = lr_range_test(lr_arch, cfg, samples, detail::parse_ranges(lr_ranges),
                                         lr_stepsize, lr_seed);
            std::cout << "base\tmax\tfinal_loss\tdiverged\n";
            for (const auto& r : results)
                std::cout << r.range.base << '\t' << r.range.max << '\t' << r.final_loss << '\t'
                          << (r.diverged ? "yes" : "no") << "\n";
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace toolnet::cli
