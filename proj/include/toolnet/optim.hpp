#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "toolnet/checkpoint.hpp"
#include "toolnet/data.hpp"
#include "toolnet/graph.hpp"

namespace toolnet {

// Triangular cyclical learning rate: lr(0) = base, lr(stepsize) = max,
// periodic with period 2*stepsize; training always runs 6*stepsize iterations.
struct CLRPolicy {
    double base_lr = 1e-7;
    double max_lr = 1e-5;
    long stepsize = 0;

    long total_iters() const { return 6 * stepsize; }
};

inline double clr_lr(long t, const CLRPolicy& p) {
    if (p.stepsize <= 0) throw std::invalid_argument("clr: stepsize must be positive");
    if (p.base_lr <= 0.0 || p.max_lr < p.base_lr)
        throw std::invalid_argument("clr: need 0 < base_lr <= max_lr");
    if (t < 0) throw std::invalid_argument("clr: iteration must be non-negative");
    // integer reduction into the current cycle keeps the wave bit-exactly
    // periodic; within it, x = |t/stepsize - 2*cycle + 1|
    long tm = t % (2 * p.stepsize);
    double x = std::abs(static_cast<double>(tm) / p.stepsize - 1.0);
    return p.base_lr + (p.max_lr - p.base_lr) * std::max(0.0, 1.0 - x);
}

// Classic SGD with momentum and coupled L2 weight decay:
// v <- momentum*v - lr*(g + wd*p); p <- p + v.
// Parameters flagged no-decay (PReLU slopes, fusion weights) skip the decay term.
struct SGDState {
    double momentum = 0.99;
    double weight_decay = 0.0005;
    int batch_size = 1;
    std::vector<Tensor> velocity;  // zero-initialized, shapes mirror the parameters
};

inline void sgd_step(Graph& g, double lr, SGDState& st) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
    auto& params = g.params();
    if (st.velocity.empty()) {
        st.velocity.reserve(params.size());
        for (const auto& rec : params) st.velocity.emplace_back(rec.shape);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        ParamRecord& rec = params[i];
        if (!rec.value.has_grad())
            throw std::runtime_error("sgd_step: parameter '" + rec.name + "' has no gradient");
        double wd = rec.decay ? st.weight_decay : 0.0;
        Tensor& vel = st.velocity[i];
        double* v = vel.data();
        double* p = rec.value.data();
        const double* grad = rec.value.grad();
        long n = rec.shape.numel();
        for (long j = 0; j < n; ++j) {
            if (std::isnan(grad[j]))
                throw std::runtime_error("sgd_step: NaN gradient in parameter '" + rec.name +
                                         "'");
            v[j] = st.momentum * v[j] - lr * (grad[j] + wd * p[j]);
            p[j] += v[j];
        }
    }
}

// --- training loop ------------------------------------------------------------

struct TrainSample {
    std::string id;
    Tensor image;   // normalized, (1, 3, H, W)
    Tensor target;  // one-hot, (1, K, H, W)
};

inline std::vector<TrainSample> load_split_samples(const Manifest& m, Split split) {
    std::vector<TrainSample> out;
    for (const auto& e : m.split_entries(split)) {
        Sample s = load_sample(m.resolve(e.image_path), m.resolve(e.mask_path), e.id);
        out.push_back({e.id, normalize(s.image, m.means), one_hot(s.mask)});
    }
    return out;
}

struct TrainConfig {
    CLRPolicy clr{};  // stepsize 0 resolves to 2 x (train split size)
    double momentum = 0.99;
    double weight_decay = 0.0005;
    int batch_size = 1;
    uint64_t seed = 1;
    long checkpoint_every = 0;  // 0 resolves to one checkpoint per stepsize
    std::string out_dir;        // empty: keep everything in memory only
};

struct TrainRecord {
    long iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::vector<double> terms;  // toolnet-h: fused, then each scale
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<TrainRecord> records;
    std::string final_checkpoint;
    std::string log_path;
    long stepsize = 0;
};

struct TrainDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_record(const TrainRecord& r) {
    char buf[64];
    std::string line = std::to_string(r.iter);
    std::snprintf(buf, sizeof(buf), ",%.12e", r.lr);
    line += buf;
    std::snprintf(buf, sizeof(buf), ",%.17g", r.loss);
    line += buf;
    for (double t : r.terms) {
        std::snprintf(buf, sizeof(buf), ",%.17g", t);
        line += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.3f", r.wall_ms);
    line += buf;
    return line;
}

inline std::vector<Tensor> snapshot_params(const Graph& g) {
    std::vector<Tensor> out;
    out.reserve(g.num_params());
    for (const auto& rec : g.params()) out.push_back(rec.value);
    return out;
}

inline void restore_params(Graph& g, const std::vector<Tensor>& snap) {
    for (size_t i = 0; i < snap.size(); ++i) g.params()[i].value = snap[i];
}

}  // namespace detail

// Runs exactly 6*stepsize iterations at batch size 1, frames drawn uniformly
// at random from the train samples under a seeded stream. Emits periodic and
// final checkpoints plus an append-only log with one record per iteration:
// iteration, lr, total loss, per-scale losses (toolnet-h), wall-clock ms.
// On divergence (NaN loss or gradient) the parameters from the last completed
// iteration are written as the final checkpoint and TrainDivergence is thrown.
inline TrainResult train_loop(Network& net, const std::vector<TrainSample>& data,
                              const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train_loop: no training samples");
    if (cfg.batch_size != 1)
        throw std::invalid_argument("train_loop: only batch size 1 is supported");
    CLRPolicy clr = cfg.clr;
    if (clr.stepsize <= 0) clr.stepsize = 2 * static_cast<long>(data.size());
    long total = clr.total_iters();
    long ckpt_every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : clr.stepsize;

    namespace fs = std::filesystem;
    std::ofstream log;
    TrainResult result;
    result.stepsize = clr.stepsize;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        result.log_path = (fs::path(cfg.out_dir) / "train_log.csv").string();
        log.open(result.log_path);
        if (!log) throw std::runtime_error("cannot write train log: " + result.log_path);
        log << "# iter,lr,loss";
        if (!net.scale_losses.empty()) {
            log << ",loss_fused";
            for (size_t j = 1; j <= net.scale_losses.size(); ++j) log << ",loss_s" << j;
        }
        log << ",wall_ms\n";
    }

    Runtime<double> rt(net.graph);
    rt.set_rng_seed(cfg.seed);
    RngStream sampler(cfg.seed, "train.sampler");
    SGDState sgd{cfg.momentum, cfg.weight_decay, cfg.batch_size, {}};
    std::vector<Tensor> last_good = detail::snapshot_params(net.graph);

    auto save_as_final = [&](const std::vector<Tensor>& params) {
        if (cfg.out_dir.empty()) return;
        detail::restore_params(net.graph, params);
        result.final_checkpoint = (fs::path(cfg.out_dir) / "final.tnck").string();
        save_checkpoint(result.final_checkpoint, net);
    };

    for (long t = 0; t < total; ++t) {
        auto t0 = std::chrono::steady_clock::now();
        size_t idx = static_cast<size_t>(sampler.below(data.size()));
        rt.set_train(true);
        rt.set_iteration(t);
        rt.set_input(net.input, data[idx].image);
        rt.set_input(net.target, data[idx].target);
        rt.forward(net.total_loss);
        double loss = rt.scalar(net.total_loss);
        if (!std::isfinite(loss)) {
            save_as_final(last_good);
            throw TrainDivergence(detail::concat("training diverged at iteration ", t,
                                                 " (loss ", loss, "); last good checkpoint kept"));
        }
        double lr = clr_lr(t, clr);
        rt.backward(net.total_loss);
        try {
            sgd_step(net.graph, lr, sgd);
        } catch (const std::runtime_error&) {
            save_as_final(last_good);
            throw TrainDivergence(detail::concat("training diverged at iteration ", t,
                                                 " (NaN gradient); last good checkpoint kept"));
        }
        // parameters must stay representable in the checkpoint's 32-bit floats
        for (const auto& rec : net.graph.params()) {
            bool ok = true;
            for (long i = 0; i < rec.shape.numel() && ok; ++i) {
                double v = rec.value[static_cast<size_t>(i)];
                ok = std::isfinite(v) &&
                     std::abs(v) <= static_cast<double>(std::numeric_limits<float>::max());
            }
            if (!ok) {
                save_as_final(last_good);
                throw TrainDivergence(detail::concat("training diverged at iteration ", t,
                                                     " (parameter '", rec.name,
                                                     "' overflowed); last good checkpoint kept"));
            }
        }

        TrainRecord rec;
        rec.iter = t;
        rec.lr = lr;
        rec.loss = loss;
        if (!net.scale_losses.empty()) {
            rec.terms.push_back(rt.scalar(net.fused_loss));
            for (NodeId id : net.scale_losses) rec.terms.push_back(rt.scalar(id));
        }
        auto t1 = std::chrono::steady_clock::now();
        rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (log) {
            log << detail::format_record(rec) << "\n";
            log.flush();
        }
        result.records.push_back(std::move(rec));
        last_good = detail::snapshot_params(net.graph);

        if (!cfg.out_dir.empty() && (t + 1) % ckpt_every == 0 && t + 1 < total) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%06ld.tnck", t + 1);
            save_checkpoint((fs::path(cfg.out_dir) / name).string(), net);
        }
    }

    if (!cfg.out_dir.empty()) {
        result.final_checkpoint = (fs::path(cfg.out_dir) / "final.tnck").string();
        save_checkpoint(result.final_checkpoint, net);
    }
    return result;
}

// Eval-mode loss terms averaged over a sample set: [total, fused, s1..sM] for
// toolnet-h, [total] otherwise. Dropout is disabled, so the measurement is a
// deterministic function of the parameters.
inline std::vector<double> measure_loss_terms(Network& net, Runtime<double>& rt,
                                              const std::vector<TrainSample>& data) {
    std::vector<double> acc(1 + (net.scale_losses.empty() ? 0 : 1 + net.scale_losses.size()),
                            0.0);
    for (const auto& s : data) {
        rt.set_train(false);
        rt.set_input(net.input, s.image);
        rt.set_input(net.target, s.target);
        rt.forward(net.total_loss);
        acc[0] += rt.scalar(net.total_loss);
        if (!net.scale_losses.empty()) {
            acc[1] += rt.scalar(net.fused_loss);
            for (size_t j = 0; j < net.scale_losses.size(); ++j)
                acc[2 + j] += rt.scalar(net.scale_losses[j]);
        }
    }
    for (double& v : acc) v /= static_cast<double>(data.size());
    return acc;
}

// --- learning-rate range test ---------------------------------------------------

struct LrRange {
    double base = 0.0;
    double max = 0.0;
};

struct LrRangeResult {
    LrRange range;
    double final_loss = 0.0;  // mean loss over the last quarter of the sweep
    bool diverged = false;
};

// Sweeps the learning rate linearly from base to max over `stepsize`
// iterations for each candidate range, restarting from identical weights.
inline std::vector<LrRangeResult> lr_range_test(const std::string& tag, const ArchConfig& cfg,
                                                const std::vector<TrainSample>& data,
                                                const std::vector<LrRange>& ranges,
                                                long stepsize, uint64_t seed,
                                                double momentum = 0.99,
                                                double weight_decay = 0.0005) {
    if (data.empty()) throw std::invalid_argument("lr_range_test: no training samples");
    if (stepsize <= 0) stepsize = 2 * static_cast<long>(data.size());
    std::vector<LrRangeResult> results;
    for (const LrRange& r : ranges) {
        Network net = build_network(tag, cfg, seed);
        Runtime<double> rt(net.graph);
        rt.set_rng_seed(seed);
        RngStream sampler(seed, "train.sampler");
        SGDState sgd{momentum, weight_decay, 1, {}};
        LrRangeResult res;
        res.range = r;
        double tail = 0.0;
        long tail_n = 0;
        long tail_from = stepsize - std::max(1l, stepsize / 4);
        for (long t = 0; t < stepsize; ++t) {
            size_t idx = static_cast<size_t>(sampler.below(data.size()));
            rt.set_train(true);
            rt.set_iteration(t);
            rt.set_input(net.input, data[idx].image);
            rt.set_input(net.target, data[idx].target);
            rt.forward(net.total_loss);
            double loss = rt.scalar(net.total_loss);
            if (!std::isfinite(loss)) {
                res.diverged = true;
                break;
            }
            if (t >= tail_from) {
                tail += loss;
                ++tail_n;
            }
            double frac = stepsize > 1 ? static_cast<double>(t) / (stepsize - 1) : 1.0;
            double lr = r.base + (r.max - r.base) * frac;
            rt.backward(net.total_loss);
            try {
                sgd_step(net.graph, lr, sgd);
            } catch (const std::runtime_error&) {
                res.diverged = true;
                break;
            }
        }
        res.final_loss = tail_n > 0 ? tail / tail_n : std::nan("");
        results.push_back(res);
    }
    return results;
}

}  // namespace toolnet
