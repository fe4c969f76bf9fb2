#pragma once

#include <chrono>
#include <numeric>
#include <sstream>
#include <vector>

#include "toolnet/arch.hpp"
#include "toolnet/data.hpp"
#include "toolnet/metrics.hpp"

namespace toolnet {

struct BenchReport {
    int warmup = 20;
    int repeats = 500;
    std::vector<double> times_ms;  // warmup excluded

    double mean_ms() const {
        if (times_ms.empty()) return 0.0;
        return std::accumulate(times_ms.begin(), times_ms.end(), 0.0) /
               static_cast<double>(times_ms.size());
    }

    double fps() const {
        double m = mean_ms();
        return m > 0.0 ? 1000.0 / m : 0.0;
    }
};

namespace detail {

template <typename T>
long argmax_foreground_count(const TensorT<T>& prob) {
    Shape s = prob.shape();
    long plane = static_cast<long>(s.h) * s.w;
    long fg = 0;
    const T* bg_ch = prob.data();
    const T* fg_ch = prob.data() + plane;
    for (long i = 0; i < plane; ++i) fg += fg_ch[i] > bg_ch[i];
    return fg;
}

}  // namespace detail

// Wall-clock latency of the complete per-frame pipeline: 8-bit input to
// normalized tensor, forward pass to the final map, argmax to a mask. Warmup
// iterations are excluded; timing uses the monotonic clock. T selects the
// arithmetic width of the inference pass.
template <typename T = float>
BenchReport bench_latency(Network& net, int repeats = 500, int warmup = 20) {
    if (repeats < 1) throw std::invalid_argument("bench_latency: repeats must be >= 1");
    if (warmup < 0) throw std::invalid_argument("bench_latency: warmup must be >= 0");
    Shape in = net.graph.shape_of(net.input);

    // fixed synthetic frame; content does not matter, determinism does
    Image8 frame(in.w, in.h, in.c);
    for (size_t i = 0; i < frame.px.size(); ++i)
        frame.px[i] = static_cast<uint8_t>((i * 131) % 251);
    std::array<double, 3> means{0.5, 0.5, 0.5};

    Runtime<T> rt(net.graph);
    rt.set_train(false);

    BenchReport report;
    report.warmup = warmup;
    report.repeats = repeats;
    report.times_ms.reserve(static_cast<size_t>(repeats));
    volatile long sink = 0;  // keeps the argmax from being optimized out
    for (int i = 0; i < warmup + repeats; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        TensorT<T> input = normalize(frame, means).template cast<T>();
        rt.set_input(net.input, input);
        rt.forward(net.final_pred);
        sink = sink + detail::argmax_foreground_count(rt.value(net.final_pred));
        auto t1 = std::chrono::steady_clock::now();
        if (i >= warmup)
            report.times_ms.push_back(
                std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    (void)sink;
    return report;
}

// Delimiter-separated report: per-inference times, then mean and fps rows.
inline std::string format_bench_report(const BenchReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "warmup\t" << r.warmup << "\n";
    os << "repeats\t" << r.repeats << "\n";
    os << "idx\tms\n";
    for (size_t i = 0; i < r.times_ms.size(); ++i) os << i << '\t' << r.times_ms[i] << '\n';
    os << "mean_ms\t" << r.mean_ms() << "\n";
    os << "fps\t" << r.fps() << "\n";
    return os.str();
}

}  // namespace toolnet
