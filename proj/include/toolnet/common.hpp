#pragma once

#include <atomic>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace toolnet {

// Dimensions of a rank-4 tensor, batch-channel-height-width.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    long numel() const { return static_cast<long>(n) * c * h * w; }

    bool operator==(const Shape& o) const = default;

    std::string str() const {
        std::ostringstream os;
        os << n << "x" << c << "x" << h << "x" << w;
        return os.str();
    }
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void throw_shape_error(Args&&... args) {
    throw std::invalid_argument(detail::concat(std::forward<Args>(args)...));
}

// Worker count used by parallel_for. Defaults to 1: every kernel is bitwise
// identical across thread counts, but single-threaded execution keeps timing
// and profiling predictable on small inputs.
inline std::atomic<int>& num_threads_ref() {
    static std::atomic<int> n{1};
    return n;
}

inline int num_threads() { return num_threads_ref().load(); }

inline void set_num_threads(int n) {
    num_threads_ref().store(n < 1 ? 1 : n);
}

// Splits [0, n) into contiguous chunks, one per worker. Each index is visited
// exactly once; workers own disjoint ranges, so results do not depend on the
// thread count as long as f(i) only writes state owned by index i.
template <typename F>
void parallel_for(long n, F&& f) {
    int workers = num_threads();
    if (workers <= 1 || n < 2) {
        for (long i = 0; i < n; ++i) f(i);
        return;
    }
    if (workers > n) workers = static_cast<int>(n);
    long chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        long lo = t * chunk;
        long hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &f] {
            for (long i = lo; i < hi; ++i) f(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace toolnet
