#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "toolnet/common.hpp"
#include "toolnet/rng.hpp"

namespace toolnet {

// Dense rank-4 array in row-major batch-channel-height-width order, with an
// optional same-shape gradient buffer. Plain value semantics: copying copies
// the data; sharing a tensor read-only across threads is safe, mutation needs
// exclusive access.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape s, T fill = T(0)) : shape_(s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw_shape_error("tensor shape must be non-negative, got ", s.str());
        data_.assign(static_cast<size_t>(s.numel()), fill);
    }

    static TensorT zeros(Shape s) { return TensorT(s); }

    static TensorT full(Shape s, T v) { return TensorT(s, v); }

    static TensorT uniform(Shape s, RngStream& rng, T lo = T(0), T hi = T(1)) {
        TensorT t(s);
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    long numel() const { return shape_.numel(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& at(int n, int c, int y, int x) {
        return data_[flat(n, c, y, x)];
    }
    const T& at(int n, int c, int y, int x) const {
        return data_[flat(n, c, y, x)];
    }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    // Gradient buffer; absent until ensured.
    bool has_grad() const { return !grad_.empty(); }

    void ensure_grad() {
        if (grad_.empty()) grad_.assign(data_.size(), T(0));
    }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }

    void drop_grad() { grad_.clear(); }

    T* grad() { return grad_.data(); }
    const T* grad() const { return grad_.data(); }
    std::span<T> grads() { return grad_; }
    std::span<const T> grads() const { return grad_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        for (size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool same_values(const TensorT& o) const {
        return shape_ == o.shape_ && data_ == o.data_;
    }

private:
    size_t flat(int n, int c, int y, int x) const {
        return ((static_cast<size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Shape shape_{};
    std::vector<T> data_;
    std::vector<T> grad_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <typename T>
double dot(const TensorT<T>& a, const TensorT<T>& b) {
    double s = 0.0;
    const T* pa = a.data();
    const T* pb = b.data();
    long n = std::min(a.numel(), b.numel());
    for (long i = 0; i < n; ++i) s += static_cast<double>(pa[i]) * pb[i];
    return s;
}

}  // namespace toolnet
