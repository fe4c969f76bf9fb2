#pragma once

#include <cmath>
#include <string>

#include "toolnet/kernels.hpp"
#include "toolnet/tensor.hpp"

namespace toolnet {

// He-style init: zero-mean Gaussian with variance 2 / fan_in, the companion
// scheme of PReLU-gated convolutions. fan_in of a (Co, Ci, kh, kw) kernel is
// Ci * kh * kw.
inline Tensor he_init(Shape s, RngStream& rng) {
    long fan_in = static_cast<long>(s.c) * s.h * s.w;
    if (fan_in < 1) fan_in = 1;
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(s);
    for (double& v : t.values()) v = stddev * rng.normal();
    return t;
}

// Per-channel separable bilinear interpolation weights for a transposed
// convolution that upsamples by `factor`. Spatial size 2*factor - factor%2,
// zero cross-channel terms; layout (in, out, kh, kw).
inline Tensor bilinear_kernel(int factor, int channels) {
    if (factor < 1) throw std::invalid_argument("bilinear_kernel: factor must be >= 1");
    if (channels < 1) throw std::invalid_argument("bilinear_kernel: channels must be >= 1");
    int k = 2 * factor - factor % 2;
    double center = (k % 2 == 1) ? (k - 1) / 2.0 : factor - 0.5;
    Tensor t({channels, channels, k, k});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) {
                double fy = 1.0 - std::abs(y - center) / factor;
                double fx = 1.0 - std::abs(x - center) / factor;
                t.at(c, c, y, x) = fy * fx;
            }
    return t;
}

// Padding that makes a transposed conv with the bilinear kernel an exact
// `factor`-times upsampler: out = in * factor.
inline int bilinear_pad(int factor) {
    int k = 2 * factor - factor % 2;
    return (k - factor) / 2;
}

struct PReLUParams {
    Tensor a;  // one trainable slope per gated channel

    explicit PReLUParams(int channels, double init = 0.25)
        : a(Tensor::full({1, channels, 1, 1}, init)) {}
};

inline Tensor prelu(const Tensor& x, const PReLUParams& params) {
    if (params.a.numel() != x.shape().c)
        throw_shape_error("prelu: ", params.a.numel(), " slopes for ", x.shape().c, " channels");
    Tensor y(x.shape());
    kernels::prelu_forward(x.data(), x.shape(), params.a.data(), y.data());
    return y;
}

struct DropoutState {
    double p = 0.5;
    bool train = true;
    uint64_t seed = 0;
    std::string stream_name = "dropout";
    long iteration = 0;
};

inline Tensor dropout(const Tensor& x, const DropoutState& state) {
    if (state.p < 0.0 || state.p > 1.0)
        throw std::invalid_argument(detail::concat("dropout: p must be in [0,1], got ", state.p));
    if (!state.train || state.p == 0.0) return x;
    if (state.p == 1.0)
        throw std::invalid_argument("dropout: p=1 in train mode zeroes every activation");
    std::vector<uint8_t> mask;
    kernels::dropout_mask(mask, x.numel(), state.p,
                          RngStream(state.seed, state.stream_name,
                                    static_cast<uint64_t>(state.iteration)));
    Tensor y(x.shape());
    kernels::dropout_forward(x.data(), x.numel(), mask.data(), state.p, y.data());
    return y;
}

}  // namespace toolnet
