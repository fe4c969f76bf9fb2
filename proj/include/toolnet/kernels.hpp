#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "toolnet/common.hpp"
#include "toolnet/rng.hpp"
#include "toolnet/tensor.hpp"

// Raw compute kernels behind the graph ops. Every kernel accumulates each
// output element in a fixed scan order, so results are bitwise identical
// between the reference loops, the reordered loops, and any thread count.
// Convolution follows the cross-correlation convention (no kernel flip).

namespace toolnet::kernels {

inline Shape conv2d_out_shape(Shape x, Shape w, int stride, int pad) {
    if (stride < 1) throw_shape_error("conv2d: stride must be >= 1, got ", stride);
    if (pad < 0) throw_shape_error("conv2d: pad must be >= 0, got ", pad);
    if (x.c != w.c)
        throw_shape_error("conv2d: input has ", x.c, " channels but kernel expects ", w.c,
                          " (input ", x.str(), ", kernel ", w.str(), ")");
    int oh = (x.h + 2 * pad - w.h) / stride + 1;
    int ow = (x.w + 2 * pad - w.w) / stride + 1;
    if (x.h + 2 * pad < w.h || x.w + 2 * pad < w.w || oh < 1 || ow < 1)
        throw_shape_error("conv2d: zero-sized output for input ", x.str(), ", kernel ", w.str(),
                          ", stride ", stride, ", pad ", pad);
    return {x.n, w.n, oh, ow};
}

inline Shape conv_transpose2d_out_shape(Shape x, Shape w, int stride, int pad) {
    if (stride < 1) throw_shape_error("conv_transpose2d: stride must be >= 1, got ", stride);
    if (pad < 0) throw_shape_error("conv_transpose2d: pad must be >= 0, got ", pad);
    if (x.c != w.n)
        throw_shape_error("conv_transpose2d: input has ", x.c, " channels but kernel expects ",
                          w.n, " (input ", x.str(), ", kernel ", w.str(), ")");
    if (w.h < stride || w.w < stride)
        throw_shape_error("conv_transpose2d: kernel ", w.h, "x", w.w,
                          " smaller than stride ", stride);
    int oh = (x.h - 1) * stride - 2 * pad + w.h;
    int ow = (x.w - 1) * stride - 2 * pad + w.w;
    if (oh < 1 || ow < 1)
        throw_shape_error("conv_transpose2d: zero-sized output for input ", x.str(),
                          ", kernel ", w.str(), ", stride ", stride, ", pad ", pad);
    return {x.n, w.c, oh, ow};
}

// --- conv2d ----------------------------------------------------------------
// x: (N, Ci, H, W), w: (Co, Ci, kh, kw), b: (Co) or null, y: (N, Co, Ho, Wo)

// Direct per-element loops; the oracle-grade reference.
template <typename T>
void conv2d_forward_reference(const T* x, Shape xs, const T* w, Shape ws, const T* b, T* y,
                              Shape ys, int stride, int pad) {
    for (int n = 0; n < ys.n; ++n)
        for (int co = 0; co < ys.c; ++co)
            for (int oy = 0; oy < ys.h; ++oy)
                for (int ox = 0; ox < ys.w; ++ox) {
                    T acc = b ? b[co] : T(0);
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int ky = 0; ky < ws.h; ++ky) {
                            int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= xs.h) continue;
                            for (int kx = 0; kx < ws.w; ++kx) {
                                int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= xs.w) continue;
                                acc += x[((static_cast<size_t>(n) * xs.c + ci) * xs.h + iy) * xs.w + ix] *
                                       w[((static_cast<size_t>(co) * ws.c + ci) * ws.h + ky) * ws.w + kx];
                            }
                        }
                    y[((static_cast<size_t>(n) * ys.c + co) * ys.h + oy) * ys.w + ox] = acc;
                }
}

namespace detail {

// Valid output range along one axis for a fixed kernel offset:
// lo <= o < hi  <=>  0 <= o*stride - pad + k < extent.
inline void valid_range(int k, int stride, int pad, int extent, int out, int& lo, int& hi) {
    lo = pad > k ? (pad - k + stride - 1) / stride : 0;
    int num = extent - 1 + pad - k;
    hi = num < 0 ? 0 : std::min(out, num / stride + 1);
}

}  // namespace detail

// Loop-reordered kernel: identical accumulation order per output element
// (ci, ky, kx), hoisted row pointers, parallel over (n, co) slices.
template <typename T>
void conv2d_forward(const T* x, Shape xs, const T* w, Shape ws, const T* b, T* y, Shape ys,
                    int stride, int pad) {
    long planes = static_cast<long>(ys.n) * ys.c;
    parallel_for(planes, [&](long plane) {
        int n = static_cast<int>(plane / ys.c);
        int co = static_cast<int>(plane % ys.c);
        T* yplane = y + (static_cast<size_t>(n) * ys.c + co) * ys.h * ys.w;
        T bias = b ? b[co] : T(0);
        for (long i = 0; i < static_cast<long>(ys.h) * ys.w; ++i) yplane[i] = bias;
        for (int ci = 0; ci < xs.c; ++ci) {
            const T* xplane = x + (static_cast<size_t>(n) * xs.c + ci) * xs.h * xs.w;
            const T* wk = w + (static_cast<size_t>(co) * ws.c + ci) * ws.h * ws.w;
            for (int ky = 0; ky < ws.h; ++ky) {
                int oy_lo, oy_hi;
                detail::valid_range(ky, stride, pad, xs.h, ys.h, oy_lo, oy_hi);
                for (int kx = 0; kx < ws.w; ++kx) {
                    int ox_lo, ox_hi;
                    detail::valid_range(kx, stride, pad, xs.w, ys.w, ox_lo, ox_hi);
                    T wv = wk[ky * ws.w + kx];
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const T* xrow = xplane + static_cast<size_t>(oy * stride - pad + ky) * xs.w;
                        T* yrow = yplane + static_cast<size_t>(oy) * ys.w;
                        int off = kx - pad;
                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                            yrow[ox] += wv * xrow[ox * stride + off];
                    }
                }
            }
        }
    });
}

// grad wrt input: gather form, one pass per input element, order (ky, kx, co).
template <typename T>
void conv2d_backward_input(const T* gy, Shape ys, const T* w, Shape ws, T* gx, Shape xs,
                           int stride, int pad) {
    long planes = static_cast<long>(xs.n) * xs.c;
    parallel_for(planes, [&](long plane) {
        int n = static_cast<int>(plane / xs.c);
        int ci = static_cast<int>(plane % xs.c);
        T* gxplane = gx + (static_cast<size_t>(n) * xs.c + ci) * xs.h * xs.w;
        for (int iy = 0; iy < xs.h; ++iy)
            for (int ix = 0; ix < xs.w; ++ix) {
                T acc = T(0);
                for (int ky = 0; ky < ws.h; ++ky) {
                    int ty = iy + pad - ky;
                    if (ty < 0 || ty % stride != 0) continue;
                    int oy = ty / stride;
                    if (oy >= ys.h) continue;
                    for (int kx = 0; kx < ws.w; ++kx) {
                        int tx = ix + pad - kx;
                        if (tx < 0 || tx % stride != 0) continue;
                        int ox = tx / stride;
                        if (ox >= ys.w) continue;
                        for (int co = 0; co < ys.c; ++co)
                            acc += gy[((static_cast<size_t>(n) * ys.c + co) * ys.h + oy) * ys.w + ox] *
                                   w[((static_cast<size_t>(co) * ws.c + ci) * ws.h + ky) * ws.w + kx];
                    }
                }
                gxplane[static_cast<size_t>(iy) * xs.w + ix] += acc;
            }
    });
}

// grad wrt kernel (and bias): each co slice owned by one worker, accumulation
// order (n, oy, ox) per weight.
template <typename T>
void conv2d_backward_params(const T* gy, Shape ys, const T* x, Shape xs, T* gw, Shape ws, T* gb,
                            int stride, int pad) {
    parallel_for(ws.n, [&](long co) {
        for (int ci = 0; ci < ws.c; ++ci)
            for (int ky = 0; ky < ws.h; ++ky) {
                int oy_lo, oy_hi;
                detail::valid_range(ky, stride, pad, xs.h, ys.h, oy_lo, oy_hi);
                for (int kx = 0; kx < ws.w; ++kx) {
                    int ox_lo, ox_hi;
                    detail::valid_range(kx, stride, pad, xs.w, ys.w, ox_lo, ox_hi);
                    T acc = T(0);
                    for (int n = 0; n < ys.n; ++n) {
                        const T* gyplane = gy + (static_cast<size_t>(n) * ys.c + co) * ys.h * ys.w;
                        const T* xplane = x + (static_cast<size_t>(n) * xs.c + ci) * xs.h * xs.w;
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            const T* gyrow = gyplane + static_cast<size_t>(oy) * ys.w;
                            const T* xrow = xplane + static_cast<size_t>(oy * stride - pad + ky) * xs.w;
                            int off = kx - pad;
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                acc += gyrow[ox] * xrow[ox * stride + off];
                        }
                    }
                    gw[((static_cast<size_t>(co) * ws.c + ci) * ws.h + ky) * ws.w + kx] += acc;
                }
            }
        if (gb) {
            T acc = T(0);
            for (int n = 0; n < ys.n; ++n) {
                const T* gyplane = gy + (static_cast<size_t>(n) * ys.c + co) * ys.h * ys.w;
                for (long i = 0; i < static_cast<long>(ys.h) * ys.w; ++i) acc += gyplane[i];
            }
            gb[co] += acc;
        }
    });
}

// --- conv_transpose2d -------------------------------------------------------
// x: (N, Ci, H, W), w: (Ci, Co, kh, kw), y: (N, Co, Ho, Wo). Gather form with
// an explicit output size, so the same kernel serves both the public op and
// conv2d's input gradient (where floor-truncated sizes must be honored).

template <typename T>
void conv_transpose2d_forward(const T* x, Shape xs, const T* w, Shape ws, T* y, Shape ys,
                              int stride, int pad, bool accumulate = false) {
    long planes = static_cast<long>(ys.n) * ys.c;
    parallel_for(planes, [&](long plane) {
        int n = static_cast<int>(plane / ys.c);
        int co = static_cast<int>(plane % ys.c);
        T* yplane = y + (static_cast<size_t>(n) * ys.c + co) * ys.h * ys.w;
        for (int oy = 0; oy < ys.h; ++oy)
            for (int ox = 0; ox < ys.w; ++ox) {
                T acc = T(0);
                for (int ky = 0; ky < ws.h; ++ky) {
                    int ty = oy + pad - ky;
                    if (ty < 0 || ty % stride != 0) continue;
                    int iy = ty / stride;
                    if (iy >= xs.h) continue;
                    for (int kx = 0; kx < ws.w; ++kx) {
                        int tx = ox + pad - kx;
                        if (tx < 0 || tx % stride != 0) continue;
                        int ix = tx / stride;
                        if (ix >= xs.w) continue;
                        for (int ci = 0; ci < xs.c; ++ci)
                            acc += x[((static_cast<size_t>(n) * xs.c + ci) * xs.h + iy) * xs.w + ix] *
                                   w[((static_cast<size_t>(ci) * ws.c + co) * ws.h + ky) * ws.w + kx];
                    }
                }
                T* slot = yplane + static_cast<size_t>(oy) * ys.w + ox;
                if (accumulate)
                    *slot += acc;
                else
                    *slot = acc;
            }
    });
}

// grad wrt input of conv_transpose2d: a plain correlation of gy with w.
template <typename T>
void conv_transpose2d_backward_input(const T* gy, Shape ys, const T* w, Shape ws, T* gx, Shape xs,
                                     int stride, int pad) {
    long planes = static_cast<long>(xs.n) * xs.c;
    parallel_for(planes, [&](long plane) {
        int n = static_cast<int>(plane / xs.c);
        int ci = static_cast<int>(plane % xs.c);
        T* gxplane = gx + (static_cast<size_t>(n) * xs.c + ci) * xs.h * xs.w;
        for (int iy = 0; iy < xs.h; ++iy)
            for (int ix = 0; ix < xs.w; ++ix) {
                T acc = T(0);
                for (int ky = 0; ky < ws.h; ++ky) {
                    int oy = iy * stride - pad + ky;
                    if (oy < 0 || oy >= ys.h) continue;
                    for (int kx = 0; kx < ws.w; ++kx) {
                        int ox = ix * stride - pad + kx;
                        if (ox < 0 || ox >= ys.w) continue;
                        for (int co = 0; co < ys.c; ++co)
                            acc += gy[((static_cast<size_t>(n) * ys.c + co) * ys.h + oy) * ys.w + ox] *
                                   w[((static_cast<size_t>(ci) * ws.c + co) * ws.h + ky) * ws.w + kx];
                    }
                }
                gxplane[static_cast<size_t>(iy) * xs.w + ix] += acc;
            }
    });
}

template <typename T>
void conv_transpose2d_backward_kernel(const T* gy, Shape ys, const T* x, Shape xs, T* gw,
                                      Shape ws, int stride, int pad) {
    parallel_for(ws.n, [&](long ci) {
        for (int co = 0; co < ws.c; ++co)
            for (int ky = 0; ky < ws.h; ++ky)
                for (int kx = 0; kx < ws.w; ++kx) {
                    T acc = T(0);
                    for (int n = 0; n < xs.n; ++n)
                        for (int iy = 0; iy < xs.h; ++iy) {
                            int oy = iy * stride - pad + ky;
                            if (oy < 0 || oy >= ys.h) continue;
                            for (int ix = 0; ix < xs.w; ++ix) {
                                int ox = ix * stride - pad + kx;
                                if (ox < 0 || ox >= ys.w) continue;
                                acc += x[((static_cast<size_t>(n) * xs.c + ci) * xs.h + iy) * xs.w + ix] *
                                       gy[((static_cast<size_t>(n) * ys.c + co) * ys.h + oy) * ys.w + ox];
                            }
                        }
                    gw[((static_cast<size_t>(ci) * ws.c + co) * ws.h + ky) * ws.w + kx] += acc;
                }
    });
}

// --- maxpool2d ---------------------------------------------------------------

inline Shape maxpool2d_out_shape(Shape x, int k, int stride) {
    if (k < 1 || stride < 1)
        throw_shape_error("maxpool2d: window and stride must be >= 1, got k=", k, " stride=",
                          stride);
    if (x.h < k || x.w < k)
        throw_shape_error("maxpool2d: ", k, "x", k, " window larger than input ", x.str());
    return {x.n, x.c, (x.h - k) / stride + 1, (x.w - k) / stride + 1};
}

// argmax records the flat input index of the first maximum in row-major scan
// order of the window; ties always resolve to that first element.
template <typename T>
void maxpool2d_forward(const T* x, Shape xs, T* y, Shape ys, int* argmax, int k, int stride) {
    long planes = static_cast<long>(ys.n) * ys.c;
    parallel_for(planes, [&](long plane) {
        const T* xplane = x + static_cast<size_t>(plane) * xs.h * xs.w;
        T* yplane = y + static_cast<size_t>(plane) * ys.h * ys.w;
        int* aplane = argmax + static_cast<size_t>(plane) * ys.h * ys.w;
        for (int oy = 0; oy < ys.h; ++oy)
            for (int ox = 0; ox < ys.w; ++ox) {
                int iy0 = oy * stride;
                int ix0 = ox * stride;
                int best = iy0 * xs.w + ix0;
                T bv = xplane[best];
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        int idx = (iy0 + ky) * xs.w + (ix0 + kx);
                        if (xplane[idx] > bv) {
                            bv = xplane[idx];
                            best = idx;
                        }
                    }
                yplane[oy * ys.w + ox] = bv;
                aplane[oy * ys.w + ox] = best;
            }
    });
}

// Scatter to the recorded argmax; sequential because windows may overlap.
template <typename T>
void maxpool2d_backward(const T* gy, Shape ys, const int* argmax, T* gx, Shape xs) {
    long planes = static_cast<long>(ys.n) * ys.c;
    long plane_out = static_cast<long>(ys.h) * ys.w;
    long plane_in = static_cast<long>(xs.h) * xs.w;
    for (long plane = 0; plane < planes; ++plane) {
        const T* gyp = gy + plane * plane_out;
        const int* ap = argmax + plane * plane_out;
        T* gxp = gx + plane * plane_in;
        for (long i = 0; i < plane_out; ++i) gxp[ap[i]] += gyp[i];
    }
}

// --- pointwise ops -----------------------------------------------------------

template <typename T>
void softmax_channels_forward(const T* x, Shape s, T* y) {
    long pixels = static_cast<long>(s.n) * s.h * s.w;
    long plane = static_cast<long>(s.h) * s.w;
    parallel_for(pixels, [&](long p) {
        long n = p / plane;
        long off = n * s.c * plane + (p % plane);
        T m = x[off];
        for (int c = 1; c < s.c; ++c) m = std::max(m, x[off + c * plane]);
        T sum = T(0);
        for (int c = 0; c < s.c; ++c) {
            T e = std::exp(x[off + c * plane] - m);
            y[off + c * plane] = e;
            sum += e;
        }
        for (int c = 0; c < s.c; ++c) y[off + c * plane] /= sum;
    });
}

template <typename T>
void softmax_channels_backward(const T* y, Shape s, const T* gy, T* gx) {
    long pixels = static_cast<long>(s.n) * s.h * s.w;
    long plane = static_cast<long>(s.h) * s.w;
    parallel_for(pixels, [&](long p) {
        long n = p / plane;
        long off = n * s.c * plane + (p % plane);
        T d = T(0);
        for (int c = 0; c < s.c; ++c) d += gy[off + c * plane] * y[off + c * plane];
        for (int c = 0; c < s.c; ++c)
            gx[off + c * plane] += y[off + c * plane] * (gy[off + c * plane] - d);
    });
}

// PReLU, one learned slope per channel: f(x) = max(0,x) + a_c * min(0,x).
template <typename T>
void prelu_forward(const T* x, Shape s, const T* a, T* y) {
    long plane = static_cast<long>(s.h) * s.w;
    parallel_for(static_cast<long>(s.n) * s.c, [&](long nc) {
        T ac = a[nc % s.c];
        const T* xp = x + nc * plane;
        T* yp = y + nc * plane;
        for (long i = 0; i < plane; ++i)
            yp[i] = xp[i] > T(0) ? xp[i] : ac * xp[i];
    });
}

template <typename T>
void prelu_backward(const T* x, Shape s, const T* a, const T* gy, T* gx, T* ga) {
    long plane = static_cast<long>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            long nc = static_cast<long>(n) * s.c + c;
            const T* xp = x + nc * plane;
            const T* gyp = gy + nc * plane;
            T* gxp = gx + nc * plane;
            T ac = a[c];
            T gacc = T(0);
            for (long i = 0; i < plane; ++i) {
                if (xp[i] > T(0)) {
                    gxp[i] += gyp[i];
                } else {
                    gxp[i] += gyp[i] * ac;
                    gacc += gyp[i] * xp[i];  // min(0, x) = x here
                }
            }
            ga[c] += gacc;
        }
}

template <typename T>
void relu_forward(const T* x, long n, T* y) {
    for (long i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, long n, const T* gy, T* gx) {
    for (long i = 0; i < n; ++i)
        if (x[i] > T(0)) gx[i] += gy[i];
}

// Inverted dropout: survivors scaled by 1/(1-p) at train time, so eval is the
// identity. The mask is drawn sequentially from its stream.
inline void dropout_mask(std::vector<uint8_t>& mask, long n, double p, RngStream rng) {
    mask.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) mask[i] = rng.uniform() < p ? 0 : 1;
}

template <typename T>
void dropout_forward(const T* x, long n, const uint8_t* mask, double p, T* y) {
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (long i = 0; i < n; ++i) y[i] = mask[i] ? x[i] * scale : T(0);
}

template <typename T>
void dropout_backward(const T* gy, long n, const uint8_t* mask, double p, T* gx) {
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (long i = 0; i < n; ++i)
        if (mask[i]) gx[i] += gy[i] * scale;
}

}  // namespace toolnet::kernels
