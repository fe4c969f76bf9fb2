#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "toolnet/tensor.hpp"

namespace toolnet {

// Stabilizer added to the per-class denominator so absent classes keep the
// class weight finite and a perfect prediction scores within 1e-6 of zero.
inline constexpr double kDiceEps = 1e-7;

namespace detail {

// Per-class sums of a (N, K, H, W) pair, pixels pooled over batch and space.
// sums[2k] = sum(pred^2) + sum(gt^2) + eps (the class-weight denominator),
// sums[2k+1] = sum((pred - gt)^2) (the class residual).
template <typename T>
void dice_class_sums(const T* pred, const T* gt, Shape s, std::vector<double>& sums) {
    long plane = static_cast<long>(s.h) * s.w;
    sums.assign(static_cast<size_t>(2 * s.c), 0.0);
    for (int n = 0; n < s.n; ++n)
        for (int k = 0; k < s.c; ++k) {
            const T* pp = pred + (static_cast<size_t>(n) * s.c + k) * plane;
            const T* gp = gt + (static_cast<size_t>(n) * s.c + k) * plane;
            double d = 0.0, r = 0.0;
            for (long i = 0; i < plane; ++i) {
                double p = pp[i], g = gp[i];
                d += p * p + g * g;
                double e = p - g;
                r += e * e;
            }
            sums[2 * k] += d;
            sums[2 * k + 1] += r;
        }
    for (int k = 0; k < s.c; ++k) sums[2 * k] += kDiceEps;
}

template <typename T>
double dice_forward(const T* pred, const T* gt, Shape s, std::vector<double>& sums) {
    dice_class_sums(pred, gt, s, sums);
    double loss = 0.0;
    for (int k = 0; k < s.c; ++k)
        loss += sums[2 * k + 1] / (s.c * sums[2 * k]);
    return loss;
}

// Full derivative, including the class weight's dependence on the prediction:
// dL/dp = (2 / (K * D_k)) * ((p - g) - S_k * p / D_k).
template <typename T>
void dice_backward(const T* pred, const T* gt, Shape s, const std::vector<double>& sums,
                   double gout, T* gpred) {
    long plane = static_cast<long>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int k = 0; k < s.c; ++k) {
            double dk = sums[2 * k];
            double rk = sums[2 * k + 1];
            double scale = gout * 2.0 / (s.c * dk);
            const T* pp = pred + (static_cast<size_t>(n) * s.c + k) * plane;
            const T* gp = gt + (static_cast<size_t>(n) * s.c + k) * plane;
            T* out = gpred + (static_cast<size_t>(n) * s.c + k) * plane;
            for (long i = 0; i < plane; ++i) {
                double p = pp[i];
                out[i] += static_cast<T>(scale * ((p - gp[i]) - rk * p / dk));
            }
        }
}

template <typename T>
void fuse_forward(std::span<const T* const> xs, Shape s, const T* w, T* y) {
    long n = s.numel();
    for (long i = 0; i < n; ++i) y[i] = w[0] * xs[0][i];
    for (size_t j = 1; j < xs.size(); ++j) {
        const T* xj = xs[j];
        T wj = w[j];
        for (long i = 0; i < n; ++i) y[i] += wj * xj[i];
    }
}

}  // namespace detail

// Class weight of the balanced Dice loss: (1/K) / (sum(pred^2) + sum(gt^2) + eps)
// for class k, pixels pooled over batch and space.
inline double alpha_weight(const Tensor& pred, const Tensor& gt, int k) {
    if (pred.shape() != gt.shape())
        throw_shape_error("alpha_weight: shape mismatch ", pred.shape().str(), " vs ",
                          gt.shape().str());
    std::vector<double> sums;
    detail::dice_class_sums(pred.data(), gt.data(), pred.shape(), sums);
    return 1.0 / (pred.shape().c * sums[2 * k]);
}

struct DiceResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d pred
};

// Class-balanced Dice loss as a weighted mean squared error:
// L = sum_i sum_k alpha_k * (pred_ik - gt_ik)^2, with alpha differentiated.
inline DiceResult dice_loss(const Tensor& pred, const Tensor& gt, bool with_grad = true) {
    if (pred.shape() != gt.shape())
        throw_shape_error("dice_loss: shape mismatch ", pred.shape().str(), " vs ",
                          gt.shape().str());
    DiceResult res;
    std::vector<double> sums;
    res.loss = detail::dice_forward(pred.data(), gt.data(), pred.shape(), sums);
    if (with_grad) {
        res.grad = Tensor(pred.shape());
        detail::dice_backward(pred.data(), gt.data(), pred.shape(), sums, 1.0, res.grad.data());
    }
    return res;
}

struct MSDLConfig {
    int scales = 6;
    double lambda_bar = 1.0;             // weight of the fused term
    std::vector<double> lambda;          // per-scale weights; empty = all 1
    double scale_weight(size_t j) const {
        return lambda.empty() ? 1.0 : lambda.at(j);
    }
};

struct MSDLResult {
    double loss = 0.0;
    double fused_term = 0.0;
    std::vector<double> scale_terms;
    Tensor fused_grad;
    std::vector<Tensor> scale_grads;
};

// Multi-scale Dice loss: lambda_bar * L(fused, gt) + sum_j lambda_j * L(pred_j, gt).
// All predictions are expected at full resolution.
inline MSDLResult msdl(std::span<const Tensor> preds, const Tensor& fused, const Tensor& gt,
                       const MSDLConfig& cfg, bool with_grad = true) {
    if (static_cast<int>(preds.size()) != cfg.scales)
        throw std::invalid_argument(detail::concat("msdl: config expects ", cfg.scales,
                                                   " scales, got ", preds.size()));
    if (!cfg.lambda.empty() && cfg.lambda.size() != preds.size())
        throw std::invalid_argument("msdl: lambda length must match scale count");
    MSDLResult res;
    DiceResult f = dice_loss(fused, gt, with_grad);
    res.fused_term = f.loss;
    res.loss = cfg.lambda_bar * f.loss;
    if (with_grad) {
        res.fused_grad = std::move(f.grad);
        for (double& v : res.fused_grad.values()) v *= cfg.lambda_bar;
    }
    for (size_t j = 0; j < preds.size(); ++j) {
        DiceResult d = dice_loss(preds[j], gt, with_grad);
        res.scale_terms.push_back(d.loss);
        double lj = cfg.scale_weight(j);
        res.loss += lj * d.loss;
        if (with_grad) {
            for (double& v : d.grad.values()) v *= lj;
            res.scale_grads.push_back(std::move(d.grad));
        }
    }
    return res;
}

// Scale fusion before renormalization: out = sum_j w_j * preds_j, one scalar
// per scale shared across class channels.
inline Tensor fuse_scales(std::span<const Tensor> preds, std::span<const double> w) {
    if (preds.empty()) throw std::invalid_argument("fuse_scales: no predictions");
    if (preds.size() != w.size())
        throw std::invalid_argument("fuse_scales: weight count must match prediction count");
    Shape s = preds[0].shape();
    for (const Tensor& p : preds)
        if (p.shape() != s)
            throw_shape_error("fuse_scales: mixed shapes ", s.str(), " vs ", p.shape().str());
    std::vector<const double*> ptrs;
    for (const Tensor& p : preds) ptrs.push_back(p.data());
    Tensor out(s);
    detail::fuse_forward(std::span<const double* const>(ptrs), s, w.data(), out.data());
    return out;
}

}  // namespace toolnet
