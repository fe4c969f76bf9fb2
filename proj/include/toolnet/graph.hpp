#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "toolnet/kernels.hpp"
#include "toolnet/layers.hpp"
#include "toolnet/losses.hpp"
#include "toolnet/tensor.hpp"

namespace toolnet {

using NodeId = int;

enum class OpKind {
    Input,
    Target,
    Param,
    Conv2d,
    ConvTranspose2d,
    MaxPool2d,
    PReLU,
    ReLU,
    Dropout,
    Add,
    ConcatChannels,
    SoftmaxChannels,
    DiceLoss,
    FuseScales,
    WeightedSumScalars,
    DotConst,
};

enum class Init { Zeros, Const, He, Bilinear };

struct ParamRecord {
    std::string name;
    Shape shape;
    bool decay = true;      // weight decay applies; off for PReLU slopes / fusion weights
    Init init = Init::Zeros;
    double init_arg = 0.0;  // Const value or Bilinear factor
    Tensor value;           // empty when the graph was built for counting only
};

struct Node {
    OpKind op{};
    std::vector<NodeId> inputs;
    int param = -1;   // kernel / slopes / fusion weights / referenced tensor
    int param2 = -1;  // conv bias
    int stride = 1;
    int pad = 0;
    int k = 0;
    double prob = 0.0;           // dropout probability
    std::vector<double> coeffs;  // WeightedSumScalars weights or DotConst probe
    std::string name;
    Shape shape;
};

// Static operation graph: a topologically ordered list of operation records
// plus a named parameter registry. Node ids are assigned in build order, so
// every input id precedes its consumer and backward traversal is the exact
// reverse of the list. The structure is immutable after building; parameter
// values are the only mutable state.
class Graph {
public:
    explicit Graph(uint64_t seed = 0, bool materialize = true)
        : seed_(seed), materialize_(materialize) {}

    uint64_t seed() const { return seed_; }

    // --- parameters ---------------------------------------------------------

    int add_param(const std::string& name, Shape shape, Init init = Init::Zeros,
                  double init_arg = 0.0, bool decay = true) {
        if (param_index_.count(name))
            throw std::invalid_argument("duplicate parameter name: " + name);
        ParamRecord rec{name, shape, decay, init, init_arg, Tensor{}};
        if (materialize_) rec.value = make_initial(rec);
        int id = static_cast<int>(params_.size());
        param_index_[name] = id;
        params_.push_back(std::move(rec));
        return id;
    }

    int param_id(const std::string& name) const {
        auto it = param_index_.find(name);
        return it == param_index_.end() ? -1 : it->second;
    }

    ParamRecord& param(int id) { return params_.at(static_cast<size_t>(id)); }
    const ParamRecord& param(int id) const { return params_.at(static_cast<size_t>(id)); }
    ParamRecord& param(const std::string& name) { return param(require_param(name)); }

    size_t num_params() const { return params_.size(); }

    std::vector<ParamRecord>& params() { return params_; }
    const std::vector<ParamRecord>& params() const { return params_; }

    bool materialized() const { return materialize_; }

    // Re-derives every parameter from its init spec and the graph seed.
    void reset_parameters() {
        materialize_ = true;
        for (auto& rec : params_) {
            rec.value = make_initial(rec);
            rec.value.drop_grad();
        }
    }

    // --- node builders --------------------------------------------------------

    NodeId input(Shape s, std::string name = "input") {
        return push({OpKind::Input, {}, -1, -1, 1, 0, 0, 0.0, {}, std::move(name), s});
    }

    NodeId target(Shape s, std::string name = "target") {
        return push({OpKind::Target, {}, -1, -1, 1, 0, 0, 0.0, {}, std::move(name), s});
    }

    NodeId param_node(int pid) {
        const ParamRecord& rec = param(pid);
        return push({OpKind::Param, {}, pid, -1, 1, 0, 0, 0.0, {}, rec.name, rec.shape});
    }

    NodeId conv2d(NodeId x, int w, int b, int stride, int pad, std::string name = "conv") {
        Shape ws = param(w).shape;
        Shape ys = kernels::conv2d_out_shape(shape_of(x), ws, stride, pad);
        if (b >= 0 && param(b).shape.numel() != ws.n)
            throw_shape_error("conv2d ", name, ": bias has ", param(b).shape.numel(),
                              " entries for ", ws.n, " output channels");
        return push({OpKind::Conv2d, {x}, w, b, stride, pad, 0, 0.0, {}, std::move(name), ys});
    }

    NodeId conv_transpose2d(NodeId x, int w, int stride, int pad, std::string name = "upconv") {
        Shape ys = kernels::conv_transpose2d_out_shape(shape_of(x), param(w).shape, stride, pad);
        return push({OpKind::ConvTranspose2d, {x}, w, -1, stride, pad, 0, 0.0, {},
                     std::move(name), ys});
    }

    NodeId maxpool2d(NodeId x, int k, int stride, std::string name = "pool") {
        Shape ys = kernels::maxpool2d_out_shape(shape_of(x), k, stride);
        return push({OpKind::MaxPool2d, {x}, -1, -1, stride, 0, k, 0.0, {}, std::move(name), ys});
    }

    NodeId prelu(NodeId x, int a, std::string name = "prelu") {
        Shape xs = shape_of(x);
        if (param(a).shape.numel() != xs.c)
            throw_shape_error("prelu ", name, ": ", param(a).shape.numel(), " slopes for ", xs.c,
                              " channels");
        return push({OpKind::PReLU, {x}, a, -1, 1, 0, 0, 0.0, {}, std::move(name), xs});
    }

    NodeId relu(NodeId x, std::string name = "relu") {
        return push({OpKind::ReLU, {x}, -1, -1, 1, 0, 0, 0.0, {}, std::move(name), shape_of(x)});
    }

    NodeId dropout(NodeId x, double p, std::string name) {
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument(detail::concat("dropout ", name,
                                                       ": p must be in [0,1], got ", p));
        return push({OpKind::Dropout, {x}, -1, -1, 1, 0, 0, p, {}, std::move(name), shape_of(x)});
    }

    NodeId add(NodeId a, NodeId b, std::string name = "add") {
        if (shape_of(a) != shape_of(b))
            throw_shape_error("add ", name, ": shape mismatch ", shape_of(a).str(), " vs ",
                              shape_of(b).str());
        return push({OpKind::Add, {a, b}, -1, -1, 1, 0, 0, 0.0, {}, std::move(name), shape_of(a)});
    }

    NodeId concat_channels(std::vector<NodeId> xs, std::string name = "concat") {
        if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
        Shape s = shape_of(xs[0]);
        int c = 0;
        for (NodeId id : xs) {
            Shape si = shape_of(id);
            if (si.n != s.n || si.h != s.h || si.w != s.w)
                throw_shape_error("concat_channels ", name, ": incompatible shapes ", s.str(),
                                  " vs ", si.str());
            c += si.c;
        }
        s.c = c;
        return push({OpKind::ConcatChannels, std::move(xs), -1, -1, 1, 0, 0, 0.0, {},
                     std::move(name), s});
    }

    NodeId softmax_channels(NodeId x, std::string name = "softmax") {
        Shape s = shape_of(x);
        if (s.c < 1) throw_shape_error("softmax_channels ", name, ": needs at least 1 channel");
        return push({OpKind::SoftmaxChannels, {x}, -1, -1, 1, 0, 0, 0.0, {}, std::move(name), s});
    }

    NodeId dice_loss(NodeId pred, NodeId gt, std::string name = "dice") {
        if (shape_of(pred) != shape_of(gt))
            throw_shape_error("dice_loss ", name, ": shape mismatch ", shape_of(pred).str(),
                              " vs ", shape_of(gt).str());
        return push({OpKind::DiceLoss, {pred, gt}, -1, -1, 1, 0, 0, 0.0, {}, std::move(name),
                     {1, 1, 1, 1}});
    }

    NodeId fuse_scales(std::vector<NodeId> preds, int w, std::string name = "fuse") {
        if (preds.empty()) throw std::invalid_argument("fuse_scales: no inputs");
        Shape s = shape_of(preds[0]);
        for (NodeId id : preds)
            if (shape_of(id) != s)
                throw_shape_error("fuse_scales ", name, ": mixed shapes ", s.str(), " vs ",
                                  shape_of(id).str());
        if (param(w).shape.numel() != static_cast<long>(preds.size()))
            throw_shape_error("fuse_scales ", name, ": ", param(w).shape.numel(),
                              " weights for ", preds.size(), " scales");
        return push({OpKind::FuseScales, std::move(preds), w, -1, 1, 0, 0, 0.0, {},
                     std::move(name), s});
    }

    NodeId weighted_sum_scalars(std::vector<NodeId> xs, std::vector<double> coeffs,
                                std::string name = "loss_sum") {
        if (xs.size() != coeffs.size())
            throw std::invalid_argument("weighted_sum_scalars: coefficient count mismatch");
        for (NodeId id : xs)
            if (shape_of(id).numel() != 1)
                throw_shape_error("weighted_sum_scalars ", name, ": input ", id, " is not scalar");
        return push({OpKind::WeightedSumScalars, std::move(xs), -1, -1, 1, 0, 0, 0.0,
                     std::move(coeffs), std::move(name), {1, 1, 1, 1}});
    }

    // Inner product with a fixed probe; reduces any tensor to a scalar.
    NodeId dot_const(NodeId x, std::vector<double> probe, std::string name = "dot") {
        if (static_cast<long>(probe.size()) != shape_of(x).numel())
            throw_shape_error("dot_const ", name, ": probe has ", probe.size(),
                              " entries for input ", shape_of(x).str());
        return push({OpKind::DotConst, {x}, -1, -1, 1, 0, 0, 0.0, std::move(probe),
                     std::move(name), {1, 1, 1, 1}});
    }

    // --- inspection -----------------------------------------------------------

    const Node& node(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }
    size_t size() const { return nodes_.size(); }
    Shape shape_of(NodeId id) const { return node(id).shape; }

private:
    int require_param(const std::string& name) const {
        int id = param_id(name);
        if (id < 0) throw std::invalid_argument("unknown parameter: " + name);
        return id;
    }

    Tensor make_initial(const ParamRecord& rec) const {
        switch (rec.init) {
            case Init::Zeros:
                return Tensor(rec.shape);
            case Init::Const:
                return Tensor::full(rec.shape, rec.init_arg);
            case Init::He: {
                RngStream rng(seed_, "init." + rec.name);
                return he_init(rec.shape, rng);
            }
            case Init::Bilinear:
                return bilinear_kernel(static_cast<int>(rec.init_arg), rec.shape.c);
        }
        throw std::logic_error("unreachable init kind");
    }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    uint64_t seed_;
    bool materialize_;
    std::vector<Node> nodes_;
    std::vector<ParamRecord> params_;
    std::unordered_map<std::string, int> param_index_;
};

// Exact count of trainable scalars: kernels, biases, slopes, fusion weights.
inline long count_parameters(const Graph& g) {
    long total = 0;
    for (const auto& rec : g.params()) total += rec.shape.numel();
    return total;
}

// Per-graph execution state: node values, gradients, pooling argmaxes and
// dropout masks. One runtime per thread; concurrent eval-mode runtimes may
// share one graph as long as nothing mutates the parameters.
template <typename T>
class Runtime {
public:
    explicit Runtime(Graph& g) : g_(&g) {
        vals_.resize(g.size());
        fed_.assign(g.size(), 0);
        argmax_.resize(g.size());
        masks_.resize(g.size());
        dice_sums_.resize(g.size());
        if constexpr (!std::is_same_v<T, double>) sync_params();
    }

    Graph& graph() { return *g_; }

    void set_train(bool train) { train_ = train; }
    void set_iteration(long it) { iteration_ = it; }
    void set_rng_seed(uint64_t seed) { rng_seed_ = seed; }

    void set_input(NodeId id, const TensorT<T>& t) {
        const Node& n = g_->node(id);
        if (n.op != OpKind::Input && n.op != OpKind::Target)
            throw std::invalid_argument("set_input: node " + n.name + " is not a placeholder");
        if (t.shape() != n.shape)
            throw_shape_error("set_input ", n.name, ": expected ", n.shape.str(), ", got ",
                              t.shape().str());
        vals_[static_cast<size_t>(id)] = t;
        fed_[static_cast<size_t>(id)] = 1;
    }

    // Pull fresh float copies of the parameters; only meaningful when T is not
    // the parameter precision.
    void sync_params() {
        param_copy_.clear();
        param_copy_.reserve(g_->num_params());
        for (const auto& rec : g_->params()) {
            require_materialized(rec);
            param_copy_.push_back(rec.value.template cast<T>());
        }
    }

    // Executes nodes [0, upto]; -1 runs the whole graph.
    void forward(NodeId upto = -1) {
        NodeId last = upto < 0 ? static_cast<NodeId>(g_->size()) - 1 : upto;
        for (NodeId id = 0; id <= last; ++id) eval_node(id);
        computed_ = last;
    }

    const TensorT<T>& value(NodeId id) const {
        if (id > computed_)
            throw std::runtime_error("value requested before forward reached node");
        return vals_[static_cast<size_t>(id)];
    }

    double scalar(NodeId id) const { return static_cast<double>(value(id)[0]); }

    // Reverse-mode sweep from a scalar loss. Parameter gradients accumulate in
    // the registry; placeholder gradients are discarded. Only defined for the
    // 64-bit runtime.
    void backward(NodeId loss) {
        static_assert(std::is_same_v<T, double>, "backward requires the 64-bit runtime");
        if (loss < 0 || loss > computed_)
            throw std::runtime_error("backward before forward: loss node not computed");
        if (g_->node(loss).shape.numel() != 1)
            throw_shape_error("backward: loss must be scalar, got ",
                              g_->node(loss).shape.str());
        for (NodeId id = 0; id <= loss; ++id) {
            vals_[static_cast<size_t>(id)].ensure_grad();
            vals_[static_cast<size_t>(id)].zero_grad();
        }
        for (auto& rec : g_->params()) {
            require_materialized(rec);
            rec.value.ensure_grad();
            rec.value.zero_grad();
        }
        vals_[static_cast<size_t>(loss)].grad()[0] = 1.0;
        for (NodeId id = loss; id >= 0; --id) grad_node(id);
    }

private:
    void require_materialized(const ParamRecord& rec) const {
        if (rec.value.empty() && rec.shape.numel() > 0)
            throw std::runtime_error("parameter '" + rec.name +
                                     "' was never materialized (count-only graph)");
    }

    const T* pdata(int pid) const {
        if constexpr (std::is_same_v<T, double>) {
            const ParamRecord& rec = g_->param(pid);
            require_materialized(rec);
            return rec.value.data();
        } else {
            return param_copy_.at(static_cast<size_t>(pid)).data();
        }
    }

    double* pgrad(int pid) { return g_->param(pid).value.grad(); }

    TensorT<T>& val(NodeId id) { return vals_[static_cast<size_t>(id)]; }

    // Reuses the node's value buffer across forward passes; every op below
    // writes each output element, so stale contents never leak through.
    TensorT<T>& prepare(NodeId id, Shape s) {
        TensorT<T>& t = vals_[static_cast<size_t>(id)];
        if (t.shape() != s || t.empty()) t = TensorT<T>(s);
        return t;
    }

    void eval_node(NodeId id) {
        const Node& n = g_->node(id);
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Target:
                if (!fed_[static_cast<size_t>(id)])
                    throw std::runtime_error("placeholder '" + n.name + "' was not fed");
                return;
            case OpKind::Param: {
                const T* p = pdata(n.param);
                TensorT<T>& out = prepare(id, n.shape);
                std::copy(p, p + n.shape.numel(), out.data());
                return;
            }
            case OpKind::Conv2d: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, n.shape);
                kernels::conv2d_forward(x.data(), x.shape(), pdata(n.param),
                                        g_->param(n.param).shape,
                                        n.param2 >= 0 ? pdata(n.param2) : nullptr, out.data(),
                                        n.shape, n.stride, n.pad);
                return;
            }
            case OpKind::ConvTranspose2d: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, n.shape);
                kernels::conv_transpose2d_forward(x.data(), x.shape(), pdata(n.param),
                                                  g_->param(n.param).shape, out.data(), n.shape,
                                                  n.stride, n.pad);
                return;
            }
            case OpKind::MaxPool2d: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, n.shape);
                auto& amax = argmax_[static_cast<size_t>(id)];
                amax.resize(static_cast<size_t>(n.shape.numel()));
                kernels::maxpool2d_forward(x.data(), x.shape(), out.data(), n.shape, amax.data(),
                                           n.k, n.stride);
                return;
            }
            case OpKind::PReLU: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, n.shape);
                kernels::prelu_forward(x.data(), x.shape(), pdata(n.param), out.data());
                return;
            }
            case OpKind::ReLU: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, n.shape);
                kernels::relu_forward(x.data(), x.numel(), out.data());
                return;
            }
            case OpKind::Dropout: {
                const TensorT<T>& x = val(n.inputs[0]);
                if (!train_ || n.prob == 0.0) {
                    TensorT<T> copy = x;
                    vals_[static_cast<size_t>(id)] = std::move(copy);
                    return;
                }
                if (n.prob >= 1.0)
                    throw std::runtime_error("dropout '" + n.name +
                                             "': p=1 in train mode zeroes every activation");
                auto& mask = masks_[static_cast<size_t>(id)];
                kernels::dropout_mask(mask, x.numel(), n.prob,
                                      RngStream(rng_seed_, n.name,
                                                static_cast<uint64_t>(iteration_)));
                TensorT<T>& out = prepare(id, n.shape);
                kernels::dropout_forward(x.data(), x.numel(), mask.data(), n.prob, out.data());
                return;
            }
            case OpKind::Add: {
                const TensorT<T>& a = val(n.inputs[0]);
                const TensorT<T>& b = val(n.inputs[1]);
                TensorT<T>& out = prepare(id, n.shape);
                const T* pa = a.data();
                const T* pb = b.data();
                T* po = out.data();
                for (long i = 0; i < n.shape.numel(); ++i) po[i] = pa[i] + pb[i];
                return;
            }
            case OpKind::ConcatChannels: {
                TensorT<T>& out = prepare(id, n.shape);
                long plane = static_cast<long>(n.shape.h) * n.shape.w;
                for (int b = 0; b < n.shape.n; ++b) {
                    long coff = 0;
                    for (NodeId src : n.inputs) {
                        const TensorT<T>& x = val(src);
                        long cs = x.shape().c;
                        std::copy(x.data() + b * cs * plane, x.data() + (b + 1) * cs * plane,
                                  out.data() + (b * n.shape.c + coff) * plane);
                        coff += cs;
                    }
                }
                return;
            }
            case OpKind::SoftmaxChannels: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, n.shape);
                kernels::softmax_channels_forward(x.data(), x.shape(), out.data());
                return;
            }
            case OpKind::DiceLoss: {
                const TensorT<T>& pred = val(n.inputs[0]);
                const TensorT<T>& gt = val(n.inputs[1]);
                TensorT<T>& out = prepare(id, {1, 1, 1, 1});
                out[0] = static_cast<T>(losses_forward(pred, gt, id));
                return;
            }
            case OpKind::FuseScales: {
                TensorT<T>& out = prepare(id, n.shape);
                std::vector<const T*> xs;
                for (NodeId src : n.inputs) xs.push_back(val(src).data());
                toolnet::detail::fuse_forward(std::span<const T* const>(xs), n.shape,
                                              pdata(n.param), out.data());
                return;
            }
            case OpKind::WeightedSumScalars: {
                TensorT<T>& out = prepare(id, {1, 1, 1, 1});
                T acc = T(0);
                for (size_t i = 0; i < n.inputs.size(); ++i)
                    acc += static_cast<T>(n.coeffs[i]) * val(n.inputs[i])[0];
                out[0] = acc;
                return;
            }
            case OpKind::DotConst: {
                const TensorT<T>& x = val(n.inputs[0]);
                TensorT<T>& out = prepare(id, {1, 1, 1, 1});
                T acc = T(0);
                for (long i = 0; i < x.numel(); ++i)
                    acc += static_cast<T>(n.coeffs[static_cast<size_t>(i)]) * x[i];
                out[0] = acc;
                return;
            }
        }
        throw std::logic_error("unreachable op kind");
    }

    double losses_forward(const TensorT<T>& pred, const TensorT<T>& gt, NodeId id) {
        auto& sums = dice_sums_[static_cast<size_t>(id)];
        return toolnet::detail::dice_forward(pred.data(), gt.data(), pred.shape(), sums);
    }

    void grad_node(NodeId id) {
        const Node& n = g_->node(id);
        TensorT<T>& out = val(id);
        if (!out.has_grad()) return;
        switch (n.op) {
            case OpKind::Input:
            case OpKind::Target:
                return;
            case OpKind::Param: {
                double* gp = pgrad(n.param);
                const T* g = out.grad();
                for (long i = 0; i < n.shape.numel(); ++i) gp[i] += g[i];
                return;
            }
            case OpKind::Conv2d: {
                TensorT<T>& x = val(n.inputs[0]);
                kernels::conv2d_backward_input(out.grad(), n.shape, pdata(n.param),
                                               g_->param(n.param).shape, x.grad(), x.shape(),
                                               n.stride, n.pad);
                kernels::conv2d_backward_params(out.grad(), n.shape, x.data(), x.shape(),
                                                pgrad(n.param), g_->param(n.param).shape,
                                                n.param2 >= 0 ? pgrad(n.param2) : nullptr,
                                                n.stride, n.pad);
                return;
            }
            case OpKind::ConvTranspose2d: {
                TensorT<T>& x = val(n.inputs[0]);
                kernels::conv_transpose2d_backward_input(out.grad(), n.shape, pdata(n.param),
                                                         g_->param(n.param).shape, x.grad(),
                                                         x.shape(), n.stride, n.pad);
                kernels::conv_transpose2d_backward_kernel(out.grad(), n.shape, x.data(),
                                                          x.shape(), pgrad(n.param),
                                                          g_->param(n.param).shape, n.stride,
                                                          n.pad);
                return;
            }
            case OpKind::MaxPool2d: {
                TensorT<T>& x = val(n.inputs[0]);
                kernels::maxpool2d_backward(out.grad(), n.shape,
                                            argmax_[static_cast<size_t>(id)].data(), x.grad(),
                                            x.shape());
                return;
            }
            case OpKind::PReLU: {
                TensorT<T>& x = val(n.inputs[0]);
                kernels::prelu_backward(x.data(), x.shape(), pdata(n.param), out.grad(),
                                        x.grad(), pgrad(n.param));
                return;
            }
            case OpKind::ReLU: {
                TensorT<T>& x = val(n.inputs[0]);
                kernels::relu_backward(x.data(), x.numel(), out.grad(), x.grad());
                return;
            }
            case OpKind::Dropout: {
                TensorT<T>& x = val(n.inputs[0]);
                if (!train_ || n.prob == 0.0) {
                    const T* g = out.grad();
                    T* gx = x.grad();
                    for (long i = 0; i < x.numel(); ++i) gx[i] += g[i];
                    return;
                }
                kernels::dropout_backward(out.grad(), x.numel(),
                                          masks_[static_cast<size_t>(id)].data(), n.prob,
                                          x.grad());
                return;
            }
            case OpKind::Add: {
                for (int side = 0; side < 2; ++side) {
                    TensorT<T>& x = val(n.inputs[static_cast<size_t>(side)]);
                    const T* g = out.grad();
                    T* gx = x.grad();
                    for (long i = 0; i < x.numel(); ++i) gx[i] += g[i];
                }
                return;
            }
            case OpKind::ConcatChannels: {
                long plane = static_cast<long>(n.shape.h) * n.shape.w;
                for (int b = 0; b < n.shape.n; ++b) {
                    long coff = 0;
                    for (NodeId src : n.inputs) {
                        TensorT<T>& x = val(src);
                        long cs = x.shape().c;
                        const T* g = out.grad() + (b * n.shape.c + coff) * plane;
                        T* gx = x.grad() + b * cs * plane;
                        for (long i = 0; i < cs * plane; ++i) gx[i] += g[i];
                        coff += cs;
                    }
                }
                return;
            }
            case OpKind::SoftmaxChannels: {
                TensorT<T>& x = val(n.inputs[0]);
                kernels::softmax_channels_backward(out.data(), n.shape, out.grad(), x.grad());
                return;
            }
            case OpKind::DiceLoss: {
                TensorT<T>& pred = val(n.inputs[0]);
                const TensorT<T>& gt = val(n.inputs[1]);
                toolnet::detail::dice_backward(pred.data(), gt.data(), pred.shape(),
                                               dice_sums_[static_cast<size_t>(id)],
                                               static_cast<double>(out.grad()[0]), pred.grad());
                return;
            }
            case OpKind::FuseScales: {
                const T* w = pdata(n.param);
                double* gw = pgrad(n.param);
                const T* g = out.grad();
                for (size_t j = 0; j < n.inputs.size(); ++j) {
                    TensorT<T>& x = val(n.inputs[j]);
                    T* gx = x.grad();
                    const T* xd = x.data();
                    double acc = 0.0;
                    for (long i = 0; i < n.shape.numel(); ++i) {
                        gx[i] += w[j] * g[i];
                        acc += static_cast<double>(g[i]) * xd[i];
                    }
                    gw[j] += acc;
                }
                return;
            }
            case OpKind::WeightedSumScalars: {
                for (size_t i = 0; i < n.inputs.size(); ++i) {
                    TensorT<T>& x = val(n.inputs[i]);
                    x.grad()[0] += static_cast<T>(n.coeffs[i]) * out.grad()[0];
                }
                return;
            }
            case OpKind::DotConst: {
                TensorT<T>& x = val(n.inputs[0]);
                T g = out.grad()[0];
                T* gx = x.grad();
                for (long i = 0; i < x.numel(); ++i)
                    gx[i] += g * static_cast<T>(n.coeffs[static_cast<size_t>(i)]);
                return;
            }
        }
        throw std::logic_error("unreachable op kind");
    }

    Graph* g_;
    std::vector<TensorT<T>> vals_;
    std::vector<uint8_t> fed_;
    std::vector<std::vector<int>> argmax_;
    std::vector<std::vector<uint8_t>> masks_;
    std::vector<std::vector<double>> dice_sums_;
    std::vector<TensorT<T>> param_copy_;
    bool train_ = false;
    long iteration_ = 0;
    uint64_t rng_seed_ = 0;
    NodeId computed_ = -1;
};

// Central finite differences against the analytic gradient of `param_name`.
// Returns max over sampled coordinates of |analytic - fd| / max(1, |fd|).
// Inputs must already be fed; the runtime's mode and iteration stay fixed so
// dropout masks are identical across the probe evaluations. Data with exact
// maxpool ties is outside the contract (the subgradient is not unique there);
// callers probe with continuous random values.
inline double finite_diff_check(Runtime<double>& rt, NodeId loss, const std::string& param_name,
                                double eps = 1e-5, int max_coords = 32) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
    Graph& g = rt.graph();
    ParamRecord& rec = g.param(param_name);
    rt.forward(loss);
    rt.backward(loss);
    std::vector<double> analytic(rec.value.grad(), rec.value.grad() + rec.shape.numel());

    long n = rec.shape.numel();
    long step = n <= max_coords ? 1 : n / max_coords;
    double worst = 0.0;
    for (long i = 0; i < n; i += step) {
        double saved = rec.value[static_cast<size_t>(i)];
        rec.value[static_cast<size_t>(i)] = saved + eps;
        rt.forward(loss);
        double up = rt.scalar(loss);
        rec.value[static_cast<size_t>(i)] = saved - eps;
        rt.forward(loss);
        double down = rt.scalar(loss);
        rec.value[static_cast<size_t>(i)] = saved;
        double fd = (up - down) / (2.0 * eps);
        double rel = std::abs(analytic[static_cast<size_t>(i)] - fd) /
                     std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
    }
    rt.forward(loss);  // leave values consistent with unperturbed parameters
    return worst;
}

}  // namespace toolnet
