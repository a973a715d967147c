#pragma once

// Reverse-mode automatic differentiation on dense row-major tensors.
// Tensors are immutable values; a Tape records one forward pass at tensor-op
// granularity and replays it in reverse on backward(). Shapes must match
// exactly everywhere: there is no broadcasting.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <utility>

#include "dcnet/common.hpp"

namespace dcnet {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ContractError("shape extents must be positive, got " + str(d));
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += str(s[i]);
    }
    return out + "]";
}

class Tape;

struct Tensor {
    Shape shape;
    std::shared_ptr<const std::vector<double>> data;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)) {
        if (numel(shape) != static_cast<std::int64_t>(v.size()))
            throw DimensionError("tensor " + shape_str(shape) + " cannot hold " + str(v.size()) +
                                 " values");
        data = std::make_shared<const std::vector<double>>(std::move(v));
    }

    static Tensor zeros(Shape s) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    static Tensor full(Shape s, double v) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
    }

    std::int64_t size() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
    bool empty() const { return !data; }
    const std::vector<double>& values() const& {
        if (!data) throw ContractError("use of empty tensor");
        return *data;
    }
    // rvalue access copies: the backing store dies with the temporary
    std::vector<double> values() const&& {
        if (!data) throw ContractError("use of empty tensor");
        return *data;
    }

    double scalar() const {
        if (size() != 1) throw ContractError("scalar() on tensor of shape " + shape_str(shape));
        return (*data)[0];
    }

    bool attached() const { return node >= 0; }

    /// Same value, no tape membership: gradients stop here.
    Tensor detached() const {
        Tensor t = *this;
        t.tape = nullptr;
        t.node = -1;
        return t;
    }
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor&)>;

    Tape() : id_(next_id()++) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int emplace(const char* op, std::vector<int> inputs, Shape shape, BackwardFn backward) {
        nodes_.push_back(Node{op, std::move(inputs), std::move(shape), std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    /// Attach a detached value as a differentiable leaf.
    Tensor leaf(const Tensor& value) {
        if (value.empty()) throw ContractError("leaf: empty tensor");
        Tensor t = value.detached();
        t.tape = this;
        t.node = emplace("leaf", {}, t.shape, nullptr);
        return t;
    }

    /// Reverse sweep from a scalar loss. Visits nodes exactly once, in
    /// reverse append order; accumulated gradients stay on the tape.
    void backward(const Tensor& loss) {
        if (!loss.attached() || loss.tape != this)
            throw ContractError("backward: loss is not recorded on this tape");
        if (numel(loss.shape) != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape));
        grads_.assign(nodes_.size(), Tensor{});
        accumulate(loss.node, Tensor::full(loss.shape, 1.0));
        for (int i = loss.node; i >= 0; --i) {
            if (grads_[i].empty() || !nodes_[i].backward) continue;
            nodes_[i].backward(*this, grads_[i]);
        }
    }

    /// Gradient at a node, or nullptr when nothing reached it.
    const Tensor* grad(int node) const {
        if (node < 0 || node >= static_cast<int>(grads_.size())) return nullptr;
        return grads_[node].empty() ? nullptr : &grads_[node];
    }

    Tensor grad_or_zero(const Tensor& ref) const {
        if (ref.attached() && ref.tape == this)
            if (const Tensor* g = grad(ref.node)) return g->detached();
        return Tensor::zeros(ref.shape);
    }

    void accumulate(int node, const Tensor& g) {
        if (node < 0 || node >= static_cast<int>(nodes_.size()))
            throw ContractError("accumulate: node " + str(node) + " not on tape");
        if (g.shape != nodes_[node].shape)
            throw ContractError("gradient shape " + shape_str(g.shape) + " != value shape " +
                                shape_str(nodes_[node].shape) + " at node " + str(node));
        if (grads_[node].empty()) {
            grads_[node] = g.detached();
            return;
        }
        const std::vector<double>& a = grads_[node].values();
        const std::vector<double>& b = g.values();
        std::vector<double> sum(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
        grads_[node] = Tensor(grads_[node].shape, std::move(sum));
    }

    std::size_t size() const { return nodes_.size(); }
    const char* op_at(int node) const { return nodes_.at(node).op; }
    std::uint64_t id() const { return id_; }

private:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        Shape shape;
        BackwardFn backward;
    };

    static std::atomic<std::uint64_t>& next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter;
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::uint64_t id_;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw NumericError(std::string(op) + ": non-finite value at flat index " + str(i));
}

inline Tape* common_tape(std::initializer_list<const Tensor*> ins) {
    Tape* t = nullptr;
    for (const Tensor* in : ins) {
        if (!in->attached()) continue;
        if (t && t != in->tape) throw ContractError("operands recorded on different tapes");
        t = in->tape;
    }
    return t;
}

/// Wrap a computed value as an op result, recording it when any input is live.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> vals,
                          std::initializer_list<const Tensor*> ins, Tape::BackwardFn backward) {
    check_finite(op, vals);
    Tensor out(std::move(shape), std::move(vals));
    if (Tape* tape = common_tape(ins)) {
        std::vector<int> input_nodes;
        for (const Tensor* in : ins)
            if (in->attached()) input_nodes.push_back(in->node);
        out.tape = tape;
        out.node = tape->emplace(op, std::move(input_nodes), out.shape, std::move(backward));
    }
    return out;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

/// c[m x p] = a[m x k] * b[k x p]
inline std::vector<double> gemm(const double* a, const double* b, int m, int k, int p) {
    std::vector<double> c(static_cast<std::size_t>(m) * p);
    EMap(c.data(), m, p).noalias() = ECMap(a, m, k) * ECMap(b, k, p);
    return c;
}

/// c[m x k] = a[m x p] * b[k x p]^T
inline std::vector<double> gemm_nt(const double* a, const double* b, int m, int p, int k) {
    std::vector<double> c(static_cast<std::size_t>(m) * k);
    EMap(c.data(), m, k).noalias() = ECMap(a, m, p) * ECMap(b, k, p).transpose();
    return c;
}

/// c[k x p] = a[m x k]^T * b[m x p]
inline std::vector<double> gemm_tn(const double* a, const double* b, int m, int k, int p) {
    std::vector<double> c(static_cast<std::size_t>(k) * p);
    EMap(c.data(), k, p).noalias() = ECMap(a, m, k).transpose() * ECMap(b, m, p);
    return c;
}

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Patch matrix [(C*kh*kw) x (Ho*Wo)] for cross-correlation as a GEMM.
inline std::vector<double> im2col(const double* x, int C, int H, int W, int kh, int kw, int stride,
                                  int pad, int Ho, int Wo) {
    std::vector<double> col(static_cast<std::size_t>(C) * kh * kw * Ho * Wo, 0.0);
    const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<std::int64_t>(c) * H * W;
        for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
                double* row = col.data() + ((static_cast<std::int64_t>(c) * kh + u) * kw + v) * plane;
                for (int i = 0; i < Ho; ++i) {
                    const int y = i * stride + u - pad;
                    if (y < 0 || y >= H) continue;
                    const double* src = xc + static_cast<std::int64_t>(y) * W;
                    double* dst = row + static_cast<std::int64_t>(i) * Wo;
                    for (int j = 0; j < Wo; ++j) {
                        const int xcoord = j * stride + v - pad;
                        if (xcoord >= 0 && xcoord < W) dst[j] = src[xcoord];
                    }
                }
            }
        }
    }
    return col;
}

/// Adjoint of im2col: scatter-add patch gradients back onto the input grid.
inline std::vector<double> col2im(const std::vector<double>& col, int C, int H, int W, int kh,
                                  int kw, int stride, int pad, int Ho, int Wo) {
    std::vector<double> x(static_cast<std::size_t>(C) * H * W, 0.0);
    const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        double* xc = x.data() + static_cast<std::int64_t>(c) * H * W;
        for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
                const double* row =
                    col.data() + ((static_cast<std::int64_t>(c) * kh + u) * kw + v) * plane;
                for (int i = 0; i < Ho; ++i) {
                    const int y = i * stride + u - pad;
                    if (y < 0 || y >= H) continue;
                    double* dst = xc + static_cast<std::int64_t>(y) * W;
                    const double* src = row + static_cast<std::int64_t>(i) * Wo;
                    for (int j = 0; j < Wo; ++j) {
                        const int xcoord = j * stride + v - pad;
                        if (xcoord >= 0 && xcoord < W) dst[xcoord] += src[j];
                    }
                }
            }
        }
    }
    return x;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape) + " and " +
                             shape_str(b.shape) + " must match exactly");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_result("add", a.shape, std::move(out), {&a, &b},
                               [a, b](Tape& t, const Tensor& g) {
                                   if (a.attached()) t.accumulate(a.node, g);
                                   if (b.attached()) t.accumulate(b.node, g);
                               });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_result("sub", a.shape, std::move(out), {&a, &b},
                               [a, b](Tape& t, const Tensor& g) {
                                   if (a.attached()) t.accumulate(a.node, g);
                                   if (b.attached()) {
                                       const auto& gv = g.values();
                                       std::vector<double> neg(gv.size());
                                       for (std::size_t i = 0; i < gv.size(); ++i) neg[i] = -gv[i];
                                       t.accumulate(b.node, Tensor(g.shape, std::move(neg)));
                                   }
                               });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_result(
        "mul", a.shape, std::move(out), {&a, &b}, [a, b](Tape& t, const Tensor& g) {
            const auto& gv = g.values();
            if (a.attached()) {
                const auto& bv2 = b.values();
                std::vector<double> ga(gv.size());
                for (std::size_t i = 0; i < gv.size(); ++i) ga[i] = gv[i] * bv2[i];
                t.accumulate(a.node, Tensor(g.shape, std::move(ga)));
            }
            if (b.attached()) {
                const auto& av2 = a.values();
                std::vector<double> gb(gv.size());
                for (std::size_t i = 0; i < gv.size(); ++i) gb[i] = gv[i] * av2[i];
                t.accumulate(b.node, Tensor(g.shape, std::move(gb)));
            }
        });
}

inline Tensor scale(const Tensor& a, double c) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return detail::make_result("scale", a.shape, std::move(out), {&a},
                               [a, c](Tape& t, const Tensor& g) {
                                   const auto& gv = g.values();
                                   std::vector<double> ga(gv.size());
                                   for (std::size_t i = 0; i < gv.size(); ++i) ga[i] = gv[i] * c;
                                   t.accumulate(a.node, Tensor(g.shape, std::move(ga)));
                               });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                             shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], p = b.shape[1];
    auto out = detail::gemm(a.values().data(), b.values().data(), m, k, p);
    return detail::make_result(
        "matmul", {m, p}, std::move(out), {&a, &b}, [a, b, m, k, p](Tape& t, const Tensor& g) {
            if (a.attached())
                t.accumulate(a.node, Tensor({m, k}, detail::gemm_nt(g.values().data(),
                                                                    b.values().data(), m, p, k)));
            if (b.attached())
                t.accumulate(b.node, Tensor({k, p}, detail::gemm_tn(a.values().data(),
                                                                    g.values().data(), m, k, p)));
        });
}

/// Cross-correlation of a [C x H x W] input with an [O x C x kh x kw] kernel.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (input.shape.size() != 3)
        throw DimensionError("conv2d: input must be CxHxW, got " + shape_str(input.shape));
    if (kernel.shape.size() != 4)
        throw DimensionError("conv2d: kernel must be OxCxKhxKw, got " + shape_str(kernel.shape));
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int O = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3];
    if (kernel.shape[1] != C)
        throw DimensionError("conv2d: kernel expects " + str(kernel.shape[1]) +
                             " input channels, input has " + str(C));
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw DimensionError("conv2d: kernel " + str(kh) + "x" + str(kw) +
                             " larger than padded input " + str(H + 2 * padding) + "x" +
                             str(W + 2 * padding));
    const int Ho = detail::conv_out_extent(H, kh, stride, padding);
    const int Wo = detail::conv_out_extent(W, kw, stride, padding);
    const int patch = C * kh * kw;

    auto col = detail::im2col(input.values().data(), C, H, W, kh, kw, stride, padding, Ho, Wo);
    auto out = detail::gemm(kernel.values().data(), col.data(), O, patch, Ho * Wo);

    return detail::make_result(
        "conv2d", {O, Ho, Wo}, std::move(out), {&input, &kernel},
        [input, kernel, stride, padding, C, H, W, O, kh, kw, Ho, Wo,
         patch](Tape& t, const Tensor& g) {
            // col is recomputed rather than saved: trades one pass for memory.
            if (kernel.attached()) {
                auto col2 = detail::im2col(input.values().data(), C, H, W, kh, kw, stride, padding,
                                           Ho, Wo);
                t.accumulate(kernel.node,
                             Tensor({O, C, kh, kw}, detail::gemm_nt(g.values().data(), col2.data(),
                                                                    O, Ho * Wo, patch)));
            }
            if (input.attached()) {
                auto dcol = detail::gemm_tn(kernel.values().data(), g.values().data(), O, patch,
                                            Ho * Wo);
                t.accumulate(input.node,
                             Tensor({C, H, W}, detail::col2im(dcol, C, H, W, kh, kw, stride,
                                                              padding, Ho, Wo)));
            }
        });
}

/// One shared [kh x kw] kernel slid over every band independently (stride, no
/// padding). This is the spatial blur-and-downsample operator.
inline Tensor conv2d_per_band(const Tensor& input, const Tensor& kernel, int stride) {
    if (input.shape.size() != 3)
        throw DimensionError("conv2d_per_band: input must be CxHxW, got " + shape_str(input.shape));
    if (kernel.shape.size() != 2)
        throw DimensionError("conv2d_per_band: kernel must be KhxKw, got " +
                             shape_str(kernel.shape));
    if (stride < 1) throw ContractError("conv2d_per_band: stride must be >= 1");
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int kh = kernel.shape[0], kw = kernel.shape[1];
    if (kh > H || kw > W)
        throw DimensionError("conv2d_per_band: kernel " + str(kh) + "x" + str(kw) +
                             " larger than input " + str(H) + "x" + str(W));
    const int Ho = detail::conv_out_extent(H, kh, stride, 0);
    const int Wo = detail::conv_out_extent(W, kw, stride, 0);

    const auto& x = input.values();
    const auto& k = kernel.values();
    std::vector<double> out(static_cast<std::size_t>(C) * Ho * Wo);
    for (int c = 0; c < C; ++c) {
        const double* xc = x.data() + static_cast<std::int64_t>(c) * H * W;
        double* oc = out.data() + static_cast<std::int64_t>(c) * Ho * Wo;
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (int u = 0; u < kh; ++u)
                    for (int v = 0; v < kw; ++v)
                        acc += k[static_cast<std::size_t>(u) * kw + v] *
                               xc[static_cast<std::int64_t>(i * stride + u) * W + j * stride + v];
                oc[static_cast<std::int64_t>(i) * Wo + j] = acc;
            }
    }

    return detail::make_result(
        "conv2d_per_band", {C, Ho, Wo}, std::move(out), {&input, &kernel},
        [input, kernel, stride, C, H, W, kh, kw, Ho, Wo](Tape& t, const Tensor& g) {
            const auto& gv = g.values();
            const auto& xv = input.values();
            const auto& kv = kernel.values();
            if (kernel.attached()) {
                std::vector<double> gk(kv.size(), 0.0);
                for (int c = 0; c < C; ++c) {
                    const double* xc = xv.data() + static_cast<std::int64_t>(c) * H * W;
                    const double* gc = gv.data() + static_cast<std::int64_t>(c) * Ho * Wo;
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) {
                            const double gij = gc[static_cast<std::int64_t>(i) * Wo + j];
                            for (int u = 0; u < kh; ++u)
                                for (int v = 0; v < kw; ++v)
                                    gk[static_cast<std::size_t>(u) * kw + v] +=
                                        gij * xc[static_cast<std::int64_t>(i * stride + u) * W +
                                                 j * stride + v];
                        }
                }
                t.accumulate(kernel.node, Tensor({kh, kw}, std::move(gk)));
            }
            if (input.attached()) {
                std::vector<double> gx(xv.size(), 0.0);
                for (int c = 0; c < C; ++c) {
                    double* xc = gx.data() + static_cast<std::int64_t>(c) * H * W;
                    const double* gc = gv.data() + static_cast<std::int64_t>(c) * Ho * Wo;
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) {
                            const double gij = gc[static_cast<std::int64_t>(i) * Wo + j];
                            for (int u = 0; u < kh; ++u)
                                for (int v = 0; v < kw; ++v)
                                    xc[static_cast<std::int64_t>(i * stride + u) * W + j * stride +
                                       v] += gij * kv[static_cast<std::size_t>(u) * kw + v];
                        }
                }
                t.accumulate(input.node, Tensor({C, H, W}, std::move(gx)));
            }
        });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { relu, clamp01, sigmoid, log, exp, abs };

/// Clamp to [lo, hi]; subgradient 0 outside the open interval.
inline Tensor clamp_range(const Tensor& t, double lo, double hi) {
    const auto& x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(std::max(x[i], lo), hi);
    return detail::make_result("clamp", t.shape, std::move(out), {&t},
                               [t, lo, hi](Tape& tp, const Tensor& g) {
                                   const auto& x2 = t.values();
                                   const auto& gv = g.values();
                                   std::vector<double> gx(gv.size());
                                   for (std::size_t i = 0; i < gv.size(); ++i)
                                       gx[i] = (x2[i] > lo && x2[i] < hi) ? gv[i] : 0.0;
                                   tp.accumulate(t.node, Tensor(g.shape, std::move(gx)));
                               });
}

inline Tensor activation(const Tensor& t, Act kind) {
    const auto& x = t.values();
    switch (kind) {
        case Act::relu: {
            std::vector<double> out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
            return detail::make_result("relu", t.shape, std::move(out), {&t},
                                       [t](Tape& tp, const Tensor& g) {
                                           const auto& x2 = t.values();
                                           const auto& gv = g.values();
                                           std::vector<double> gx(gv.size());
                                           for (std::size_t i = 0; i < gv.size(); ++i)
                                               gx[i] = x2[i] > 0.0 ? gv[i] : 0.0;
                                           tp.accumulate(t.node, Tensor(g.shape, std::move(gx)));
                                       });
        }
        case Act::clamp01:
            return clamp_range(t, 0.0, 1.0);
        case Act::sigmoid: {
            std::vector<double> out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
            Tensor y(t.shape, out);
            return detail::make_result("sigmoid", t.shape, std::move(out), {&t},
                                       [t, y](Tape& tp, const Tensor& g) {
                                           const auto& s = y.values();
                                           const auto& gv = g.values();
                                           std::vector<double> gx(gv.size());
                                           for (std::size_t i = 0; i < gv.size(); ++i)
                                               gx[i] = gv[i] * s[i] * (1.0 - s[i]);
                                           tp.accumulate(t.node, Tensor(g.shape, std::move(gx)));
                                       });
        }
        case Act::log: {
            for (std::size_t i = 0; i < x.size(); ++i)
                if (!(x[i] > 0.0))
                    throw DomainError("log: nonpositive entry " + str(x[i]) + " at flat index " +
                                      str(i));
            std::vector<double> out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log(x[i]);
            return detail::make_result("log", t.shape, std::move(out), {&t},
                                       [t](Tape& tp, const Tensor& g) {
                                           const auto& x2 = t.values();
                                           const auto& gv = g.values();
                                           std::vector<double> gx(gv.size());
                                           for (std::size_t i = 0; i < gv.size(); ++i)
                                               gx[i] = gv[i] / x2[i];
                                           tp.accumulate(t.node, Tensor(g.shape, std::move(gx)));
                                       });
        }
        case Act::exp: {
            std::vector<double> out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
            Tensor y(t.shape, out);
            return detail::make_result("exp", t.shape, std::move(out), {&t},
                                       [t, y](Tape& tp, const Tensor& g) {
                                           const auto& e = y.values();
                                           const auto& gv = g.values();
                                           std::vector<double> gx(gv.size());
                                           for (std::size_t i = 0; i < gv.size(); ++i)
                                               gx[i] = gv[i] * e[i];
                                           tp.accumulate(t.node, Tensor(g.shape, std::move(gx)));
                                       });
        }
        case Act::abs: {
            std::vector<double> out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::abs(x[i]);
            return detail::make_result(
                "abs", t.shape, std::move(out), {&t}, [t](Tape& tp, const Tensor& g) {
                    const auto& x2 = t.values();
                    const auto& gv = g.values();
                    std::vector<double> gx(gv.size());
                    for (std::size_t i = 0; i < gv.size(); ++i)
                        gx[i] = x2[i] > 0.0 ? gv[i] : (x2[i] < 0.0 ? -gv[i] : 0.0);
                    tp.accumulate(t.node, Tensor(g.shape, std::move(gx)));
                });
        }
    }
    throw ContractError("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Pooling and dense layers
// ---------------------------------------------------------------------------

inline Tensor pool_avg(const Tensor& t, int size, int stride) {
    if (t.shape.size() != 3)
        throw DimensionError("pool_avg: input must be CxHxW, got " + shape_str(t.shape));
    if (size < 1 || stride < 1) throw ContractError("pool_avg: size and stride must be >= 1");
    const int C = t.shape[0], H = t.shape[1], W = t.shape[2];
    if (size > H || size > W)
        throw DimensionError("pool_avg: window " + str(size) + " exceeds spatial extent " +
                             str(H) + "x" + str(W));
    const int Ho = (H - size) / stride + 1;
    const int Wo = (W - size) / stride + 1;
    const double inv = 1.0 / (static_cast<double>(size) * size);

    const auto& x = t.values();
    std::vector<double> out(static_cast<std::size_t>(C) * Ho * Wo);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (int u = 0; u < size; ++u)
                    for (int v = 0; v < size; ++v)
                        acc += x[(static_cast<std::int64_t>(c) * H + i * stride + u) * W +
                                 j * stride + v];
                out[(static_cast<std::int64_t>(c) * Ho + i) * Wo + j] = acc * inv;
            }

    return detail::make_result(
        "pool_avg", {C, Ho, Wo}, std::move(out), {&t},
        [t, size, stride, C, H, W, Ho, Wo, inv](Tape& tp, const Tensor& g) {
            const auto& gv = g.values();
            std::vector<double> gx(static_cast<std::size_t>(C) * H * W, 0.0);
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < Ho; ++i)
                    for (int j = 0; j < Wo; ++j) {
                        const double share =
                            gv[(static_cast<std::int64_t>(c) * Ho + i) * Wo + j] * inv;
                        for (int u = 0; u < size; ++u)
                            for (int v = 0; v < size; ++v)
                                gx[(static_cast<std::int64_t>(c) * H + i * stride + u) * W +
                                   j * stride + v] += share;
                    }
            tp.accumulate(t.node, Tensor({C, H, W}, std::move(gx)));
        });
}

inline Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape.size() != 1 || w.shape.size() != 2 || b.shape.size() != 1)
        throw DimensionError("fully_connected: expected vector, matrix, vector");
    const int din = x.shape[0], dout = w.shape[0];
    if (w.shape[1] != din || b.shape[0] != dout)
        throw DimensionError("fully_connected: w " + shape_str(w.shape) + " incompatible with x " +
                             shape_str(x.shape) + " and b " + shape_str(b.shape));
    const auto& xv = x.values();
    const auto& wv = w.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(dout));
    for (int i = 0; i < dout; ++i) {
        double acc = bv[i];
        const double* wr = wv.data() + static_cast<std::int64_t>(i) * din;
        for (int j = 0; j < din; ++j) acc += wr[j] * xv[j];
        out[i] = acc;
    }
    return detail::make_result(
        "fully_connected", {dout}, std::move(out), {&x, &w, &b},
        [x, w, b, din, dout](Tape& tp, const Tensor& g) {
            const auto& gv = g.values();
            if (w.attached()) {
                const auto& xv2 = x.values();
                std::vector<double> gw(static_cast<std::size_t>(dout) * din);
                for (int i = 0; i < dout; ++i)
                    for (int j = 0; j < din; ++j)
                        gw[static_cast<std::int64_t>(i) * din + j] = gv[i] * xv2[j];
                tp.accumulate(w.node, Tensor({dout, din}, std::move(gw)));
            }
            if (x.attached()) {
                const auto& wv2 = w.values();
                std::vector<double> gx(static_cast<std::size_t>(din), 0.0);
                for (int i = 0; i < dout; ++i)
                    for (int j = 0; j < din; ++j)
                        gx[j] += wv2[static_cast<std::int64_t>(i) * din + j] * gv[i];
                tp.accumulate(x.node, Tensor({din}, std::move(gx)));
            }
            if (b.attached()) tp.accumulate(b.node, g);
        });
}

/// Per-channel bias add on a CxHxW map.
inline Tensor bias_channels(const Tensor& t, const Tensor& b) {
    if (t.shape.size() != 3 || b.shape.size() != 1 || b.shape[0] != t.shape[0])
        throw DimensionError("bias_channels: bias " + shape_str(b.shape) +
                             " does not match channels of " + shape_str(t.shape));
    const int C = t.shape[0];
    const std::int64_t plane = static_cast<std::int64_t>(t.shape[1]) * t.shape[2];
    const auto& x = t.values();
    const auto& bv = b.values();
    std::vector<double> out(x.size());
    for (int c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < plane; ++i) out[c * plane + i] = x[c * plane + i] + bv[c];
    return detail::make_result("bias_channels", t.shape, std::move(out), {&t, &b},
                               [t, b, C, plane](Tape& tp, const Tensor& g) {
                                   const auto& gv = g.values();
                                   if (t.attached()) tp.accumulate(t.node, g);
                                   if (b.attached()) {
                                       std::vector<double> gb(static_cast<std::size_t>(C), 0.0);
                                       for (int c = 0; c < C; ++c)
                                           for (std::int64_t i = 0; i < plane; ++i)
                                               gb[c] += gv[c * plane + i];
                                       tp.accumulate(b.node, Tensor({C}, std::move(gb)));
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.values()) acc += v;
    return detail::make_result("sum", {1}, {acc}, {&t}, [t](Tape& tp, const Tensor& g) {
        tp.accumulate(t.node, Tensor::full(t.shape, g.scalar()));
    });
}

inline Tensor mean(const Tensor& t) {
    const double n = static_cast<double>(t.size());
    double acc = 0.0;
    for (double v : t.values()) acc += v;
    return detail::make_result("mean", {1}, {acc / n}, {&t}, [t, n](Tape& tp, const Tensor& g) {
        tp.accumulate(t.node, Tensor::full(t.shape, g.scalar() / n));
    });
}

/// Mean absolute difference; subgradient 0 where a == b.
inline Tensor l1_loss(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("l1_loss", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    const double n = static_cast<double>(av.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
    return detail::make_result(
        "l1_loss", {1}, {acc / n}, {&a, &b}, [a, b, n](Tape& tp, const Tensor& g) {
            const auto& av2 = a.values();
            const auto& bv2 = b.values();
            const double go = g.scalar() / n;
            std::vector<double> s(av2.size());
            for (std::size_t i = 0; i < av2.size(); ++i) {
                const double d = av2[i] - bv2[i];
                s[i] = d > 0.0 ? go : (d < 0.0 ? -go : 0.0);
            }
            if (a.attached()) tp.accumulate(a.node, Tensor(a.shape, s));
            if (b.attached()) {
                for (double& v : s) v = -v;
                tp.accumulate(b.node, Tensor(b.shape, std::move(s)));
            }
        });
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& t, Shape s) {
    if (numel(s) != t.size())
        throw DimensionError("reshape: cannot view " + shape_str(t.shape) + " as " + shape_str(s));
    return detail::make_result("reshape", std::move(s), std::vector<double>(t.values()), {&t},
                               [t](Tape& tp, const Tensor& g) {
                                   tp.accumulate(t.node,
                                                 Tensor(t.shape, std::vector<double>(g.values())));
                               });
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[1] != b.shape[1] ||
        a.shape[2] != b.shape[2])
        throw DimensionError("concat_channels: spatial dims of " + shape_str(a.shape) + " and " +
                             shape_str(b.shape) + " must agree");
    const int Ca = a.shape[0], Cb = b.shape[0];
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out;
    out.reserve(av.size() + bv.size());
    out.insert(out.end(), av.begin(), av.end());
    out.insert(out.end(), bv.begin(), bv.end());
    return detail::make_result(
        "concat_channels", {Ca + Cb, a.shape[1], a.shape[2]}, std::move(out), {&a, &b},
        [a, b](Tape& tp, const Tensor& g) {
            const auto& gv = g.values();
            const std::size_t na = a.values().size();
            if (a.attached())
                tp.accumulate(a.node,
                              Tensor(a.shape, std::vector<double>(gv.begin(), gv.begin() + na)));
            if (b.attached())
                tp.accumulate(b.node,
                              Tensor(b.shape, std::vector<double>(gv.begin() + na, gv.end())));
        });
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: empty list");
    const int d = rows[0].shape.size() == 1 ? rows[0].shape[0] : -1;
    if (d < 0) throw DimensionError("stack_rows: rows must be vectors");
    std::vector<double> out;
    out.reserve(rows.size() * static_cast<std::size_t>(d));
    Tape* tape = nullptr;
    for (const Tensor& r : rows) {
        if (r.shape != Shape{d})
            throw DimensionError("stack_rows: inconsistent row shape " + shape_str(r.shape));
        if (r.attached()) {
            if (tape && tape != r.tape) throw ContractError("stack_rows: rows on different tapes");
            tape = r.tape;
        }
        out.insert(out.end(), r.values().begin(), r.values().end());
    }
    const int m = static_cast<int>(rows.size());
    detail::check_finite("stack_rows", out);
    Tensor result({m, d}, std::move(out));
    if (tape) {
        std::vector<int> input_nodes;
        for (const Tensor& r : rows)
            if (r.attached()) input_nodes.push_back(r.node);
        result.tape = tape;
        result.node = tape->emplace("stack_rows", std::move(input_nodes), result.shape,
                                    [rows, d](Tape& tp, const Tensor& g) {
                                        const auto& gv = g.values();
                                        for (std::size_t p = 0; p < rows.size(); ++p) {
                                            if (!rows[p].attached()) continue;
                                            std::vector<double> slice(
                                                gv.begin() + static_cast<std::int64_t>(p) * d,
                                                gv.begin() + static_cast<std::int64_t>(p + 1) * d);
                                            tp.accumulate(rows[p].node,
                                                          Tensor({d}, std::move(slice)));
                                        }
                                    });
    }
    return result;
}

/// v / ||v||2, with a tiny floor on the norm.
inline Tensor l2_normalize(const Tensor& v) {
    if (v.shape.size() != 1) throw DimensionError("l2_normalize: expected a vector");
    const auto& x = v.values();
    double nsq = 0.0;
    for (double a : x) nsq += a * a;
    const double norm = std::max(std::sqrt(nsq), 1e-12);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / norm;
    Tensor y(v.shape, out);
    return detail::make_result(
        "l2_normalize", v.shape, std::move(out), {&v}, [v, y, norm](Tape& tp, const Tensor& g) {
            const auto& yv = y.values();
            const auto& gv = g.values();
            double dot = 0.0;
            for (std::size_t i = 0; i < gv.size(); ++i) dot += gv[i] * yv[i];
            std::vector<double> gx(gv.size());
            for (std::size_t i = 0; i < gv.size(); ++i) gx[i] = (gv[i] - dot * yv[i]) / norm;
            tp.accumulate(v.node, Tensor(v.shape, std::move(gx)));
        });
}

/// Row-wise division by (row sum + eps). Rows of the result are convex
/// weights whenever the input is nonnegative.
inline Tensor normalize_rows(const Tensor& t, double eps) {
    if (t.shape.size() != 2) throw DimensionError("normalize_rows: expected a matrix");
    const int r = t.shape[0], c = t.shape[1];
    const auto& x = t.values();
    std::vector<double> rowsum(static_cast<std::size_t>(r), eps);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) rowsum[i] += x[static_cast<std::int64_t>(i) * c + j];
    std::vector<double> out(x.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::int64_t>(i) * c + j] =
                x[static_cast<std::int64_t>(i) * c + j] / rowsum[i];
    Tensor y(t.shape, out);
    return detail::make_result(
        "normalize_rows", t.shape, std::move(out), {&t},
        [t, y, rowsum, r, c](Tape& tp, const Tensor& g) {
            const auto& gv = g.values();
            const auto& yv = y.values();
            std::vector<double> gx(gv.size());
            for (int i = 0; i < r; ++i) {
                double acc = 0.0;
                for (int j = 0; j < c; ++j)
                    acc += gv[static_cast<std::int64_t>(i) * c + j] *
                           yv[static_cast<std::int64_t>(i) * c + j];
                for (int j = 0; j < c; ++j)
                    gx[static_cast<std::int64_t>(i) * c + j] =
                        (gv[static_cast<std::int64_t>(i) * c + j] - acc) / rowsum[i];
            }
            tp.accumulate(t.node, Tensor(t.shape, std::move(gx)));
        });
}

// ---------------------------------------------------------------------------
// Backward entry points
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

/// Max relative error between analytic and central-difference gradients of a
/// scalar-valued function. NaN anywhere in f makes the result +inf.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps) {
    if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor loss = f(xt);
    if (numel(loss.shape) != 1) throw ContractError("grad_check: f must be scalar-valued");
    tape.backward(loss);
    const Tensor analytic = tape.grad_or_zero(xt);
    const auto& ag = analytic.values();

    auto eval = [&](const std::vector<double>& v) {
        Tape t2;
        Tensor vt = t2.leaf(Tensor(x.shape, v));
        return f(vt).scalar();
    };

    std::vector<double> probe = x.values();
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double keep = probe[i];
        probe[i] = keep + eps;
        const double fp = eval(probe);
        probe[i] = keep - eps;
        const double fm = eval(probe);
        probe[i] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        if (!std::isfinite(numeric) || !std::isfinite(ag[i]))
            return std::numeric_limits<double>::infinity();
        const double rel = std::abs(ag[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace dcnet
