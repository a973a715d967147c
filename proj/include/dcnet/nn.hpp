#pragma once

// Trainable parameters and the two layer shapes the subnetworks are built
// from. A Param owns its value plus optimizer slots; attach() hands the same
// tape leaf back for repeated use within one forward pass.

#include <cstdint>
#include <string>
#include <vector>

#include "dcnet/tensor.hpp"

namespace dcnet {

enum class Constraint { none, nonnegative };

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    std::vector<double> m1, m2;  // Adam moments, zero-initialized
    Constraint constraint = Constraint::none;

    Param() = default;
    Param(std::string n, Tensor v, Constraint c = Constraint::none)
        : name(std::move(n)), value(v.detached()), grad(Tensor::zeros(v.shape)),
          m1(static_cast<std::size_t>(v.size()), 0.0), m2(static_cast<std::size_t>(v.size()), 0.0),
          constraint(c) {}

    /// Tape leaf for this parameter; one leaf per tape no matter how often
    /// the param is used in the pass.
    Tensor attach(Tape& tape) const {
        if (cache_tape_id_ != tape.id()) {
            cache_ = tape.leaf(value);
            cache_tape_id_ = tape.id();
        }
        return cache_;
    }

    void pull_grad(const Tape& tape) {
        grad = tape.grad_or_zero(cache_valid_for(tape) ? cache_ : value.detached());
    }

    /// Clip at the constraint boundary. Idempotent.
    void project() {
        if (constraint != Constraint::nonnegative) return;
        bool dirty = false;
        for (double v : value.values())
            if (v < 0.0) {
                dirty = true;
                break;
            }
        if (!dirty) return;
        std::vector<double> clipped = value.values();
        for (double& v : clipped)
            if (v < 0.0) v = 0.0;
        value = Tensor(value.shape, std::move(clipped));
    }

private:
    bool cache_valid_for(const Tape& tape) const { return cache_tape_id_ == tape.id(); }

    mutable Tensor cache_;
    mutable std::uint64_t cache_tape_id_ = 0;
};

inline Tensor kaiming_tensor(Shape shape, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(v));
}

/// 3x3/1x1 convolution layer with optional bias and relu.
struct Conv2d {
    Param w;  // [out x in x k x k]
    Param b;  // [out]
    int stride = 1;
    int pad = 0;
    bool has_bias = true;

    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int k, Rng& rng, int stride_ = 1,
           bool bias = true, Constraint c = Constraint::none)
        : w(name + ".w", kaiming_tensor({out_ch, in_ch, k, k}, in_ch * k * k, rng), c),
          b(name + ".b", Tensor::zeros({out_ch})), stride(stride_), pad(k / 2), has_bias(bias) {}

    /// frozen = use current values as constants (no gradient flows into w/b).
    Tensor forward(Tape& tape, const Tensor& x, bool frozen = false) const {
        Tensor wt = frozen ? w.value : w.attach(tape);
        Tensor y = conv2d(x, wt, stride, pad);
        if (has_bias) y = bias_channels(y, frozen ? b.value : b.attach(tape));
        return y;
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        if (has_bias) out.push_back(&b);
    }
};

struct Dense {
    Param w;  // [out x in]
    Param b;  // [out]

    Dense() = default;
    Dense(std::string name, int in_dim, int out_dim, Rng& rng)
        : w(name + ".w", kaiming_tensor({out_dim, in_dim}, in_dim, rng)),
          b(name + ".b", Tensor::zeros({out_dim})) {}

    Tensor forward(Tape& tape, const Tensor& x, bool frozen = false) const {
        return fully_connected(x, frozen ? w.value : w.attach(tape),
                               frozen ? b.value : b.attach(tape));
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

}  // namespace dcnet
