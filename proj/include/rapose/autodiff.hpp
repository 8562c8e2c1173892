#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rapose/tensor.hpp"

namespace rapose {

enum class OpKind {
    conv2d,
    deconv2d,
    bilinear_resize,
    global_avg_pool,
    softmax,
    add,
    mul,
    concat_channels,
    relu,
    scale_by_scalar,
    scale,
    batch_mean,
    pick,
    sum,
    mse_loss,
};

std::string_view op_name(OpKind kind);

template <typename Real>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Real>
struct Var {
    Tape<Real>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<Real>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Values are immutable once recorded; backward visits
/// nodes in exact reverse creation order and sums gradients of reused values.
///
/// Values added with `reference` are borrowed and must outlive the tape.
template <typename Real>
class Tape {
public:
    using BackwardFn = std::function<void(const Tensor<Real>& grad_out)>;

    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        std::size_t output;
        BackwardFn backward;
        std::int64_t flops = 0;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Real> constant(Tensor<Real> value) { return add_owned(std::move(value), false); }
    Var<Real> variable(Tensor<Real> value) { return add_owned(std::move(value), true); }
    Var<Real> reference(const Tensor<Real>& value, bool requires_grad);

    const Tensor<Real>& value(Var<Real> v) const { return *values_.at(v.id); }
    bool requires_grad(Var<Real> v) const { return requires_grad_.at(v.id); }
    bool requires_grad(std::size_t id) const { return requires_grad_.at(id); }

    /// Accumulated gradient; a zero tensor when nothing flowed into `v`.
    Tensor<Real> grad(Var<Real> v) const;
    bool has_grad(Var<Real> v) const { return !grads_.at(v.id).empty(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
    void backward(Var<Real> loss);

    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    /// Node indices in the order the last backward pass visited them.
    const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

    std::size_t size() const noexcept { return values_.size(); }

    // Used by operator implementations.
    Var<Real> record(OpKind kind, std::vector<std::size_t> inputs, Tensor<Real> out, BackwardFn fn,
                     std::int64_t flops = 0);
    /// Gradient buffer for value `id`, allocated as zeros on first use.
    Tensor<Real>& grad_slot(std::size_t id);

private:
    Var<Real> add_owned(Tensor<Real> value, bool requires_grad);

    std::deque<Tensor<Real>> owned_;
    std::vector<const Tensor<Real>*> values_;
    std::vector<bool> requires_grad_;
    std::vector<Tensor<Real>> grads_;
    std::vector<Node> nodes_;
    std::vector<std::size_t> trace_;
};

// ---------------------------------------------------------------------------
// Operators. Each records a node with its reverse-mode rule.

/// Cross-correlation. weight is (c_out, c_in, kh, kw); bias has c_out elements.
template <typename Real>
Var<Real> conv2d(Var<Real> x, Var<Real> weight, std::optional<Var<Real>> bias, int stride, int pad);

/// Transposed convolution. weight is (c_in, c_out, kh, kw); output spatial
/// size is (h - 1) * stride - 2 * pad + kh.
template <typename Real>
Var<Real> deconv2d(Var<Real> x, Var<Real> weight, std::optional<Var<Real>> bias, int stride,
                   int pad);

/// Bilinear interpolation, half-pixel centers (align_corners = false).
template <typename Real>
Var<Real> bilinear_resize(Var<Real> x, int out_h, int out_w);

template <typename Real>
Var<Real> global_avg_pool(Var<Real> x);

/// Softmax over every element of `x`, treated as one vector.
template <typename Real>
Var<Real> softmax_vec(Var<Real> x);

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);

/// Channel stacking; the first argument's channels come first.
template <typename Real>
Var<Real> concat_channels(std::span<const Var<Real>> parts);

template <typename Real>
Var<Real> concat_channels(Var<Real> a, Var<Real> b) {
    const Var<Real> parts[] = {a, b};
    return concat_channels<Real>(std::span<const Var<Real>>(parts));
}

template <typename Real>
Var<Real> relu(Var<Real> x);

/// x * s where s is a single-element value on the tape.
template <typename Real>
Var<Real> scale_by_scalar(Var<Real> x, Var<Real> s);

template <typename Real>
Var<Real> scale(Var<Real> x, Real s);

/// Mean over the batch axis: (n, c, h, w) -> (1, c, h, w).
template <typename Real>
Var<Real> batch_mean(Var<Real> x);

/// Element `index` (flat) as a (1, 1, 1, 1) value.
template <typename Real>
Var<Real> pick(Var<Real> x, std::size_t index);

template <typename Real>
Var<Real> sum(Var<Real> x);

/// Mean of squared differences over all elements.
template <typename Real>
Var<Real> mse_loss(Var<Real> pred, Var<Real> target);

/// Numerically stable softmax of a plain vector.
template <typename Real>
std::vector<Real> softmax(std::span<const Real> e);

/// Output extent of a convolution along one axis.
constexpr int conv_out_size(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

constexpr int deconv_out_size(int in, int kernel, int stride, int pad) {
    return (in - 1) * stride - 2 * pad + kernel;
}

}  // namespace rapose
