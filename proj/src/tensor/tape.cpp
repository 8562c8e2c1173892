#include "rapose/autodiff.hpp"

namespace rapose {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::conv2d: return "conv2d";
        case OpKind::deconv2d: return "deconv2d";
        case OpKind::bilinear_resize: return "bilinear_resize";
        case OpKind::global_avg_pool: return "global_avg_pool";
        case OpKind::softmax: return "softmax";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::concat_channels: return "concat_channels";
        case OpKind::relu: return "relu";
        case OpKind::scale_by_scalar: return "scale_by_scalar";
        case OpKind::scale: return "scale";
        case OpKind::batch_mean: return "batch_mean";
        case OpKind::pick: return "pick";
        case OpKind::sum: return "sum";
        case OpKind::mse_loss: return "mse_loss";
    }
    return "unknown";
}

template <typename Real>
Var<Real> Tape<Real>::add_owned(Tensor<Real> value, bool requires_grad) {
    owned_.push_back(std::move(value));
    values_.push_back(&owned_.back());
    requires_grad_.push_back(requires_grad);
    grads_.emplace_back();
    return Var<Real>{this, values_.size() - 1};
}

template <typename Real>
Var<Real> Tape<Real>::reference(const Tensor<Real>& value, bool requires_grad) {
    values_.push_back(&value);
    requires_grad_.push_back(requires_grad);
    grads_.emplace_back();
    return Var<Real>{this, values_.size() - 1};
}

template <typename Real>
Tensor<Real> Tape<Real>::grad(Var<Real> v) const {
    const auto& g = grads_.at(v.id);
    if (g.empty() && values_.at(v.id)->numel() != 0) return Tensor<Real>(values_[v.id]->shape());
    return g;
}

template <typename Real>
Tensor<Real>& Tape<Real>::grad_slot(std::size_t id) {
    auto& g = grads_.at(id);
    if (g.empty()) g = Tensor<Real>(values_.at(id)->shape());
    return g;
}

template <typename Real>
Var<Real> Tape<Real>::record(OpKind kind, std::vector<std::size_t> inputs, Tensor<Real> out,
                             BackwardFn fn, std::int64_t flops) {
    bool needs = false;
    for (auto id : inputs) needs = needs || requires_grad_.at(id);
    Var<Real> v = add_owned(std::move(out), needs);
    nodes_.push_back(Node{kind, std::move(inputs), v.id, needs ? std::move(fn) : BackwardFn{}, flops});
    return v;
}

template <typename Real>
void Tape<Real>::backward(Var<Real> loss) {
    if (loss.tape != this) throw ValueError("backward: value belongs to a different tape");
    if (value(loss).numel() != 1)
        throw DimensionError("backward", {"numel"},
                             "loss must be a scalar, got shape " + value(loss).shape().str());
    trace_.clear();
    if (!requires_grad_[loss.id]) return;
    grad_slot(loss.id)[0] += Real(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.backward || grads_[node.output].empty()) continue;
        trace_.push_back(i);
        node.backward(grads_[node.output]);
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace rapose
