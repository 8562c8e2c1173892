#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rapose/autodiff.hpp"

namespace rapose {

struct ParamId {
    std::size_t index = 0;
    bool operator==(const ParamId&) const = default;
};

/// Ordered, named collection of learnable tensors.
template <typename Real>
class ParameterSet {
public:
    ParamId add(std::string name, Tensor<Real> init) {
        if (by_name_.count(name)) throw ValueError("duplicate parameter name '" + name + "'");
        by_name_.emplace(name, tensors_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(init));
        return ParamId{tensors_.size() - 1};
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    const Tensor<Real>& operator[](ParamId id) const { return tensors_.at(id.index); }
    Tensor<Real>& operator[](ParamId id) { return tensors_.at(id.index); }
    const Tensor<Real>& at(std::size_t i) const { return tensors_.at(i); }
    Tensor<Real>& at(std::size_t i) { return tensors_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    std::optional<ParamId> find(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) return std::nullopt;
        return ParamId{it->second};
    }

    /// Total number of scalar parameters.
    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    template <typename Other>
    ParameterSet<Other> cast() const {
        ParameterSet<Other> out;
        for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].template cast<Other>());
        return out;
    }

    bool operator==(const ParameterSet& other) const {
        return names_ == other.names_ && tensors_ == other.tensors_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<Real>> tensors_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

/// Parameters of one ParameterSet recorded on a tape for a single pass.
template <typename Real>
struct Binding {
    Tape<Real>* tape = nullptr;
    std::vector<Var<Real>> vars;

    Var<Real> operator[](ParamId id) const { return vars.at(id.index); }
};

/// Records every parameter by reference; `params` must outlive `tape`.
template <typename Real>
Binding<Real> bind(Tape<Real>& tape, const ParameterSet<Real>& params, bool requires_grad = true) {
    Binding<Real> b{&tape, {}};
    b.vars.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) b.vars.push_back(tape.reference(params.at(i), requires_grad));
    return b;
}

/// Deterministic parameter initializer (Kaiming-uniform, fan-in mode).
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    template <typename Real>
    Tensor<Real> kaiming_uniform(Shape shape, double fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<Real> t(shape);
        for (auto& v : t.data()) v = static_cast<Real>(dist(rng_));
        return t;
    }

    std::mt19937_64& rng() noexcept { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// A convolution (or transposed convolution) whose tensors live in a ParameterSet.
struct ConvLayer {
    ParamId weight;
    std::optional<ParamId> bias;
    int stride = 1;
    int pad = 0;
    bool transposed = false;
};

template <typename Real>
ConvLayer make_conv(ParameterSet<Real>& params, Initializer& init, const std::string& name, int c_in,
                    int c_out, int kernel, int stride, int pad, bool with_bias = true) {
    ConvLayer l;
    l.weight = params.add(name + ".weight",
                          init.kaiming_uniform<Real>(Shape{c_out, c_in, kernel, kernel},
                                                     static_cast<double>(c_in) * kernel * kernel));
    if (with_bias) l.bias = params.add(name + ".bias", Tensor<Real>(Shape{1, c_out, 1, 1}));
    l.stride = stride;
    l.pad = pad;
    return l;
}

template <typename Real>
ConvLayer make_deconv(ParameterSet<Real>& params, Initializer& init, const std::string& name, int c_in,
                      int c_out, int kernel, int stride, int pad, bool with_bias = true) {
    ConvLayer l;
    // Each output pixel receives c_in * (kernel / stride)^2 taps.
    const double fan_in = static_cast<double>(c_in) * kernel * kernel / (static_cast<double>(stride) * stride);
    l.weight = params.add(name + ".weight", init.kaiming_uniform<Real>(Shape{c_in, c_out, kernel, kernel}, fan_in));
    if (with_bias) l.bias = params.add(name + ".bias", Tensor<Real>(Shape{1, c_out, 1, 1}));
    l.stride = stride;
    l.pad = pad;
    l.transposed = true;
    return l;
}

template <typename Real>
Var<Real> apply(const Binding<Real>& b, const ConvLayer& l, Var<Real> x) {
    std::optional<Var<Real>> bias;
    if (l.bias) bias = b[*l.bias];
    return l.transposed ? deconv2d(x, b[l.weight], bias, l.stride, l.pad)
                        : conv2d(x, b[l.weight], bias, l.stride, l.pad);
}

}  // namespace rapose
