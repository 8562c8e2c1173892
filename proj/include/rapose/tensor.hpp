#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "rapose/errors.hpp"

namespace rapose {

/// Shape of a dense rank-4 tensor in (batch, channels, height, width) order.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const noexcept {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape&) const = default;

    std::string str() const;
};

/// Real-number width. `high` exists for finite-difference gradient checks.
enum class Precision { standard, high };

template <typename Real>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
    return std::is_same_v<Real, double> ? Precision::high : Precision::standard;
}

/// Dense rank-4 real array stored row-major in (n, c, h, w) order.
template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real(0));
    Tensor(Shape shape, std::vector<Real> data);

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor scalar(Real v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Real> data() noexcept { return data_; }
    std::span<const Real> data() const noexcept { return data_; }
    Real* raw() noexcept { return data_.data(); }
    const Real* raw() const noexcept { return data_.data(); }

    std::size_t offset(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    Real& at(int n, int c, int h, int w) noexcept { return data_[offset(n, c, h, w)]; }
    Real at(int n, int c, int h, int w) const noexcept { return data_[offset(n, c, h, w)]; }

    Real& operator[](std::size_t i) noexcept { return data_[i]; }
    Real operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Same data, new shape with identical element count.
    Tensor reshaped(Shape shape) const;

    /// Copy of sample `i` as a (1, c, h, w) tensor.
    Tensor sample(int i) const;

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.begin(), data_.end());
        return Tensor<Other>(shape_, std::move(out));
    }

    bool all_finite() const noexcept;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_{};
    std::vector<Real> data_;
};

/// Throws DimensionError naming every axis on which `a` and `b` differ.
void require_same_shape(const char* op, const Shape& a, const Shape& b);

/// Stacks (1, c, h, w) or (c, h, w)-shaped samples into one batch tensor.
template <typename Real>
Tensor<Real> stack_batch(std::span<const Tensor<Real>> samples);

/// Mirror along the width axis.
template <typename Real>
Tensor<Real> hflip(const Tensor<Real>& x);

/// Reorder channels: out channel c takes input channel perm[c].
template <typename Real>
Tensor<Real> permute_channels(const Tensor<Real>& x, std::span<const int> perm);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rapose
