#include "rapose/tensor.hpp"

#include <cmath>

namespace rapose {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    std::vector<std::string> axes;
    if (a.n != b.n) axes.emplace_back("batch");
    if (a.c != b.c) axes.emplace_back("channels");
    if (a.h != b.h) axes.emplace_back("height");
    if (a.w != b.w) axes.emplace_back("width");
    if (!axes.empty()) throw DimensionError(op, std::move(axes), a.str() + " vs " + b.str());
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ValueError("negative tensor dimension " + shape.str());
    data_.assign(shape.numel(), fill);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ValueError("negative tensor dimension " + shape.str());
    if (data_.size() != shape.numel())
        throw ValueError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape.str());
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
    if (shape.numel() != numel())
        throw DimensionError("reshape", {"numel"}, shape_.str() + " -> " + shape.str());
    return Tensor(shape, data_);
}

template <typename Real>
Tensor<Real> Tensor<Real>::sample(int i) const {
    if (i < 0 || i >= shape_.n) throw ValueError("sample index out of range");
    const std::size_t per = numel() / static_cast<std::size_t>(shape_.n);
    std::vector<Real> out(data_.begin() + static_cast<std::ptrdiff_t>(per * i),
                          data_.begin() + static_cast<std::ptrdiff_t>(per * (i + 1)));
    return Tensor(Shape{1, shape_.c, shape_.h, shape_.w}, std::move(out));
}

template <typename Real>
bool Tensor<Real>::all_finite() const noexcept {
    for (Real v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename Real>
Tensor<Real> stack_batch(std::span<const Tensor<Real>> samples) {
    if (samples.empty()) throw ValueError("stack_batch: no samples");
    Shape s = samples.front().shape();
    const int n_per = s.n;
    for (const auto& t : samples) {
        Shape ts = t.shape();
        if (ts.c != s.c || ts.h != s.h || ts.w != s.w || ts.n != n_per)
            require_same_shape("stack_batch", s, ts);
    }
    Shape out{n_per * static_cast<int>(samples.size()), s.c, s.h, s.w};
    std::vector<Real> data;
    data.reserve(out.numel());
    for (const auto& t : samples) data.insert(data.end(), t.data().begin(), t.data().end());
    return Tensor<Real>(out, std::move(data));
}

template <typename Real>
Tensor<Real> hflip(const Tensor<Real>& x) {
    const Shape s = x.shape();
    Tensor<Real> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) out.at(n, c, y, xx) = x.at(n, c, y, s.w - 1 - xx);
    return out;
}

template <typename Real>
Tensor<Real> permute_channels(const Tensor<Real>& x, std::span<const int> perm) {
    const Shape s = x.shape();
    if (static_cast<int>(perm.size()) != s.c)
        throw DimensionError("permute_channels", {"channels"},
                             std::to_string(perm.size()) + " vs " + std::to_string(s.c));
    Tensor<Real> out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            if (perm[c] < 0 || perm[c] >= s.c) throw ValueError("permute_channels: index out of range");
            const Real* src = x.raw() + x.offset(n, perm[c], 0, 0);
            std::copy(src, src + plane, out.raw() + out.offset(n, c, 0, 0));
        }
    return out;
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);
template Tensor<float> hflip(const Tensor<float>&);
template Tensor<double> hflip(const Tensor<double>&);
template Tensor<float> permute_channels(const Tensor<float>&, std::span<const int>);
template Tensor<double> permute_channels(const Tensor<double>&, std::span<const int>);

}  // namespace rapose
