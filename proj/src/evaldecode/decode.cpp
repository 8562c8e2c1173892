#include "rapose/evaldecode.hpp"

namespace rapose {
namespace {

// Shift toward the larger neighbour; an absent neighbour reads as zero.
template <typename Real>
double quarter(bool has_lo, Real lo, bool has_hi, Real hi) {
    const Real l = has_lo ? lo : Real(0);
    const Real r = has_hi ? hi : Real(0);
    if (r > l) return 0.25;
    if (l > r) return -0.25;
    return 0.0;
}

template <typename Real>
Keypoint decode_impl(std::span<const Real> plane, int h, int w) {
    if (h < 3 || w < 3) throw ValueError("decode: heatmap must be at least 3x3");
    if (plane.size() != static_cast<std::size_t>(h) * w)
        throw DimensionError("decode", {"plane"}, "plane size does not match h*w");
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane.size(); ++i)
        if (plane[i] > plane[best]) best = i;
    const int p = static_cast<int>(best / w), q = static_cast<int>(best % w);
    auto at = [&](int y, int x) { return plane[static_cast<std::size_t>(y) * w + x]; };
    Keypoint k;
    k.x = q + quarter(q > 0, q > 0 ? at(p, q - 1) : Real(0), q + 1 < w, q + 1 < w ? at(p, q + 1) : Real(0));
    k.y = p + quarter(p > 0, p > 0 ? at(p - 1, q) : Real(0), p + 1 < h, p + 1 < h ? at(p + 1, q) : Real(0));
    k.score = at(p, q);
    return k;
}

}  // namespace

Keypoint decode(std::span<const float> plane, int h, int w) { return decode_impl(plane, h, w); }
Keypoint decode(std::span<const double> plane, int h, int w) { return decode_impl(plane, h, w); }

template <typename Real>
std::vector<std::vector<Keypoint>> decode_all(const Tensor<Real>& heatmaps) {
    const Shape s = heatmaps.shape();
    std::vector<std::vector<Keypoint>> out(static_cast<std::size_t>(s.n));
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            out[n].push_back(decode(heatmaps.data().subspan(heatmaps.offset(n, c, 0, 0), s.plane()), s.h, s.w));
    return out;
}

Keypoint to_input_coords(const Keypoint& k, int stride) {
    return Keypoint{heatmap_to_input(k.x, stride), heatmap_to_input(k.y, stride), k.score};
}

template <typename Real>
Tensor<Real> unflip(const Tensor<Real>& heatmaps, std::span<const std::pair<int, int>> flip_pairs) {
    const auto perm = flip_permutation(heatmaps.shape().c, flip_pairs);
    return permute_channels(hflip(heatmaps), perm);
}

template <typename Real>
Tensor<Real> flip_average(const HeatmapFn<Real>& forward, const Tensor<Real>& images,
                          std::span<const std::pair<int, int>> flip_pairs) {
    Tensor<Real> a = forward(images);
    const Tensor<Real> b = unflip(forward(hflip(images)), flip_pairs);
    require_same_shape("flip_average", a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] = (a[i] + b[i]) / Real(2);
    return a;
}

template <typename Real>
Tensor<Real> flip_average(const PoseNet<Real>& model, const Tensor<Real>& images,
                          std::span<const std::pair<int, int>> flip_pairs) {
    return flip_average<Real>(HeatmapFn<Real>([&](const Tensor<Real>& x) { return model.predict(x); }), images,
                              flip_pairs);
}

#define RAPOSE_INSTANTIATE(Real)                                                                                  \
    template std::vector<std::vector<Keypoint>> decode_all(const Tensor<Real>&);                                 \
    template Tensor<Real> unflip(const Tensor<Real>&, std::span<const std::pair<int, int>>);                     \
    template Tensor<Real> flip_average(const HeatmapFn<Real>&, const Tensor<Real>&,                              \
                                       std::span<const std::pair<int, int>>);                                    \
    template Tensor<Real> flip_average(const PoseNet<Real>&, const Tensor<Real>&, std::span<const std::pair<int, int>>);
RAPOSE_INSTANTIATE(float)
RAPOSE_INSTANTIATE(double)
#undef RAPOSE_INSTANTIATE

}  // namespace rapose
