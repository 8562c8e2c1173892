#include <algorithm>
#include <cmath>
#include <numbers>

#include "rapose/train.hpp"

namespace rapose {

std::vector<int> flip_permutation(int num_keypoints, std::span<const std::pair<int, int>> flip_pairs) {
    std::vector<int> perm(static_cast<std::size_t>(num_keypoints));
    for (int k = 0; k < num_keypoints; ++k) perm[k] = k;
    std::vector<bool> used(perm.size(), false);
    for (const auto& [a, b] : flip_pairs) {
        if (a < 0 || b < 0 || a >= num_keypoints || b >= num_keypoints)
            throw ValueError("flip pair (" + std::to_string(a) + "," + std::to_string(b) + ") out of range");
        if (a == b) throw ValueError("flip pair joins keypoint " + std::to_string(a) + " with itself");
        if (used[a] || used[b])
            throw ValueError("keypoint appears in more than one flip pair");
        used[a] = used[b] = true;
        perm[a] = b;
        perm[b] = a;
    }
    return perm;
}

SyntheticSample flip_sample(const SyntheticSample& s, std::span<const std::pair<int, int>> flip_pairs) {
    const int k_count = static_cast<int>(s.keypoints.size());
    const auto perm = flip_permutation(k_count, flip_pairs);
    const int w = s.image.shape().w;
    SyntheticSample out = s;
    out.image = hflip(s.image);
    for (int k = 0; k < k_count; ++k) {
        KeypointLabel kp = s.keypoints[perm[k]];
        kp.x = (w - 1) - kp.x;
        out.keypoints[k] = kp;
    }
    return out;
}

SyntheticSample affine_sample(const SyntheticSample& s, double scale, double degrees) {
    if (!(scale > 0)) throw ValueError("affine_sample: scale must be positive");
    const Shape sh = s.image.shape();
    const double cx = 0.5 * (sh.w - 1), cy = 0.5 * (sh.h - 1);
    const double th = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(th), sn = std::sin(th);

    SyntheticSample out = s;
    out.area = s.area * scale * scale;
    for (auto& kp : out.keypoints) {
        const double dx = kp.x - cx, dy = kp.y - cy;
        kp.x = cx + scale * (c * dx - sn * dy);
        kp.y = cy + scale * (sn * dx + c * dy);
        if (kp.x < 0 || kp.x > sh.w - 1 || kp.y < 0 || kp.y > sh.h - 1) kp.visible = false;
    }

    // Inverse map each output pixel back into the source image.
    Tensor<float> img(sh);
    auto src = [&](int ch, int y, int x) -> double {
        if (x < 0 || y < 0 || x >= sh.w || y >= sh.h) return 0.0;
        return s.image.at(0, ch, y, x);
    };
    for (int y = 0; y < sh.h; ++y)
        for (int x = 0; x < sh.w; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double px = cx + (c * dx + sn * dy) / scale;
            const double py = cy + (-sn * dx + c * dy) / scale;
            const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
            if (x0 < -1 || y0 < -1 || x0 >= sh.w || y0 >= sh.h) continue;
            const double fx = px - x0, fy = py - y0;
            for (int ch = 0; ch < sh.c; ++ch) {
                const double v = (1 - fy) * ((1 - fx) * src(ch, y0, x0) + fx * src(ch, y0, x0 + 1)) +
                                 fy * ((1 - fx) * src(ch, y0 + 1, x0) + fx * src(ch, y0 + 1, x0 + 1));
                img.at(0, ch, y, x) = static_cast<float>(v);
            }
        }
    out.image = std::move(img);
    return out;
}

SyntheticSample cutout_sample(const SyntheticSample& s, int holes, int size, std::mt19937_64& rng) {
    const Shape sh = s.image.shape();
    SyntheticSample out = s;
    if (size <= 0) return out;
    std::uniform_int_distribution<int> ry(0, sh.h - 1), rx(0, sh.w - 1);
    for (int i = 0; i < holes; ++i) {
        // Centre anywhere in the image; the square is clipped at the border.
        const int cy = ry(rng), cx = rx(rng);
        const int y0 = std::max(0, cy - size / 2), y1 = std::min(sh.h, cy - size / 2 + size);
        const int x0 = std::max(0, cx - size / 2), x1 = std::min(sh.w, cx - size / 2 + size);
        for (int ch = 0; ch < sh.c; ++ch)
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) out.image.at(0, ch, y, x) = 0.0f;
    }
    return out;
}

SyntheticSample augment(const SyntheticSample& s, const TrainConfig& cfg, std::mt19937_64& rng) {
    SyntheticSample out = s;
    if (cfg.flip && std::bernoulli_distribution(0.5)(rng)) out = flip_sample(out, cfg.flip_pairs);
    double scale = 1.0, degrees = 0.0;
    if (cfg.scale_jitter > 0)
        scale = std::uniform_real_distribution<double>(1 - cfg.scale_jitter, 1 + cfg.scale_jitter)(rng);
    if (cfg.rotation_max > 0)
        degrees = std::uniform_real_distribution<double>(-cfg.rotation_max, cfg.rotation_max)(rng);
    if (scale != 1.0 || degrees != 0.0) out = affine_sample(out, scale, degrees);
    if (cfg.cutout && cfg.cutout_holes > 0) {
        const int size = cfg.cutout_size > 0 ? cfg.cutout_size : std::max(1, s.image.shape().h / 8);
        out = cutout_sample(out, cfg.cutout_holes, size, rng);
    }
    return out;
}

}  // namespace rapose
