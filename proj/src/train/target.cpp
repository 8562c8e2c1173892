#include <cmath>
#include <numbers>

#include "rapose/train.hpp"

namespace rapose {

Tensor<float> render_target(std::span<const KeypointLabel> keypoints, int heatmap_h, int heatmap_w, double sigma) {
    if (!(sigma > 0)) throw ValueError("render_target: sigma must be positive");
    if (heatmap_h < 1 || heatmap_w < 1) throw ValueError("render_target: empty heatmap");
    const int k_count = static_cast<int>(keypoints.size());
    Tensor<float> out(Shape{1, k_count, heatmap_h, heatmap_w});
    const double inv = 1.0 / (2 * sigma * sigma);
    for (int k = 0; k < k_count; ++k) {
        const auto& kp = keypoints[static_cast<std::size_t>(k)];
        if (!kp.visible) continue;
        // Separable: exp(-(dx^2 + dy^2)/2s^2) = gx * gy.
        std::vector<double> gx(static_cast<std::size_t>(heatmap_w)), gy(static_cast<std::size_t>(heatmap_h));
        for (int x = 0; x < heatmap_w; ++x) gx[x] = std::exp(-(x - kp.x) * (x - kp.x) * inv);
        for (int y = 0; y < heatmap_h; ++y) gy[y] = std::exp(-(y - kp.y) * (y - kp.y) * inv);
        for (int y = 0; y < heatmap_h; ++y)
            for (int x = 0; x < heatmap_w; ++x) out.at(0, k, y, x) = static_cast<float>(gy[y] * gx[x]);
    }
    return out;
}

Tensor<float> render_sample_target(const SyntheticSample& sample, int heatmap_h, int heatmap_w, double sigma) {
    std::vector<KeypointLabel> mapped;
    mapped.reserve(sample.keypoints.size());
    for (const auto& kp : sample.keypoints)
        mapped.push_back(KeypointLabel{input_to_heatmap(kp.x), input_to_heatmap(kp.y), kp.visible});
    return render_target(mapped, heatmap_h, heatmap_w, sigma);
}

std::vector<std::string> TrainConfig::violations() const {
    std::vector<std::string> v;
    if (!(lr0 > 0)) v.push_back("lr0 must be > 0");
    if (sgdr_t0 < 1) v.push_back("sgdr_t0 must be >= 1 (got " + std::to_string(sgdr_t0) + ")");
    if (sgdr_tmul < 1) v.push_back("sgdr_tmul must be >= 1 (got " + std::to_string(sgdr_tmul) + ")");
    if (!(eta_min >= 0) || eta_min > lr0) v.push_back("eta_min must lie in [0, lr0]");
    if (batch_size < 1) v.push_back("batch_size must be >= 1 (got " + std::to_string(batch_size) + ")");
    if (epochs < 0) v.push_back("epochs must be >= 0 (got " + std::to_string(epochs) + ")");
    if (!(sigma > 0)) v.push_back("sigma must be > 0");
    if (cutout_holes < 0) v.push_back("cutout_holes must be >= 0");
    if (cutout_size < 0) v.push_back("cutout_size must be >= 0 (0 selects H/8)");
    if (!(scale_jitter >= 0 && scale_jitter < 1)) v.push_back("scale_jitter must lie in [0, 1)");
    if (!(rotation_max >= 0 && rotation_max <= 180)) v.push_back("rotation_max must lie in [0, 180] degrees");
    return v;
}

void TrainConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
}

std::pair<double, double> sgdr_cycle(double epoch, const TrainConfig& cfg) {
    if (!(epoch >= 0)) throw ValueError("sgdr: epoch must be >= 0");
    const double t0 = cfg.sgdr_t0;
    if (cfg.sgdr_tmul == 1) {
        const double start = std::floor(epoch / t0) * t0;
        return {start, t0};
    }
    double start = 0, len = t0;
    while (epoch >= start + len) {
        start += len;
        len *= cfg.sgdr_tmul;
    }
    return {start, len};
}

double sgdr_lr(double epoch, const TrainConfig& cfg) {
    const auto [start, len] = sgdr_cycle(epoch, cfg);
    const double t = epoch - start;
    return cfg.eta_min + 0.5 * (cfg.lr0 - cfg.eta_min) * (1 + std::cos(std::numbers::pi * t / len));
}

}  // namespace rapose
