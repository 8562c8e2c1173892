#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "rapose/train.hpp"

namespace rapose {
namespace {

// COCO per-joint sigmas (x2) for the body part each synthetic joint mimics.
constexpr JointInfo kJoints[kMaxSyntheticJoints] = {
    {"left_shoulder", 0.158, 1}, {"right_shoulder", 0.158, 0}, {"left_hip", 0.214, 3},
    {"right_hip", 0.214, 2},     {"left_wrist", 0.124, 5},     {"right_wrist", 0.124, 4},
    {"left_elbow", 0.144, 7},    {"right_elbow", 0.144, 6},    {"left_knee", 0.174, 9},
    {"right_knee", 0.174, 8},    {"left_ankle", 0.178, 11},    {"right_ankle", 0.178, 10},
    {"nose", 0.052, 12},         {"left_eye", 0.050, 14},      {"right_eye", 0.050, 13},
    {"left_ear", 0.070, 16},     {"right_ear", 0.070, 15},
};

enum J { LS, RS, LH, RH, LW, RW, LE, RE, LK, RK, LA, RA, NOSE, LEYE, REYE, LEAR, REAR };

constexpr std::array<std::pair<int, int>, 12> kLimbs = {{
    {LS, RS}, {LH, RH}, {LS, LH}, {RS, RH}, {LS, LE}, {LE, LW}, {RS, RE},
    {RE, RW}, {LH, LK}, {LK, LA}, {RH, RK}, {RK, RA},
}};

struct Pt {
    double x, y;
};

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::array<float, 3> hsv(double h, double s, double v) {
    h = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(h);
    const double f = h - i;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r = v, g = t, b = p;
    switch (i % 6) {
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        case 5: r = v; g = p; b = q; break;
        default: break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

double segment_distance(Pt p, Pt a, Pt b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
    return std::sqrt(ex * ex + ey * ey);
}

void blend(Tensor<float>& img, int y, int x, const std::array<float, 3>& rgb, double alpha) {
    if (alpha <= 0) return;
    alpha = std::min(alpha, 1.0);
    for (int c = 0; c < 3; ++c) {
        float& v = img.at(0, c, y, x);
        v = static_cast<float>(v * (1 - alpha) + rgb[c] * alpha);
    }
}

Pt polar(Pt origin, double length, double angle_from_down) {
    return {origin.x + length * std::sin(angle_from_down), origin.y + length * std::cos(angle_from_down)};
}

}  // namespace

std::span<const JointInfo> synthetic_joints() { return kJoints; }

std::vector<std::pair<int, int>> synthetic_flip_pairs(int num_keypoints) {
    if (num_keypoints < 1 || num_keypoints > kMaxSyntheticJoints)
        throw ValueError("synthetic skeleton supports 1.." + std::to_string(kMaxSyntheticJoints) + " keypoints");
    std::vector<std::pair<int, int>> pairs;
    for (int k = 0; k < num_keypoints; ++k) {
        const int m = kJoints[k].mirror;
        if (m > k && m < num_keypoints) pairs.emplace_back(k, m);
    }
    return pairs;
}

std::vector<double> synthetic_oks_constants(int num_keypoints) {
    if (num_keypoints < 1 || num_keypoints > kMaxSyntheticJoints)
        throw ValueError("synthetic skeleton supports 1.." + std::to_string(kMaxSyntheticJoints) + " keypoints");
    std::vector<double> k;
    for (int i = 0; i < num_keypoints; ++i) k.push_back(kJoints[i].oks_constant);
    return k;
}

SyntheticSample render_synthetic(int height, int width, int num_keypoints, std::uint64_t seed) {
    if (height < 8 || width < 8) throw ValueError("render_synthetic: image must be at least 8x8");
    if (num_keypoints < 1 || num_keypoints > kMaxSyntheticJoints)
        throw ValueError("synthetic skeleton supports 1.." + std::to_string(kMaxSyntheticJoints) + " keypoints");
    std::mt19937_64 rng(splitmix(seed));
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    constexpr double deg = std::numbers::pi / 180.0;

    // Pose in a unit-height frame, y down, hips centred at the origin.
    std::array<Pt, kMaxSyntheticJoints> j{};
    const double shoulder_w = uni(0.11, 0.15), hip_w = uni(0.07, 0.10);
    const double torso = uni(0.32, 0.38);
    j[LH] = {hip_w, 0};
    j[RH] = {-hip_w, 0};
    j[LS] = {shoulder_w, -torso};
    j[RS] = {-shoulder_w, -torso};
    for (int side = 0; side < 2; ++side) {
        const double dir = side == 0 ? 1.0 : -1.0;
        const int s = side == 0 ? LS : RS, e = side == 0 ? LE : RE, w = side == 0 ? LW : RW;
        const int h = side == 0 ? LH : RH, k = side == 0 ? LK : RK, a = side == 0 ? LA : RA;
        const double upper = uni(-20, 150) * deg, bend = uni(-80, 80) * deg;
        j[e] = polar(j[s], uni(0.15, 0.19), dir * upper);
        j[w] = polar(j[e], uni(0.14, 0.18), dir * (upper + bend));
        const double thigh = uni(-10, 45) * deg, knee = uni(-45, 10) * deg;
        j[k] = polar(j[h], uni(0.20, 0.24), dir * thigh);
        j[a] = polar(j[k], uni(0.20, 0.24), dir * (thigh + knee));
    }
    const double head_r = uni(0.06, 0.075);
    const Pt neck{0, -torso - 0.03};
    const double turn = uni(-0.4, 0.4);
    const Pt head{neck.x + uni(-0.02, 0.02), neck.y - head_r - 0.04};
    j[NOSE] = {head.x + turn * head_r * 0.5, head.y + head_r * 0.25};
    j[LEYE] = {head.x + head_r * 0.45 + turn * head_r * 0.3, head.y - head_r * 0.15};
    j[REYE] = {head.x - head_r * 0.45 + turn * head_r * 0.3, head.y - head_r * 0.15};
    j[LEAR] = {head.x + head_r * 0.95, head.y};
    j[REAR] = {head.x - head_r * 0.95, head.y};

    // Lean the whole figure about the hips.
    const double lean = uni(-15, 15) * deg;
    const double cl = std::cos(lean), sl = std::sin(lean);
    auto lean_pt = [&](Pt p) { return Pt{cl * p.x - sl * p.y, sl * p.x + cl * p.y}; };
    for (auto& p : j) p = lean_pt(p);
    const Pt head_c = lean_pt(head);
    const Pt neck_c = lean_pt(neck);

    // Fit into the image with a margin and random placement.
    const double limb_half = 0.03;
    double x0 = head_c.x - head_r, x1 = head_c.x + head_r, y0 = head_c.y - head_r, y1 = head_c.y + head_r;
    for (const auto& p : j) {
        x0 = std::min(x0, p.x - limb_half);
        x1 = std::max(x1, p.x + limb_half);
        y0 = std::min(y0, p.y - limb_half);
        y1 = std::max(y1, p.y + limb_half);
    }
    const double margin = 1.0;
    const double avail_h = height - 1 - 2 * margin, avail_w = width - 1 - 2 * margin;
    double scale = height * uni(0.72, 0.88) / (y1 - y0);
    scale = std::min({scale, avail_h / (y1 - y0), avail_w / (x1 - x0)});
    const double span_w = (x1 - x0) * scale, span_h = (y1 - y0) * scale;
    const double ox = margin + uni(0, std::max(0.0, avail_w - span_w)) - x0 * scale;
    const double oy = margin + uni(0, std::max(0.0, avail_h - span_h)) - y0 * scale;
    auto to_px = [&](Pt p) { return Pt{p.x * scale + ox, p.y * scale + oy}; };

    SyntheticSample out;
    out.seed = seed;
    out.area = span_w * span_h;
    std::array<Pt, kMaxSyntheticJoints> px{};
    for (int k = 0; k < kMaxSyntheticJoints; ++k) px[k] = to_px(j[k]);
    for (int k = 0; k < num_keypoints; ++k) {
        const bool inside = px[k].x >= 0 && px[k].x <= width - 1 && px[k].y >= 0 && px[k].y <= height - 1;
        out.keypoints.push_back(KeypointLabel{px[k].x, px[k].y, inside});
    }

    // Textured background.
    Tensor<float> img(Shape{1, 3, height, width});
    std::array<double, 3> base{uni(0.15, 0.55), uni(0.15, 0.55), uni(0.15, 0.55)};
    const double fx = uni(0.1, 0.6), fy = uni(0.1, 0.6), phase = uni(0, 2 * std::numbers::pi);
    const double fx2 = uni(0.5, 1.4), fy2 = uni(0.5, 1.4);
    std::uniform_real_distribution<double> noise(-0.04, 0.04);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double wave = 0.12 * std::sin(fx * x + fy * y + phase) + 0.05 * std::sin(fx2 * x - fy2 * y);
            for (int c = 0; c < 3; ++c)
                img.at(0, c, y, x) = static_cast<float>(std::clamp(base[c] + wave * (c + 1) / 2.0 + noise(rng), 0.0, 1.0));
        }

    const double limb_r = std::max(1.0, limb_half * scale);
    const double joint_r = std::max(1.4, 0.045 * scale);
    const double head_px = head_r * scale;
    const auto body = hsv(uni(0, 1), 0.1, uni(0.8, 0.95));
    const Pt head_px_c = to_px(head_c), neck_px = to_px(neck_c);
    const Pt shoulder_mid{(px[LS].x + px[RS].x) / 2, (px[LS].y + px[RS].y) / 2};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Pt p{static_cast<double>(x), static_cast<double>(y)};
            double d = segment_distance(p, neck_px, shoulder_mid);
            for (const auto& [a, b] : kLimbs) d = std::min(d, segment_distance(p, px[a], px[b]));
            blend(img, y, x, body, limb_r + 0.5 - d);
            const double dh = std::hypot(p.x - head_px_c.x, p.y - head_px_c.y);
            blend(img, y, x, body, head_px + 0.5 - dh);
        }
    // Joint markers; every catalogue joint gets its own hue.
    for (int k = 0; k < kMaxSyntheticJoints; ++k) {
        const auto rgb = hsv(k * 0.618033988749895, 0.95, 1.0);
        const double r = k >= NOSE ? std::max(1.0, joint_r * 0.6) : joint_r;
        const int xa = std::max(0, static_cast<int>(px[k].x - r - 1)), xb = std::min(width - 1, static_cast<int>(px[k].x + r + 1));
        const int ya = std::max(0, static_cast<int>(px[k].y - r - 1)), yb = std::min(height - 1, static_cast<int>(px[k].y + r + 1));
        for (int y = ya; y <= yb; ++y)
            for (int x = xa; x <= xb; ++x) blend(img, y, x, rgb, r + 0.5 - std::hypot(x - px[k].x, y - px[k].y));
    }
    out.image = std::move(img);
    return out;
}

std::vector<SyntheticSample> make_synthetic_dataset(int count, int height, int width, int num_keypoints,
                                                    std::uint64_t seed) {
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i)
        out.push_back(render_synthetic(height, width, num_keypoints, splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i)))));
    return out;
}

}  // namespace rapose
