#pragma once

// Loop-level reference implementations used as test oracles. They share no
// code with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <optional>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "rapose/tensor.hpp"

namespace oracle {

using rapose::Shape;
using T = rapose::Tensor<double>;

inline T random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    T t(s);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

inline T conv(const T& x, const T& w, const T* bias, int stride, int pad) {
    const Shape xs = x.shape(), ws = w.shape();
    const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    T y(Shape{xs.n, ws.n, oh, ow});
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ws.n; ++co)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = bias ? (*bias)[co] : 0.0;
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int a = 0; a < ws.h; ++a)
                            for (int b = 0; b < ws.w; ++b) {
                                const int yy = i * stride - pad + a, xx = j * stride - pad + b;
                                if (yy < 0 || yy >= xs.h || xx < 0 || xx >= xs.w) continue;
                                acc += x.at(n, ci, yy, xx) * w.at(co, ci, a, b);
                            }
                    y.at(n, co, i, j) = acc;
                }
    return y;
}

// Scatter form: every input pixel stamps the kernel onto the output.
inline T deconv(const T& x, const T& w, const T* bias, int stride, int pad) {
    const Shape xs = x.shape(), ws = w.shape();
    const int oh = (xs.h - 1) * stride - 2 * pad + ws.h;
    const int ow = (xs.w - 1) * stride - 2 * pad + ws.w;
    T y(Shape{xs.n, ws.c, oh, ow});
    for (int n = 0; n < xs.n; ++n)
        for (int ci = 0; ci < xs.c; ++ci)
            for (int i = 0; i < xs.h; ++i)
                for (int j = 0; j < xs.w; ++j)
                    for (int co = 0; co < ws.c; ++co)
                        for (int a = 0; a < ws.h; ++a)
                            for (int b = 0; b < ws.w; ++b) {
                                const int yy = i * stride - pad + a, xx = j * stride - pad + b;
                                if (yy < 0 || yy >= oh || xx < 0 || xx >= ow) continue;
                                y.at(n, co, yy, xx) += x.at(n, ci, i, j) * w.at(ci, co, a, b);
                            }
    if (bias)
        for (int n = 0; n < xs.n; ++n)
            for (int co = 0; co < ws.c; ++co)
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) y.at(n, co, i, j) += (*bias)[co];
    return y;
}

// Half-pixel centres, edge clamped.
inline T bilinear(const T& x, int oh, int ow) {
    const Shape s = x.shape();
    T y(Shape{s.n, s.c, oh, ow});
    auto coord = [](int o, int in, int out, int& i0, int& i1, double& f) {
        double src = (o + 0.5) * in / out - 0.5;
        if (src < 0) src = 0;
        i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
        i1 = std::min(i0 + 1, in - 1);
        f = src - i0;
    };
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    int y0, y1, x0, x1;
                    double fy, fx;
                    coord(i, s.h, oh, y0, y1, fy);
                    coord(j, s.w, ow, x0, x1, fx);
                    y.at(n, c, i, j) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                                       fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
                }
    return y;
}

inline T gap(const T& x) {
    const Shape s = x.shape();
    T y(Shape{s.n, s.c, 1, 1});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            double acc = 0;
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j) acc += x.at(n, c, i, j);
            y.at(n, c, 0, 0) = acc / (s.h * s.w);
        }
    return y;
}

inline T add(const T& a, const T& b) {
    T y = a;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b[i];
    return y;
}

inline T scaled(const T& a, double s) {
    T y = a;
    for (auto& v : y.data()) v *= s;
    return y;
}

inline T relu(const T& a) {
    T y = a;
    for (auto& v : y.data()) v = std::max(v, 0.0);
    return y;
}

inline T concat(const T& a, const T& b) {
    const Shape sa = a.shape(), sb = b.shape();
    T y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int n = 0; n < sa.n; ++n)
        for (int c = 0; c < sa.c + sb.c; ++c)
            for (int i = 0; i < sa.h; ++i)
                for (int j = 0; j < sa.w; ++j)
                    y.at(n, c, i, j) = c < sa.c ? a.at(n, c, i, j) : b.at(n, c - sa.c, i, j);
    return y;
}

// Closed-form softmax without max-shifting.
inline std::vector<double> softmax(const std::vector<double>& e) {
    double z = 0;
    for (double v : e) z += std::exp(v);
    std::vector<double> out;
    for (double v : e) out.push_back(std::exp(v) / z);
    return out;
}

inline double max_abs_diff(const T& a, const T& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Per-axis rule written out independently of the library.
inline double decode_offset(int idx, int len, double lo, double hi) {
    const double l = idx > 0 ? lo : 0.0;
    const double r = idx + 1 < len ? hi : 0.0;
    return r > l ? 0.25 : (l > r ? -0.25 : 0.0);
}

// Brute-force PR evaluation: rank, greedily match, then for every recall
// level take the best precision at any cut whose recall reaches it.
inline double brute_force_ap(std::vector<std::pair<double, std::vector<double>>> preds,  // (score, OKS per gt of its image)
                const std::vector<std::int64_t>& pred_images, const std::vector<std::int64_t>& gt_images,
                double thr) {
    const int num_gt = static_cast<int>(gt_images.size());
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return preds[a].first > preds[b].first; });
    std::vector<bool> used(gt_images.size(), false);
    std::vector<int> hits_at;
    int hits = 0;
    for (auto r : order) {
        int best = -1;
        double bv = -1;
        for (std::size_t g = 0; g < gt_images.size(); ++g)
            if (gt_images[g] == pred_images[r] && !used[g] && preds[r].second[g] > bv) bv = preds[r].second[g], best = g;
        if (best >= 0 && bv >= thr) {
            used[best] = true;
            ++hits;
        }
        hits_at.push_back(hits);
    }
    double sum = 0;
    for (int level = 0; level <= 100; ++level) {
        double best_p = 0;
        for (std::size_t i = 0; i < hits_at.size(); ++i)
            if (hits_at[i] * 100 >= level * num_gt)
                best_p = std::max(best_p, static_cast<double>(hits_at[i]) / static_cast<double>(i + 1));
        sum += best_p;
    }
    return sum / 101.0;
}

}  // namespace oracle
