#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rapose/autodiff.hpp"

namespace rapose {
namespace {

template <typename Real>
using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapR = Eigen::Map<MatR<Real>>;
template <typename Real>
using CMapR = Eigen::Map<const MatR<Real>>;

template <typename Real>
void same_tape(const char* op, Var<Real> a, Var<Real> b) {
    if (a.tape != b.tape || a.tape == nullptr) throw ValueError(std::string(op) + ": operands on different tapes");
}

struct ConvGeom {
    int channels, in_h, in_w, kh, kw, stride, pad, out_h, out_w;
    std::size_t rows() const { return static_cast<std::size_t>(channels) * kh * kw; }
    std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
    bool trivial() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = img[c][oy*s - p + i][ox*s - p + j]
template <typename Real>
void im2col(const Real* img, const ConvGeom& g, Real* cols) {
    const std::size_t ncols = g.cols();
    for (int c = 0; c < g.channels; ++c)
        for (int i = 0; i < g.kh; ++i)
            for (int j = 0; j < g.kw; ++j) {
                Real* row = cols + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * ncols;
                const Real* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int y = oy * g.stride - g.pad + i;
                    Real* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (y < 0 || y >= g.in_h) {
                        std::fill(dst, dst + g.out_w, Real(0));
                        continue;
                    }
                    const Real* src = plane + static_cast<std::size_t>(y) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int x = ox * g.stride - g.pad + j;
                        dst[ox] = (x >= 0 && x < g.in_w) ? src[x] : Real(0);
                    }
                }
            }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename Real>
void col2im(const Real* cols, const ConvGeom& g, Real* img) {
    const std::size_t ncols = g.cols();
    for (int c = 0; c < g.channels; ++c)
        for (int i = 0; i < g.kh; ++i)
            for (int j = 0; j < g.kw; ++j) {
                const Real* row = cols + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * ncols;
                Real* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int y = oy * g.stride - g.pad + i;
                    if (y < 0 || y >= g.in_h) continue;
                    const Real* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    Real* dst = plane + static_cast<std::size_t>(y) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int x = ox * g.stride - g.pad + j;
                        if (x >= 0 && x < g.in_w) dst[x] += src[ox];
                    }
                }
            }
}

void check_kernel(const char* op, int stride, int pad, int kh, int kw, bool odd_required) {
    if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw ValueError(std::string(op) + ": pad must be >= 0");
    if (kh < 1 || kw < 1) throw ValueError(std::string(op) + ": empty kernel");
    if (odd_required && (kh % 2 == 0 || kw % 2 == 0))
        throw ValueError(std::string(op) + ": kernel extents must be odd");
}

template <typename Real>
void check_bias(const char* op, std::optional<Var<Real>> bias, Var<Real> x, int c_out) {
    if (!bias) return;
    same_tape(op, x, *bias);
    if (static_cast<int>(bias->value().numel()) != c_out)
        throw DimensionError(op, {"bias"},
                             "expected " + std::to_string(c_out) + " bias elements, got " +
                                 std::to_string(bias->value().numel()));
}

template <typename Real>
void add_bias(Tensor<Real>& out, const Tensor<Real>& bias) {
    const Shape s = out.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            Real* p = out.raw() + out.offset(n, c, 0, 0);
            const Real b = bias[c];
            for (std::size_t k = 0; k < plane; ++k) p[k] += b;
        }
}

template <typename Real>
void reduce_bias_grad(const Tensor<Real>& g, Tensor<Real>& db) {
    const Shape s = g.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const Real* p = g.raw() + g.offset(n, c, 0, 0);
            Real acc = 0;
            for (std::size_t k = 0; k < plane; ++k) acc += p[k];
            db[c] += acc;
        }
}

}  // namespace

template <typename Real>
std::vector<Real> softmax(std::span<const Real> e) {
    if (e.empty()) throw ValueError("softmax: empty vector");
    const Real m = *std::max_element(e.begin(), e.end());
    std::vector<Real> out(e.size());
    Real total = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        out[i] = std::exp(e[i] - m);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

template <typename Real>
Var<Real> conv2d(Var<Real> x, Var<Real> weight, std::optional<Var<Real>> bias, int stride, int pad) {
    same_tape("conv2d", x, weight);
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    check_kernel("conv2d", stride, pad, ws.h, ws.w, !(ws.h == 1 && ws.w == 1));
    if (xs.c != ws.c)
        throw DimensionError("conv2d", {"channels"},
                             "input " + xs.str() + " has " + std::to_string(xs.c) +
                                 " channels, weight " + ws.str() + " expects " + std::to_string(ws.c));
    if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
        std::vector<std::string> axes;
        if (xs.h + 2 * pad < ws.h) axes.emplace_back("height");
        if (xs.w + 2 * pad < ws.w) axes.emplace_back("width");
        throw DimensionError("conv2d", axes, "kernel larger than padded input");
    }
    check_bias("conv2d", bias, x, ws.n);

    ConvGeom g{xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, conv_out_size(xs.h, ws.h, stride, pad),
               conv_out_size(xs.w, ws.w, stride, pad)};
    const int c_out = ws.n;
    Tensor<Real> out(Shape{xs.n, c_out, g.out_h, g.out_w});
    const auto& xv = x.value();
    const auto& wv = weight.value();
    CMapR<Real> wm(wv.raw(), c_out, static_cast<Eigen::Index>(g.rows()));
    std::vector<Real> cols(g.trivial() ? 0 : g.rows() * g.cols());
    const std::size_t in_per = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
    const std::size_t out_per = static_cast<std::size_t>(c_out) * g.cols();
    for (int n = 0; n < xs.n; ++n) {
        const Real* colp = xv.raw() + n * in_per;
        if (!g.trivial()) {
            im2col(colp, g, cols.data());
            colp = cols.data();
        }
        CMapR<Real> cm(colp, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
        MapR<Real> om(out.raw() + n * out_per, c_out, static_cast<Eigen::Index>(g.cols()));
        om.noalias() = wm * cm;
    }
    if (bias) add_bias(out, bias->value());

    const std::int64_t flops = 2 * static_cast<std::int64_t>(out.numel()) * static_cast<std::int64_t>(g.rows()) +
                               (bias ? static_cast<std::int64_t>(out.numel()) : 0);
    Tape<Real>* tape = x.tape;
    std::vector<std::size_t> inputs{x.id, weight.id};
    if (bias) inputs.push_back(bias->id);
    const std::size_t xid = x.id, wid = weight.id;
    const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
    return tape->record(
        OpKind::conv2d, std::move(inputs), std::move(out),
        [tape, xid, wid, bid, g, c_out, in_per, out_per](const Tensor<Real>& go) {
            const auto& xv = tape->value(Var<Real>{tape, xid});
            const auto& wv = tape->value(Var<Real>{tape, wid});
            const bool need_x = tape->requires_grad(xid);
            const bool need_w = tape->requires_grad(wid);
            const auto rows = static_cast<Eigen::Index>(g.rows());
            const auto ncols = static_cast<Eigen::Index>(g.cols());
            CMapR<Real> wm(wv.raw(), c_out, rows);
            std::vector<Real> cols(g.trivial() ? 0 : g.rows() * g.cols());
            Real* dx = need_x ? tape->grad_slot(xid).raw() : nullptr;
            Real* dw = need_w ? tape->grad_slot(wid).raw() : nullptr;
            const int batch = xv.shape().n;
            for (int n = 0; n < batch; ++n) {
                CMapR<Real> gm(go.raw() + n * out_per, c_out, ncols);
                if (need_w) {
                    const Real* colp = xv.raw() + n * in_per;
                    if (!g.trivial()) {
                        im2col(colp, g, cols.data());
                        colp = cols.data();
                    }
                    CMapR<Real> cm(colp, rows, ncols);
                    MapR<Real> dwm(dw, c_out, rows);
                    dwm.noalias() += gm * cm.transpose();
                }
                if (need_x) {
                    if (g.trivial()) {
                        MapR<Real> dxm(dx + n * in_per, rows, ncols);
                        dxm.noalias() += wm.transpose() * gm;
                    } else {
                        MapR<Real> dcm(cols.data(), rows, ncols);
                        dcm.noalias() = wm.transpose() * gm;
                        col2im(cols.data(), g, dx + n * in_per);
                    }
                }
            }
            if (bid && tape->requires_grad(*bid)) reduce_bias_grad(go, tape->grad_slot(*bid));
        },
        flops);
}

template <typename Real>
Var<Real> deconv2d(Var<Real> x, Var<Real> weight, std::optional<Var<Real>> bias, int stride,
                   int pad) {
    same_tape("deconv2d", x, weight);
    const Shape xs = x.shape();
    const Shape ws = weight.shape();  // (c_in, c_out, kh, kw)
    check_kernel("deconv2d", stride, pad, ws.h, ws.w, false);
    if (xs.c != ws.n)
        throw DimensionError("deconv2d", {"channels"},
                             "input " + xs.str() + " has " + std::to_string(xs.c) +
                                 " channels, weight " + ws.str() + " expects " + std::to_string(ws.n));
    const int c_out = ws.c;
    const int oh = deconv_out_size(xs.h, ws.h, stride, pad);
    const int ow = deconv_out_size(xs.w, ws.w, stride, pad);
    if (oh < 1 || ow < 1) {
        std::vector<std::string> axes;
        if (oh < 1) axes.emplace_back("height");
        if (ow < 1) axes.emplace_back("width");
        throw DimensionError("deconv2d", axes, "empty output");
    }
    check_bias("deconv2d", bias, x, c_out);

    // Geometry of the equivalent convolution mapping output -> input grid.
    ConvGeom g{c_out, oh, ow, ws.h, ws.w, stride, pad, xs.h, xs.w};
    Tensor<Real> out(Shape{xs.n, c_out, oh, ow});
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const auto rows = static_cast<Eigen::Index>(g.rows());
    const auto ncols = static_cast<Eigen::Index>(g.cols());
    CMapR<Real> wm(wv.raw(), xs.c, rows);
    std::vector<Real> cols(g.rows() * g.cols());
    const std::size_t in_per = static_cast<std::size_t>(xs.c) * g.cols();
    const std::size_t out_per = static_cast<std::size_t>(c_out) * oh * ow;
    for (int n = 0; n < xs.n; ++n) {
        CMapR<Real> xm(xv.raw() + n * in_per, xs.c, ncols);
        MapR<Real> cm(cols.data(), rows, ncols);
        cm.noalias() = wm.transpose() * xm;
        col2im(cols.data(), g, out.raw() + n * out_per);
    }
    if (bias) add_bias(out, bias->value());

    const std::int64_t flops =
        2 * static_cast<std::int64_t>(xs.n) * xs.c * static_cast<std::int64_t>(g.rows() * g.cols()) +
        (bias ? static_cast<std::int64_t>(out.numel()) : 0);
    Tape<Real>* tape = x.tape;
    std::vector<std::size_t> inputs{x.id, weight.id};
    if (bias) inputs.push_back(bias->id);
    const std::size_t xid = x.id, wid = weight.id;
    const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
    const int c_in = xs.c;
    return tape->record(
        OpKind::deconv2d, std::move(inputs), std::move(out),
        [tape, xid, wid, bid, g, c_in, in_per, out_per, rows, ncols](const Tensor<Real>& go) {
            const auto& xv = tape->value(Var<Real>{tape, xid});
            const auto& wv = tape->value(Var<Real>{tape, wid});
            const bool need_x = tape->requires_grad(xid);
            const bool need_w = tape->requires_grad(wid);
            CMapR<Real> wm(wv.raw(), c_in, rows);
            std::vector<Real> cols(g.rows() * g.cols());
            Real* dx = need_x ? tape->grad_slot(xid).raw() : nullptr;
            Real* dw = need_w ? tape->grad_slot(wid).raw() : nullptr;
            const int batch = xv.shape().n;
            for (int n = 0; n < batch; ++n) {
                if (!need_x && !need_w) break;
                im2col(go.raw() + n * out_per, g, cols.data());
                CMapR<Real> cm(cols.data(), rows, ncols);
                if (need_x) {
                    MapR<Real> dxm(dx + n * in_per, c_in, ncols);
                    dxm.noalias() += wm * cm;
                }
                if (need_w) {
                    CMapR<Real> xm(xv.raw() + n * in_per, c_in, ncols);
                    MapR<Real> dwm(dw, c_in, rows);
                    dwm.noalias() += xm * cm.transpose();
                }
            }
            if (bid && tape->requires_grad(*bid)) reduce_bias_grad(go, tape->grad_slot(*bid));
        },
        flops);
}

namespace {

struct LerpAxis {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

// Half-pixel source coordinate, clamped at zero like common framework kernels.
LerpAxis lerp_axis(int in, int out) {
    LerpAxis a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        a.lo[i] = lo;
        a.hi[i] = lo < in - 1 ? lo + 1 : lo;
        a.frac[i] = src - lo;
    }
    return a;
}

}  // namespace

template <typename Real>
Var<Real> bilinear_resize(Var<Real> x, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ValueError("bilinear_resize: output extents must be >= 1");
    const Shape xs = x.shape();
    if (xs.h < 1 || xs.w < 1) throw ValueError("bilinear_resize: empty input plane");
    Tensor<Real> out(Shape{xs.n, xs.c, out_h, out_w});
    const auto& xv = x.value();
    const bool identity = out_h == xs.h && out_w == xs.w;
    const LerpAxis ay = lerp_axis(xs.h, out_h);
    const LerpAxis ax = lerp_axis(xs.w, out_w);
    if (identity) {
        std::copy(xv.data().begin(), xv.data().end(), out.data().begin());
    } else {
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                const Real* src = xv.raw() + xv.offset(n, c, 0, 0);
                Real* dst = out.raw() + out.offset(n, c, 0, 0);
                for (int i = 0; i < out_h; ++i) {
                    const Real fy = static_cast<Real>(ay.frac[i]);
                    const Real* r0 = src + static_cast<std::size_t>(ay.lo[i]) * xs.w;
                    const Real* r1 = src + static_cast<std::size_t>(ay.hi[i]) * xs.w;
                    for (int j = 0; j < out_w; ++j) {
                        const Real fx = static_cast<Real>(ax.frac[j]);
                        const int x0 = ax.lo[j], x1 = ax.hi[j];
                        const Real top = (Real(1) - fx) * r0[x0] + fx * r0[x1];
                        const Real bot = (Real(1) - fx) * r1[x0] + fx * r1[x1];
                        dst[static_cast<std::size_t>(i) * out_w + j] = (Real(1) - fy) * top + fy * bot;
                    }
                }
            }
    }
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::bilinear_resize, {xid}, std::move(out),
                        [tape, xid, identity, ay, ax, out_h, out_w](const Tensor<Real>& go) {
                            Tensor<Real>& dx = tape->grad_slot(xid);
                            const Shape s = dx.shape();
                            if (identity) {
                                for (std::size_t k = 0; k < go.numel(); ++k) dx[k] += go[k];
                                return;
                            }
                            for (int n = 0; n < s.n; ++n)
                                for (int c = 0; c < s.c; ++c) {
                                    Real* d = dx.raw() + dx.offset(n, c, 0, 0);
                                    const Real* gp = go.raw() + go.offset(n, c, 0, 0);
                                    for (int i = 0; i < out_h; ++i) {
                                        const Real fy = static_cast<Real>(ay.frac[i]);
                                        Real* r0 = d + static_cast<std::size_t>(ay.lo[i]) * s.w;
                                        Real* r1 = d + static_cast<std::size_t>(ay.hi[i]) * s.w;
                                        for (int j = 0; j < out_w; ++j) {
                                            const Real fx = static_cast<Real>(ax.frac[j]);
                                            const Real v = gp[static_cast<std::size_t>(i) * out_w + j];
                                            const int x0 = ax.lo[j], x1 = ax.hi[j];
                                            r0[x0] += (Real(1) - fy) * (Real(1) - fx) * v;
                                            r0[x1] += (Real(1) - fy) * fx * v;
                                            r1[x0] += fy * (Real(1) - fx) * v;
                                            r1[x1] += fy * fx * v;
                                        }
                                    }
                                }
                        });
}

template <typename Real>
Var<Real> global_avg_pool(Var<Real> x) {
    const Shape xs = x.shape();
    if (xs.h < 1 || xs.w < 1) throw ValueError("global_avg_pool: empty spatial plane");
    Tensor<Real> out(Shape{xs.n, xs.c, 1, 1});
    const auto& xv = x.value();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const Real* p = xv.raw() + xv.offset(n, c, 0, 0);
            Real acc = 0;
            for (std::size_t k = 0; k < plane; ++k) acc += p[k];
            out.at(n, c, 0, 0) = acc / static_cast<Real>(plane);
        }
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::global_avg_pool, {xid}, std::move(out), [tape, xid, plane](const Tensor<Real>& go) {
        Tensor<Real>& dx = tape->grad_slot(xid);
        const Shape s = dx.shape();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const Real v = go.at(n, c, 0, 0) / static_cast<Real>(plane);
                Real* p = dx.raw() + dx.offset(n, c, 0, 0);
                for (std::size_t k = 0; k < plane; ++k) p[k] += v;
            }
    });
}

template <typename Real>
Var<Real> softmax_vec(Var<Real> x) {
    const auto& xv = x.value();
    if (xv.numel() == 0) throw ValueError("softmax_vec: empty vector");
    std::vector<Real> y = softmax<Real>(xv.data());
    Tensor<Real> out(xv.shape(), y);
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::softmax, {xid}, std::move(out), [tape, xid, y](const Tensor<Real>& go) {
        Real dot = 0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += go[i] * y[i];
        Tensor<Real>& dx = tape->grad_slot(xid);
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += y[i] * (go[i] - dot);
    });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
    same_tape("add", a, b);
    require_same_shape("add", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    Tensor<Real> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    Tape<Real>* tape = a.tape;
    const std::size_t aid = a.id, bid = b.id;
    return tape->record(OpKind::add, {aid, bid}, std::move(out), [tape, aid, bid](const Tensor<Real>& go) {
        for (std::size_t id : {aid, bid}) {
            if (!tape->requires_grad(id)) continue;
            Tensor<Real>& d = tape->grad_slot(id);
            for (std::size_t i = 0; i < go.numel(); ++i) d[i] += go[i];
        }
    });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
    same_tape("mul", a, b);
    require_same_shape("mul", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    Tensor<Real> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    Tape<Real>* tape = a.tape;
    const std::size_t aid = a.id, bid = b.id;
    return tape->record(OpKind::mul, {aid, bid}, std::move(out), [tape, aid, bid](const Tensor<Real>& go) {
        const auto& av = tape->value(Var<Real>{tape, aid});
        const auto& bv = tape->value(Var<Real>{tape, bid});
        if (tape->requires_grad(aid)) {
            Tensor<Real>& d = tape->grad_slot(aid);
            for (std::size_t i = 0; i < go.numel(); ++i) d[i] += go[i] * bv[i];
        }
        if (tape->requires_grad(bid)) {
            Tensor<Real>& d = tape->grad_slot(bid);
            for (std::size_t i = 0; i < go.numel(); ++i) d[i] += go[i] * av[i];
        }
    });
}

template <typename Real>
Var<Real> concat_channels(std::span<const Var<Real>> parts) {
    if (parts.empty()) throw ValueError("concat_channels: no inputs");
    const Shape first = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        same_tape("concat_channels", parts.front(), p);
        const Shape s = p.shape();
        std::vector<std::string> axes;
        if (s.n != first.n) axes.emplace_back("batch");
        if (s.h != first.h) axes.emplace_back("height");
        if (s.w != first.w) axes.emplace_back("width");
        if (!axes.empty()) throw DimensionError("concat_channels", axes, first.str() + " vs " + s.str());
        channels += s.c;
    }
    Tensor<Real> out(Shape{first.n, channels, first.h, first.w});
    const std::size_t plane = first.plane();
    std::vector<std::size_t> ids;
    std::vector<int> offsets;
    int c0 = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        for (int n = 0; n < first.n; ++n) {
            const Real* src = v.raw() + v.offset(n, 0, 0, 0);
            std::copy(src, src + plane * v.shape().c, out.raw() + out.offset(n, c0, 0, 0));
        }
        ids.push_back(p.id);
        offsets.push_back(c0);
        c0 += v.shape().c;
    }
    Tape<Real>* tape = parts.front().tape;
    return tape->record(OpKind::concat_channels, ids, std::move(out),
                        [tape, ids, offsets, plane](const Tensor<Real>& go) {
                            for (std::size_t k = 0; k < ids.size(); ++k) {
                                if (!tape->requires_grad(ids[k])) continue;
                                Tensor<Real>& d = tape->grad_slot(ids[k]);
                                const Shape s = d.shape();
                                for (int n = 0; n < s.n; ++n) {
                                    const Real* src = go.raw() + go.offset(n, offsets[k], 0, 0);
                                    Real* dst = d.raw() + d.offset(n, 0, 0, 0);
                                    for (std::size_t i = 0; i < plane * s.c; ++i) dst[i] += src[i];
                                }
                            }
                        });
}

template <typename Real>
Var<Real> relu(Var<Real> x) {
    const auto& xv = x.value();
    Tensor<Real> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > Real(0) ? xv[i] : Real(0);
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::relu, {xid}, std::move(out), [tape, xid](const Tensor<Real>& go) {
        const auto& xv = tape->value(Var<Real>{tape, xid});
        Tensor<Real>& d = tape->grad_slot(xid);
        for (std::size_t i = 0; i < go.numel(); ++i)
            if (xv[i] > Real(0)) d[i] += go[i];
    });
}

template <typename Real>
Var<Real> scale_by_scalar(Var<Real> x, Var<Real> s) {
    same_tape("scale_by_scalar", x, s);
    if (s.value().numel() != 1)
        throw DimensionError("scale_by_scalar", {"numel"}, "scale must hold one element, got " + s.shape().str());
    const auto& xv = x.value();
    const Real k = s.value()[0];
    Tensor<Real> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * k;
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id, sid = s.id;
    return tape->record(OpKind::scale_by_scalar, {xid, sid}, std::move(out), [tape, xid, sid](const Tensor<Real>& go) {
        const auto& xv = tape->value(Var<Real>{tape, xid});
        const Real k = tape->value(Var<Real>{tape, sid})[0];
        if (tape->requires_grad(xid)) {
            Tensor<Real>& d = tape->grad_slot(xid);
            for (std::size_t i = 0; i < go.numel(); ++i) d[i] += go[i] * k;
        }
        if (tape->requires_grad(sid)) {
            Real acc = 0;
            for (std::size_t i = 0; i < go.numel(); ++i) acc += go[i] * xv[i];
            tape->grad_slot(sid)[0] += acc;
        }
    });
}

template <typename Real>
Var<Real> scale(Var<Real> x, Real s) {
    const auto& xv = x.value();
    Tensor<Real> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * s;
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::scale, {xid}, std::move(out), [tape, xid, s](const Tensor<Real>& go) {
        Tensor<Real>& d = tape->grad_slot(xid);
        for (std::size_t i = 0; i < go.numel(); ++i) d[i] += go[i] * s;
    });
}

template <typename Real>
Var<Real> batch_mean(Var<Real> x) {
    const auto& xv = x.value();
    const Shape s = xv.shape();
    if (s.n < 1) throw ValueError("batch_mean: empty batch");
    const std::size_t per = s.numel() / static_cast<std::size_t>(s.n);
    Tensor<Real> out(Shape{1, s.c, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < per; ++i) out[i] += xv[n * per + i];
    for (std::size_t i = 0; i < per; ++i) out[i] /= static_cast<Real>(s.n);
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    const int batch = s.n;
    return tape->record(OpKind::batch_mean, {xid}, std::move(out), [tape, xid, per, batch](const Tensor<Real>& go) {
        Tensor<Real>& d = tape->grad_slot(xid);
        for (int n = 0; n < batch; ++n)
            for (std::size_t i = 0; i < per; ++i) d[n * per + i] += go[i] / static_cast<Real>(batch);
    });
}

template <typename Real>
Var<Real> pick(Var<Real> x, std::size_t index) {
    const auto& xv = x.value();
    if (index >= xv.numel()) throw ValueError("pick: index out of range");
    Tensor<Real> out = Tensor<Real>::scalar(xv[index]);
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::pick, {xid}, std::move(out),
                        [tape, xid, index](const Tensor<Real>& go) { tape->grad_slot(xid)[index] += go[0]; });
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
    const auto& xv = x.value();
    Real acc = 0;
    for (Real v : xv.data()) acc += v;
    Tape<Real>* tape = x.tape;
    const std::size_t xid = x.id;
    return tape->record(OpKind::sum, {xid}, Tensor<Real>::scalar(acc), [tape, xid](const Tensor<Real>& go) {
        Tensor<Real>& d = tape->grad_slot(xid);
        for (auto& v : d.data()) v += go[0];
    });
}

template <typename Real>
Var<Real> mse_loss(Var<Real> pred, Var<Real> target) {
    same_tape("mse_loss", pred, target);
    require_same_shape("mse_loss", pred.shape(), target.shape());
    const auto& pv = pred.value();
    const auto& tv = target.value();
    if (pv.numel() == 0) throw ValueError("mse_loss: empty tensors");
    Real acc = 0;
    for (std::size_t i = 0; i < pv.numel(); ++i) {
        const Real d = pv[i] - tv[i];
        acc += d * d;
    }
    const auto count = static_cast<Real>(pv.numel());
    Tape<Real>* tape = pred.tape;
    const std::size_t pid = pred.id, tid = target.id;
    return tape->record(OpKind::mse_loss, {pid, tid}, Tensor<Real>::scalar(acc / count),
                        [tape, pid, tid, count](const Tensor<Real>& go) {
                            const auto& pv = tape->value(Var<Real>{tape, pid});
                            const auto& tv = tape->value(Var<Real>{tape, tid});
                            const Real k = Real(2) * go[0] / count;
                            if (tape->requires_grad(pid)) {
                                Tensor<Real>& d = tape->grad_slot(pid);
                                for (std::size_t i = 0; i < pv.numel(); ++i) d[i] += k * (pv[i] - tv[i]);
                            }
                            if (tape->requires_grad(tid)) {
                                Tensor<Real>& d = tape->grad_slot(tid);
                                for (std::size_t i = 0; i < pv.numel(); ++i) d[i] -= k * (pv[i] - tv[i]);
                            }
                        });
}

#define RAPOSE_INSTANTIATE_OPS(Real)                                                                      \
    template std::vector<Real> softmax<Real>(std::span<const Real>);                                      \
    template Var<Real> conv2d(Var<Real>, Var<Real>, std::optional<Var<Real>>, int, int);                   \
    template Var<Real> deconv2d(Var<Real>, Var<Real>, std::optional<Var<Real>>, int, int);                 \
    template Var<Real> bilinear_resize(Var<Real>, int, int);                                              \
    template Var<Real> global_avg_pool(Var<Real>);                                                        \
    template Var<Real> softmax_vec(Var<Real>);                                                            \
    template Var<Real> add(Var<Real>, Var<Real>);                                                         \
    template Var<Real> mul(Var<Real>, Var<Real>);                                                         \
    template Var<Real> concat_channels(std::span<const Var<Real>>);                                       \
    template Var<Real> relu(Var<Real>);                                                                   \
    template Var<Real> scale_by_scalar(Var<Real>, Var<Real>);                                             \
    template Var<Real> scale(Var<Real>, Real);                                                            \
    template Var<Real> batch_mean(Var<Real>);                                                             \
    template Var<Real> pick(Var<Real>, std::size_t);                                                      \
    template Var<Real> sum(Var<Real>);                                                                    \
    template Var<Real> mse_loss(Var<Real>, Var<Real>);

RAPOSE_INSTANTIATE_OPS(float)
RAPOSE_INSTANTIATE_OPS(double)

#undef RAPOSE_INSTANTIATE_OPS

}  // namespace rapose
