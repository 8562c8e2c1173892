#include "rapose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rapose/gpr.hpp"
#include "rapose/posenet.hpp"
#include "rapose/ram.hpp"

namespace rapose {

std::optional<GradScope> parse_grad_scope(const std::string& text) {
    if (text == "ops") return GradScope::ops;
    if (text == "ram") return GradScope::ram;
    if (text == "gpr") return GradScope::gpr;
    if (text == "full") return GradScope::full;
    return std::nullopt;
}

std::string to_string(GradScope scope) {
    switch (scope) {
        case GradScope::ops: return "ops";
        case GradScope::ram: return "ram";
        case GradScope::gpr: return "gpr";
        case GradScope::full: return "full";
    }
    return "?";
}

double default_tolerance(GradScope scope) { return scope == GradScope::full ? 1e-3 : 1e-4; }

bool GradCheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradCheckReport::failures() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (!e.passed) out.push_back(e.group + "/" + e.name);
    return out;
}

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(s);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Values bounded away from zero so that relu kinks cannot be straddled.
Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng) {
    Tensor<double> t = random_tensor(s, rng, 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.data())
        if (sign(rng)) v = -v;
    return t;
}

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

}  // namespace

std::vector<GradCheckEntry> check_gradients(const std::string& group, std::vector<Tensor<double>*> inputs,
                                            const std::vector<std::string>& names, const GradFn& f,
                                            const GradCheckOptions& opt) {
    if (names.size() != inputs.size()) throw ValueError("check_gradients: one name per input required");
    std::mt19937_64 rng(opt.seed);

    Tensor<double> weights;
    auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (auto* t : inputs) vars.push_back(tape.reference(*t, with_grad));
        Var<double> out = f(tape, vars);
        if (weights.empty()) weights = random_tensor(out.shape(), rng);
        Var<double> loss = sum(mul(out, tape.constant(weights)));
        const double value = loss.value()[0];
        if (with_grad) {
            tape.backward(loss);
            for (auto& v : vars) grads->push_back(tape.grad(v));
        }
        return value;
    };

    std::vector<Tensor<double>> analytic;
    evaluate(true, &analytic);

    auto numeric = [&](Tensor<double>& t, std::size_t j, double h) {
        const double saved = t[j];
        t[j] = saved + h;
        const double up = evaluate(false, nullptr);
        t[j] = saved - h;
        const double down = evaluate(false, nullptr);
        t[j] = saved;
        return (up - down) / (2 * h);
    };

    std::vector<GradCheckEntry> entries;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor<double>& t = *inputs[i];
        std::vector<std::size_t> idx(t.numel());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > opt.samples_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opt.samples_per_tensor);
        }
        GradCheckEntry e{group, names[i], 0.0, idx.size(), true};
        for (std::size_t j : idx) {
            const double a = analytic[i][j];
            double err = relative_error(a, numeric(t, j, opt.step));
            // A relu kink inside the stencil spoils the difference; a much
            // narrower stencil will almost surely avoid it.
            if (err > opt.tolerance) err = std::min(err, relative_error(a, numeric(t, j, opt.step * 1e-2)));
            e.max_rel_error = std::max(e.max_rel_error, err);
        }
        e.passed = e.max_rel_error < opt.tolerance;
        entries.push_back(std::move(e));
    }
    return entries;
}

namespace {

void append(GradCheckReport& r, std::vector<GradCheckEntry> e) {
    r.entries.insert(r.entries.end(), e.begin(), e.end());
}

void ops_suite(GradCheckReport& r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GradCheckOptions opt{r.tolerance, 1e-5, 24, seed};
    using V = std::vector<Var<double>>;
    using T = Tape<double>;

    for (int stride : {1, 2}) {
        auto x = random_tensor({2, 3, 7, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({1, 4, 1, 1}, rng);
        append(r, check_gradients("conv2d_s" + std::to_string(stride), {&x, &w, &b}, {"x", "weight", "bias"},
                                  [stride](T&, const V& v) { return conv2d(v[0], v[1], std::optional(v[2]), stride, 1); },
                                  opt));
    }
    {
        auto x = random_tensor({2, 3, 4, 5}, rng), w = random_tensor({2, 3, 1, 1}, rng);
        append(r, check_gradients("conv2d_1x1", {&x, &w}, {"x", "weight"},
                                  [](T&, const V& v) { return conv2d<double>(v[0], v[1], std::nullopt, 1, 0); }, opt));
    }
    {
        auto x = random_tensor({2, 3, 3, 4}, rng), w = random_tensor({3, 2, 4, 4}, rng), b = random_tensor({1, 2, 1, 1}, rng);
        append(r, check_gradients("deconv2d", {&x, &w, &b}, {"x", "weight", "bias"},
                                  [](T&, const V& v) { return deconv2d(v[0], v[1], std::optional(v[2]), 2, 1); }, opt));
    }
    for (auto [oh, ow] : {std::pair{6, 8}, std::pair{2, 2}, std::pair{5, 7}}) {
        auto x = random_tensor({2, 2, 3, 4}, rng);
        append(r, check_gradients("bilinear_resize_" + std::to_string(oh) + "x" + std::to_string(ow), {&x}, {"x"},
                                  [oh, ow](T&, const V& v) { return bilinear_resize(v[0], oh, ow); }, opt));
    }
    {
        auto x = random_tensor({2, 3, 4, 5}, rng);
        append(r, check_gradients("global_avg_pool", {&x}, {"x"}, [](T&, const V& v) { return global_avg_pool(v[0]); }, opt));
    }
    {
        auto x = random_tensor({1, 5, 1, 1}, rng, -2, 2);
        append(r, check_gradients("softmax_vec", {&x}, {"x"}, [](T&, const V& v) { return softmax_vec(v[0]); }, opt));
    }
    {
        auto a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 3, 4, 4}, rng);
        append(r, check_gradients("add", {&a, &b}, {"a", "b"}, [](T&, const V& v) { return add(v[0], v[1]); }, opt));
        append(r, check_gradients("mul", {&a, &b}, {"a", "b"}, [](T&, const V& v) { return mul(v[0], v[1]); }, opt));
        append(r, check_gradients("mse_loss", {&a, &b}, {"pred", "target"},
                                  [](T&, const V& v) { return mse_loss(v[0], v[1]); }, opt));
    }
    {
        auto a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
        append(r, check_gradients("concat_channels", {&a, &b}, {"a", "b"},
                                  [](T&, const V& v) { return concat_channels(v[0], v[1]); }, opt));
    }
    {
        auto x = away_from_zero({2, 3, 4, 4}, rng);
        append(r, check_gradients("relu", {&x}, {"x"}, [](T&, const V& v) { return relu(v[0]); }, opt));
    }
    {
        auto x = random_tensor({2, 3, 4, 4}, rng), s = random_tensor({1, 1, 1, 1}, rng);
        append(r, check_gradients("scale_by_scalar", {&x, &s}, {"x", "s"},
                                  [](T&, const V& v) { return scale_by_scalar(v[0], v[1]); }, opt));
        append(r, check_gradients("scale", {&x}, {"x"}, [](T&, const V& v) { return scale(v[0], -1.7); }, opt));
        append(r, check_gradients("batch_mean", {&x}, {"x"}, [](T&, const V& v) { return batch_mean(v[0]); }, opt));
        append(r, check_gradients("pick", {&x}, {"x"}, [](T&, const V& v) { return pick(v[0], 17); }, opt));
        append(r, check_gradients("sum", {&x}, {"x"}, [](T&, const V& v) { return sum(v[0]); }, opt));
    }
}

// Sum of every output against its own fixed random weights, as one scalar.
Var<double> weighted_total(Tape<double>& tape, const std::vector<Var<double>>& outs,
                           const std::vector<Tensor<double>>& weights) {
    Var<double> total = sum(mul(outs[0], tape.constant(weights[0])));
    for (std::size_t i = 1; i < outs.size(); ++i) total = add(total, sum(mul(outs[i], tape.constant(weights[i]))));
    return total;
}

struct ParamHarness {
    ParameterSet<double> params;
    std::vector<Tensor<double>> extra;
    std::vector<std::string> extra_names;

    std::vector<Tensor<double>*> pointers() {
        std::vector<Tensor<double>*> p;
        for (std::size_t i = 0; i < params.size(); ++i) p.push_back(&params.at(i));
        for (auto& t : extra) p.push_back(&t);
        return p;
    }
    std::vector<std::string> names() const {
        auto n = params.names();
        n.insert(n.end(), extra_names.begin(), extra_names.end());
        return n;
    }
    Binding<double> binding(const std::vector<Var<double>>& vars) const {
        Binding<double> b;
        b.tape = vars.empty() ? nullptr : vars.front().tape;
        b.vars.assign(vars.begin(), vars.begin() + static_cast<std::ptrdiff_t>(params.size()));
        return b;
    }
    Pyramid<double> pyramid(const std::vector<Var<double>>& vars) const {
        return Pyramid<double>(vars.begin() + static_cast<std::ptrdiff_t>(params.size()), vars.end());
    }
};

void randomize_affine(ParameterSet<double>& p, std::mt19937_64& rng) {
    // Move omega and beta off their initial values so every path is exercised.
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& n = p.name(i);
        if (n.ends_with(".omega") || n.ends_with(".beta") || n.ends_with(".bias"))
            for (auto& v : p.at(i).data()) v = std::uniform_real_distribution<double>(-0.5, 1.5)(rng);
    }
}

void ram_suite(GradCheckReport& r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GradCheckOptions opt{r.tolerance, 1e-5, 12, seed};
    constexpr int base = 3, h0 = 8, w0 = 4;
    for (bool attention : {true, false}) {
        for (auto [m, n] : {std::pair{2, 3}, std::pair{3, 3}}) {
            ParamHarness hx;
            Initializer init(seed + 17);
            const RamParams ram = make_ram(hx.params, init, "ram", base, m, n, attention);
            randomize_affine(hx.params, rng);
            for (int l = 0; l < m; ++l) {
                hx.extra.push_back(random_tensor(level_shape(Shape{2, base, h0, w0}, base, l), rng));
                hx.extra_names.push_back("input" + std::to_string(l));
            }
            std::vector<Tensor<double>> weights;
            for (int l = 0; l < n; ++l) weights.push_back(random_tensor(level_shape(Shape{2, base, h0, w0}, base, l), rng));
            const std::string group = "ram_" + std::to_string(m) + "to" + std::to_string(n) + (attention ? "" : "_uniform");
            append(r, check_gradients(group, hx.pointers(), hx.names(),
                                      [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
                                          auto res = ram_fuse(hx.binding(v), ram, hx.pyramid(v));
                                          return weighted_total(tape, res.outputs, weights);
                                      },
                                      opt));
        }
    }
}

void gpr_suite(GradCheckReport& r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GradCheckOptions opt{r.tolerance, 1e-5, 12, seed};
    constexpr int base = 3, levels = 3, k = 2, h0 = 8, w0 = 4;
    for (bool refine : {true, false}) {
        ParamHarness hx;
        Initializer init(seed + 29);
        std::variant<GprParams, RescaleSumParams> head;
        if (refine) head = make_gpr(hx.params, init, "head", base, levels, k);
        else head = make_rescale_sum(hx.params, init, "head", base, levels, k);
        randomize_affine(hx.params, rng);
        for (int l = 0; l < levels; ++l) {
            hx.extra.push_back(random_tensor(level_shape(Shape{2, base, h0, w0}, base, l), rng));
            hx.extra_names.push_back("level" + std::to_string(l));
        }
        append(r, check_gradients(refine ? "gpr" : "rescale_sum", hx.pointers(), hx.names(),
                                  [&](Tape<double>&, const std::vector<Var<double>>& v) {
                                      if (refine) return gpr_head(hx.binding(v), std::get<GprParams>(head), hx.pyramid(v));
                                      return rescale_sum_head(hx.binding(v), std::get<RescaleSumParams>(head), hx.pyramid(v));
                                  },
                                  opt));
    }
}

void full_suite(GradCheckReport& r, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GradCheckOptions opt{r.tolerance, 1e-5, 4, seed};
    NetworkConfig cfg;
    cfg.width = 4;
    cfg.num_stages = 2;
    cfg.blocks_per_stage = 1;
    cfg.input_h = 32;
    cfg.input_w = 24;
    cfg.num_keypoints = 3;
    PoseNet<double> net = PoseNet<double>::build(cfg, seed);
    randomize_affine(net.params(), rng);
    // build() zeroes the second block conv, which would hide the first one's gradient.
    for (std::size_t i = 0; i < net.params().size(); ++i)
        if (net.params().name(i).ends_with(".conv2.weight") || net.params().name(i) == "head.final.weight")
            for (auto& v : net.params().at(i).data()) v = std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
    Tensor<double> images = random_tensor({2, 3, cfg.input_h, cfg.input_w}, rng, 0, 1);
    std::vector<Tensor<double>*> inputs;
    for (std::size_t i = 0; i < net.params().size(); ++i) inputs.push_back(&net.params().at(i));
    inputs.push_back(&images);
    auto names = net.params().names();
    names.emplace_back("images");
    append(r, check_gradients("posenet", inputs, names,
                              [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
                                  Binding<double> b;
                                  b.tape = &tape;
                                  b.vars.assign(v.begin(), v.end() - 1);
                                  return net.forward(b, v.back()).heatmap;
                              },
                              opt));
}

}  // namespace

GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed) {
    GradCheckReport r;
    r.tolerance = default_tolerance(scope);
    switch (scope) {
        case GradScope::ops: ops_suite(r, seed); break;
        case GradScope::ram: ram_suite(r, seed); break;
        case GradScope::gpr: gpr_suite(r, seed); break;
        case GradScope::full: full_suite(r, seed); break;
    }
    return r;
}

}  // namespace rapose
