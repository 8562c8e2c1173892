#include "rapose/ram.hpp"

#include <ostream>

namespace rapose {

template <typename Real>
RamParams make_ram(ParameterSet<Real>& params, Initializer& init, const std::string& prefix,
                   int base_channels, int num_inputs, int num_outputs, bool attention) {
    if (base_channels < 1 || num_inputs < 1 || num_outputs < 1)
        throw ValueError("make_ram: channel and level counts must be positive");
    RamParams ram;
    ram.base_channels = base_channels;
    ram.num_inputs = num_inputs;
    ram.attention = attention;
    for (int i = 0; i < num_outputs; ++i) {
        RamOutput out;
        out.level = i;
        const std::string oname = prefix + ".out" + std::to_string(i);
        const int c_i = base_channels << i;
        for (int h = 0; h < num_inputs; ++h) {
            RamEdge edge;
            edge.sampler.from_level = h;
            edge.sampler.to_level = i;
            const std::string ename = oname + ".in" + std::to_string(h);
            if (h == i) {
                edge.sampler.kind = SamplerKind::identity;
            } else if (h < i) {
                edge.sampler.kind = SamplerKind::down;
                for (int step = 0; step < i - h; ++step) {
                    const int c_from = base_channels << (h + step);
                    edge.sampler.steps.push_back(make_conv(params, init, ename + ".down" + std::to_string(step),
                                                           c_from, c_from * 2, 3, 2, 1));
                }
            } else {
                edge.sampler.kind = SamplerKind::up;
                edge.sampler.steps.push_back(
                    make_conv(params, init, ename + ".up", base_channels << h, c_i, 1, 1, 0));
            }
            if (attention) edge.aggregate = make_conv(params, init, ename + ".aggregate", c_i, 1, 1, 1, 0);
            out.edges.push_back(std::move(edge));
        }
        if (attention) {
            out.omega = params.add(oname + ".omega", Tensor<Real>(Shape{1, num_inputs, 1, 1}, Real(1)));
            out.beta = params.add(oname + ".beta", Tensor<Real>(Shape{1, num_inputs, 1, 1}, Real(0)));
        }
        ram.outputs.push_back(std::move(out));
    }
    return ram;
}

void validate_pyramid(std::span<const Shape> levels, int base_channels) {
    if (levels.empty()) throw ValueError("pyramid has no levels");
    for (std::size_t r = 0; r < levels.size(); ++r) {
        const Shape& s = levels[r];
        std::vector<std::string> axes;
        if (s.n != levels[0].n) axes.emplace_back("batch");
        if (s.c != (base_channels << r)) axes.emplace_back("channels");
        if (r > 0) {
            if (s.h * 2 != levels[r - 1].h) axes.emplace_back("height");
            if (s.w * 2 != levels[r - 1].w) axes.emplace_back("width");
        }
        if (!axes.empty())
            throw DimensionError("pyramid level " + std::to_string(r), axes,
                                 "got " + s.str() + ", base channels " + std::to_string(base_channels));
    }
}

template <typename Real>
void validate_pyramid(const Pyramid<Real>& levels, int base_channels) {
    std::vector<Shape> shapes;
    for (const auto& v : levels) shapes.push_back(v.shape());
    validate_pyramid(std::span<const Shape>(shapes), base_channels);
}

Shape level_shape(const Shape& level0, int base_channels, int level) {
    const int f = 1 << level;
    if (level0.h % f != 0 || level0.w % f != 0) {
        std::vector<std::string> axes;
        if (level0.h % f != 0) axes.emplace_back("height");
        if (level0.w % f != 0) axes.emplace_back("width");
        throw DimensionError("level_shape", axes,
                             level0.str() + " cannot be halved " + std::to_string(level) + " times");
    }
    return Shape{level0.n, base_channels << level, level0.h / f, level0.w / f};
}

namespace {

template <typename Real>
Var<Real> apply_sampler(const Binding<Real>& b, const SamplerSpec& s, Var<Real> x, const Shape& target) {
    switch (s.kind) {
        case SamplerKind::identity: return x;
        case SamplerKind::down: {
            Var<Real> y = x;
            for (std::size_t k = 0; k < s.steps.size(); ++k) {
                y = apply(b, s.steps[k], y);
                if (k + 1 < s.steps.size()) y = relu(y);
            }
            return y;
        }
        case SamplerKind::up: {
            Var<Real> y = bilinear_resize(x, target.h, target.w);
            return apply(b, s.steps.front(), y);
        }
    }
    return x;
}

template <typename Real>
void check_inputs(const RamParams& ram, const Pyramid<Real>& inputs) {
    if (static_cast<int>(inputs.size()) != ram.num_inputs)
        throw DimensionError("ram", {"levels"},
                             "expected " + std::to_string(ram.num_inputs) + " input levels, got " +
                                 std::to_string(inputs.size()));
    validate_pyramid(inputs, ram.base_channels);
}

std::vector<double> values_of(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> values_of(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

template <typename Real>
Pyramid<Real> sample_to_level(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs,
                              int out_index) {
    check_inputs(ram, inputs);
    if (out_index < 0 || out_index >= ram.num_outputs())
        throw ValueError("ram: output level " + std::to_string(out_index) + " out of range");
    const Shape target = level_shape(inputs.front().shape(), ram.base_channels, out_index);
    Pyramid<Real> sampled;
    for (const auto& edge : ram.outputs[out_index].edges) {
        Var<Real> y = apply_sampler(b, edge.sampler, inputs[edge.sampler.from_level], target);
        require_same_shape("ram sampler", y.shape(), target);
        sampled.push_back(y);
    }
    return sampled;
}

template <typename Real>
Var<Real> ram_scalars(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& sampled,
                      int out_index) {
    const auto& out = ram.outputs.at(out_index);
    if (sampled.size() != out.edges.size())
        throw DimensionError("ram_scalars", {"levels"}, "one sampled map per input level required");
    Pyramid<Real> scalars;
    for (std::size_t h = 0; h < sampled.size(); ++h) {
        const auto& agg = out.edges[h].aggregate;
        if (!agg) throw ValueError("ram_scalars: module was built without attention");
        Var<Real> e = apply(b, *agg, global_avg_pool(sampled[h]));
        scalars.push_back(batch_mean(e));
    }
    return concat_channels<Real>(std::span<const Var<Real>>(scalars));
}

template <typename Real>
Var<Real> ram_weights(Var<Real> scalars, Var<Real> omega, Var<Real> beta) {
    const std::size_t m = scalars.value().numel();
    if (omega.value().numel() != m || beta.value().numel() != m)
        throw DimensionError("ram_weights", {"length"},
                             "E has " + std::to_string(m) + " entries, omega " +
                                 std::to_string(omega.value().numel()) + ", beta " +
                                 std::to_string(beta.value().numel()));
    return add(mul(softmax_vec(scalars), omega), beta);
}

template <typename Real>
std::vector<Real> ram_weights(std::span<const Real> scalars, std::span<const Real> omega,
                              std::span<const Real> beta) {
    if (omega.size() != scalars.size() || beta.size() != scalars.size())
        throw DimensionError("ram_weights", {"length"},
                             "E has " + std::to_string(scalars.size()) + " entries, omega " +
                                 std::to_string(omega.size()) + ", beta " + std::to_string(beta.size()));
    std::vector<Real> w = softmax<Real>(scalars);
    for (std::size_t h = 0; h < w.size(); ++h) w[h] = w[h] * omega[h] + beta[h];
    return w;
}

template <typename Real>
RamResult<Real> ram_fuse(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs) {
    if (!ram.attention) return ram_fuse_uniform(b, ram, inputs);
    RamResult<Real> result;
    for (int i = 0; i < ram.num_outputs(); ++i) {
        const auto& out = ram.outputs[i];
        Pyramid<Real> sampled = sample_to_level(b, ram, inputs, i);
        Var<Real> e = ram_scalars(b, ram, sampled, i);
        Var<Real> sm = softmax_vec(e);
        Var<Real> w = add(mul(sm, b[*out.omega]), b[*out.beta]);
        Var<Real> y = scale_by_scalar(sampled[0], pick(w, 0));
        for (std::size_t h = 1; h < sampled.size(); ++h) y = add(y, scale_by_scalar(sampled[h], pick(w, h)));
        result.outputs.push_back(y);
        result.report.levels.push_back(
            RamLevelReport{i, values_of(e.value()), values_of(sm.value()), values_of(w.value())});
    }
    return result;
}

template <typename Real>
RamResult<Real> ram_fuse_uniform(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs) {
    RamResult<Real> result;
    const auto m = static_cast<std::size_t>(ram.num_inputs);
    for (int i = 0; i < ram.num_outputs(); ++i) {
        Pyramid<Real> sampled = sample_to_level(b, ram, inputs, i);
        Var<Real> y = sampled[0];
        for (std::size_t h = 1; h < sampled.size(); ++h) y = add(y, sampled[h]);
        result.outputs.push_back(y);
        result.report.levels.push_back(RamLevelReport{i, std::vector<double>(m, 0.0),
                                                      std::vector<double>(m, 1.0 / static_cast<double>(m)),
                                                      std::vector<double>(m, 1.0)});
    }
    return result;
}

template <typename Real>
Pyramid<Real> ram_fuse_fixed(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs,
                             const std::vector<std::vector<Real>>& weights) {
    if (static_cast<int>(weights.size()) != ram.num_outputs())
        throw DimensionError("ram_fuse_fixed", {"levels"}, "one weight vector per output level required");
    Pyramid<Real> outputs;
    for (int i = 0; i < ram.num_outputs(); ++i) {
        Pyramid<Real> sampled = sample_to_level(b, ram, inputs, i);
        if (weights[i].size() != sampled.size())
            throw DimensionError("ram_fuse_fixed", {"length"}, "one weight per input level required");
        Var<Real> y = scale(sampled[0], weights[i][0]);
        for (std::size_t h = 1; h < sampled.size(); ++h) y = add(y, scale(sampled[h], weights[i][h]));
        outputs.push_back(y);
    }
    return outputs;
}

void write_attention_dump(std::ostream& os, int stage, const AttentionReport& report) {
    const auto old_precision = os.precision(9);
    for (const auto& lvl : report.levels)
        for (std::size_t h = 0; h < lvl.weights.size(); ++h)
            os << stage << ' ' << lvl.level + 1 << ' ' << h + 1 << ' ' << lvl.scalars[h] << ' ' << lvl.softmax[h]
               << ' ' << lvl.weights[h] << '\n';
    os.precision(old_precision);
}

template <typename Real>
std::size_t attention_param_count(const ParameterSet<Real>& params, const RamParams& ram) {
    std::size_t n = 0;
    for (const auto& out : ram.outputs) {
        for (const auto& edge : out.edges)
            if (edge.aggregate) {
                n += params[edge.aggregate->weight].numel();
                if (edge.aggregate->bias) n += params[*edge.aggregate->bias].numel();
            }
        if (out.omega) n += params[*out.omega].numel();
        if (out.beta) n += params[*out.beta].numel();
    }
    return n;
}

#define RAPOSE_INSTANTIATE_RAM(Real)                                                                        \
    template RamParams make_ram(ParameterSet<Real>&, Initializer&, const std::string&, int, int, int, bool); \
    template void validate_pyramid(const Pyramid<Real>&, int);                                             \
    template Pyramid<Real> sample_to_level(const Binding<Real>&, const RamParams&, const Pyramid<Real>&, int); \
    template Var<Real> ram_scalars(const Binding<Real>&, const RamParams&, const Pyramid<Real>&, int);       \
    template Var<Real> ram_weights(Var<Real>, Var<Real>, Var<Real>);                                       \
    template std::vector<Real> ram_weights(std::span<const Real>, std::span<const Real>, std::span<const Real>); \
    template RamResult<Real> ram_fuse(const Binding<Real>&, const RamParams&, const Pyramid<Real>&);         \
    template RamResult<Real> ram_fuse_uniform(const Binding<Real>&, const RamParams&, const Pyramid<Real>&); \
    template Pyramid<Real> ram_fuse_fixed(const Binding<Real>&, const RamParams&, const Pyramid<Real>&,      \
                                          const std::vector<std::vector<Real>>&);                          \
    template std::size_t attention_param_count(const ParameterSet<Real>&, const RamParams&);

RAPOSE_INSTANTIATE_RAM(float)
RAPOSE_INSTANTIATE_RAM(double)

#undef RAPOSE_INSTANTIATE_RAM

}  // namespace rapose
