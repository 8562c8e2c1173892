#include "rapose/gpr.hpp"

namespace rapose {

template <typename Real>
GprParams make_gpr(ParameterSet<Real>& params, Initializer& init, const std::string& prefix, int base_channels,
                   int num_levels, int keypoints) {
    if (base_channels < 1 || num_levels < 1 || keypoints < 1)
        throw ValueError("make_gpr: channel, level and keypoint counts must be positive");
    GprParams gpr;
    gpr.base_channels = base_channels;
    gpr.num_levels = num_levels;
    gpr.keypoints = keypoints;
    for (int k = 1; k < num_levels; ++k) {
        const int c_k = base_channels << k;
        const int c_f = base_channels << (k - 1);
        const std::string name = prefix + ".step" + std::to_string(k);
        GprStep step;
        step.level = k;
        step.deconv = make_deconv(params, init, name + ".deconv", c_k, c_f, 4, 2, 1);
        step.project = make_conv(params, init, name + ".project", c_k, c_f, 1, 1, 0);
        step.merge = make_conv(params, init, name + ".merge", 2 * c_f, c_f, 3, 1, 1);
        gpr.steps.push_back(step);
    }
    gpr.final = make_conv(params, init, prefix + ".final", base_channels, keypoints, 1, 1, 0);
    return gpr;
}

template <typename Real>
Var<Real> gpr_step(const Binding<Real>& b, const GprStep& step, Var<Real> coarse, Var<Real> fine) {
    const Shape cs = coarse.shape();
    const Shape fs = fine.shape();
    std::vector<std::string> axes;
    if (cs.n != fs.n) axes.emplace_back("batch");
    if (cs.h * 2 != fs.h) axes.emplace_back("height");
    if (cs.w * 2 != fs.w) axes.emplace_back("width");
    if (!axes.empty())
        throw DimensionError("gpr_step", axes, "coarse " + cs.str() + " must be exactly half of fine " + fs.str());
    Var<Real> up = add(apply(b, step.project, bilinear_resize(coarse, fs.h, fs.w)), apply(b, step.deconv, coarse));
    return relu(apply(b, step.merge, concat_channels(up, fine)));
}

template <typename Real>
Var<Real> gpr_head(const Binding<Real>& b, const GprParams& gpr, const Pyramid<Real>& pyramid) {
    if (static_cast<int>(pyramid.size()) != gpr.num_levels)
        throw DimensionError("gpr_head", {"levels"},
                             "expected " + std::to_string(gpr.num_levels) + " levels, got " +
                                 std::to_string(pyramid.size()));
    validate_pyramid(pyramid, gpr.base_channels);
    Var<Real> x = pyramid.back();
    for (int k = gpr.num_levels - 1; k >= 1; --k) x = gpr_step(b, gpr.steps[k - 1], x, pyramid[k - 1]);
    return apply(b, gpr.final, x);
}

template <typename Real>
RescaleSumParams make_rescale_sum(ParameterSet<Real>& params, Initializer& init, const std::string& prefix,
                                  int base_channels, int num_levels, int keypoints) {
    if (base_channels < 1 || num_levels < 1 || keypoints < 1)
        throw ValueError("make_rescale_sum: channel, level and keypoint counts must be positive");
    RescaleSumParams head;
    head.base_channels = base_channels;
    head.num_levels = num_levels;
    head.keypoints = keypoints;
    for (int k = 1; k < num_levels; ++k)
        head.project.push_back(make_conv(params, init, prefix + ".project" + std::to_string(k),
                                         base_channels << k, base_channels, 1, 1, 0));
    head.final = make_conv(params, init, prefix + ".final", base_channels, keypoints, 1, 1, 0);
    return head;
}

template <typename Real>
Var<Real> rescale_sum_head(const Binding<Real>& b, const RescaleSumParams& head, const Pyramid<Real>& pyramid) {
    if (static_cast<int>(pyramid.size()) != head.num_levels)
        throw DimensionError("rescale_sum_head", {"levels"},
                             "expected " + std::to_string(head.num_levels) + " levels, got " +
                                 std::to_string(pyramid.size()));
    validate_pyramid(pyramid, head.base_channels);
    const Shape top = pyramid.front().shape();
    Var<Real> acc = pyramid.front();
    for (int k = 1; k < head.num_levels; ++k)
        acc = add(acc, apply(b, head.project[k - 1], bilinear_resize(pyramid[k], top.h, top.w)));
    return apply(b, head.final, acc);
}

#define RAPOSE_INSTANTIATE_GPR(Real)                                                                            \
    template GprParams make_gpr(ParameterSet<Real>&, Initializer&, const std::string&, int, int, int);           \
    template Var<Real> gpr_step(const Binding<Real>&, const GprStep&, Var<Real>, Var<Real>);                     \
    template Var<Real> gpr_head(const Binding<Real>&, const GprParams&, const Pyramid<Real>&);                   \
    template RescaleSumParams make_rescale_sum(ParameterSet<Real>&, Initializer&, const std::string&, int, int, int); \
    template Var<Real> rescale_sum_head(const Binding<Real>&, const RescaleSumParams&, const Pyramid<Real>&);

RAPOSE_INSTANTIATE_GPR(float)
RAPOSE_INSTANTIATE_GPR(double)

#undef RAPOSE_INSTANTIATE_GPR

}  // namespace rapose
