#pragma once

// Pyramid refinement heads.
//
// gpr_head merges the pyramid pairwise from the coarsest level upward:
//
//     X'_{k-1} = Proj(Int(X_k)) + Deconv(X_k)
//     X_{k-1}  = ReLU(Conv3x3(Concat(X'_{k-1}, X_{k-1})))
//     H        = Conv1x1(X_0)
//
// Int is a 2x bilinear resize and Proj a 1x1 conv matching channels; the 3x3
// conv restores the level's channel count after concatenation.
// rescale_sum_head is the flat alternative: resize every level to level 0,
// project, sum, regress.

#include <string>
#include <vector>

#include "rapose/ram.hpp"

namespace rapose {

struct GprStep {
    int level = 1;          // k: the coarser of the two merged levels
    ConvLayer deconv;       // C_k -> C_{k-1}, kernel 4, stride 2, pad 1
    ConvLayer project;      // C_k -> C_{k-1}, 1x1, applied after resize
    ConvLayer merge;        // 2 C_{k-1} -> C_{k-1}, 3x3
};

struct GprParams {
    int base_channels = 0;
    int num_levels = 0;
    int keypoints = 0;
    std::vector<GprStep> steps;  // steps[k - 1] merges level k into k - 1
    ConvLayer final;             // C_0 -> K, 1x1, linear
};

template <typename Real>
GprParams make_gpr(ParameterSet<Real>& params, Initializer& init, const std::string& prefix, int base_channels,
                   int num_levels, int keypoints);

template <typename Real>
Var<Real> gpr_step(const Binding<Real>& b, const GprStep& step, Var<Real> coarse, Var<Real> fine);

template <typename Real>
Var<Real> gpr_head(const Binding<Real>& b, const GprParams& gpr, const Pyramid<Real>& pyramid);

struct RescaleSumParams {
    int base_channels = 0;
    int num_levels = 0;
    int keypoints = 0;
    std::vector<ConvLayer> project;  // project[k - 1]: C_k -> C_0 for k >= 1
    ConvLayer final;
};

template <typename Real>
RescaleSumParams make_rescale_sum(ParameterSet<Real>& params, Initializer& init, const std::string& prefix,
                                  int base_channels, int num_levels, int keypoints);

template <typename Real>
Var<Real> rescale_sum_head(const Binding<Real>& b, const RescaleSumParams& head, const Pyramid<Real>& pyramid);

}  // namespace rapose
