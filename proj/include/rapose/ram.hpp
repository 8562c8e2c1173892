#pragma once

// Resolution-wise attention fusion.
//
// A module takes M pyramid levels and produces N levels. For every output
// level i each input X_h is first brought to level i by a sampler T_h^i,
// pooled to one scalar E_h^i, and the M scalars become weights
//
//     W_h^i = softmax(E^i)_h * omega_h^i + beta_h^i
//
// which scale the sampled maps before they are summed into Y_i. Weights are
// not confined to (0, 1). Levels are 0-based here: level 0 is the highest
// resolution, level r has 2^r times the base channel count and 1/2^r the
// spatial extent.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rapose/params.hpp"

namespace rapose {

template <typename Real>
using Pyramid = std::vector<Var<Real>>;

enum class SamplerKind { identity, down, up };

/// T_h^i. Downsampling stacks one stride-2 3x3 conv per level of distance,
/// doubling channels each step (ReLU between steps, none after the last).
/// Upsampling is a bilinear resize followed by a 1x1 channel-matching conv.
struct SamplerSpec {
    int from_level = 0;
    int to_level = 0;
    SamplerKind kind = SamplerKind::identity;
    std::vector<ConvLayer> steps;
};

struct RamEdge {
    SamplerSpec sampler;
    std::optional<ConvLayer> aggregate;  // 1x1 conv, level-i channels -> 1
};

struct RamOutput {
    int level = 0;
    std::vector<RamEdge> edges;  // one per input level
    std::optional<ParamId> omega;  // (1, M, 1, 1)
    std::optional<ParamId> beta;   // (1, M, 1, 1)
};

struct RamParams {
    int base_channels = 0;
    int num_inputs = 0;
    bool attention = true;
    std::vector<RamOutput> outputs;

    int num_outputs() const { return static_cast<int>(outputs.size()); }
};

/// Registers parameters for an M -> N module. With `attention` false only the
/// samplers are created (plain-sum fusion).
template <typename Real>
RamParams make_ram(ParameterSet<Real>& params, Initializer& init, const std::string& prefix,
                   int base_channels, int num_inputs, int num_outputs, bool attention);

struct RamLevelReport {
    int level = 0;
    std::vector<double> scalars;   // E
    std::vector<double> softmax;   // softmax(E)
    std::vector<double> weights;   // W
};

struct AttentionReport {
    std::vector<RamLevelReport> levels;
};

template <typename Real>
struct RamResult {
    Pyramid<Real> outputs;
    AttentionReport report;
};

/// Checks channel doubling, exact spatial halving and a shared batch size.
void validate_pyramid(std::span<const Shape> levels, int base_channels);

template <typename Real>
void validate_pyramid(const Pyramid<Real>& levels, int base_channels);

/// Shape expected at `level` for a module whose level-0 input has `level0`.
Shape level_shape(const Shape& level0, int base_channels, int level);

/// T_h^i(X_h) for every input h, in input order.
template <typename Real>
Pyramid<Real> sample_to_level(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs,
                              int out_index);

/// E^i as a (1, M, 1, 1) value: Conv1x1(GlobalPool(T_h^i(X_h))) averaged over the batch.
template <typename Real>
Var<Real> ram_scalars(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& sampled,
                      int out_index);

/// Softmax over E followed by the per-edge affine map.
template <typename Real>
Var<Real> ram_weights(Var<Real> scalars, Var<Real> omega, Var<Real> beta);

template <typename Real>
std::vector<Real> ram_weights(std::span<const Real> scalars, std::span<const Real> omega,
                              std::span<const Real> beta);

template <typename Real>
RamResult<Real> ram_fuse(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs);

/// Fusion with every W forced to 1.
template <typename Real>
RamResult<Real> ram_fuse_uniform(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs);

/// Fusion with externally supplied weights[i][h]; skips the scalar path.
template <typename Real>
Pyramid<Real> ram_fuse_fixed(const Binding<Real>& b, const RamParams& ram, const Pyramid<Real>& inputs,
                             const std::vector<std::vector<Real>>& weights);

/// One line per (i, h) edge: `stage level_i level_h E softmax W`, 1-based levels.
void write_attention_dump(std::ostream& os, int stage, const AttentionReport& report);

/// Number of scalars that exist only for attention (aggregation convs, omega, beta).
template <typename Real>
std::size_t attention_param_count(const ParameterSet<Real>& params, const RamParams& ram);

}  // namespace rapose
