#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rapose/gpr.hpp"
#include "rapose/ram.hpp"

namespace rapose {

enum class HeadKind { gpr, rescale_sum };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

/// Network shape. Level r carries width * 2^r channels; stage s (0-based)
/// runs on levels 0..s. The stem divides the input resolution by 4.
struct NetworkConfig {
    int width = 32;
    int num_stages = 4;
    int blocks_per_stage = 2;
    int input_h = 256;
    int input_w = 192;
    int num_keypoints = 17;
    bool attention_enabled = true;
    HeadKind head = HeadKind::gpr;

    int channels(int level) const { return width << level; }
    int heatmap_h() const { return input_h / 4; }
    int heatmap_w() const { return input_w / 4; }

    /// Every violated invariant, empty when the config is usable.
    std::vector<std::string> violations() const;
    void validate() const;

    /// Stable `key=value` lines, one per field.
    std::vector<std::pair<std::string, std::string>> to_key_values() const;
    /// Applies recognised keys and returns the ones it did not recognise.
    std::vector<std::string> apply_key_values(const std::vector<std::pair<std::string, std::string>>& kv);

    bool operator==(const NetworkConfig&) const = default;
};

struct ResidualBlock {
    ConvLayer conv1;
    ConvLayer conv2;
};

struct StageParams {
    int index = 0;
    std::vector<std::vector<ResidualBlock>> blocks;  // [level][block]
    RamParams ram;
};

template <typename Real>
struct ForwardResult {
    Var<Real> heatmap;
    std::vector<AttentionReport> attention;  // one per stage
};

template <typename Real>
Var<Real> residual_block(const Binding<Real>& b, const ResidualBlock& block, Var<Real> x);

struct LayerFlops {
    OpKind kind;
    Shape output;
    std::int64_t flops;
};

/// Stem, stage-wise subnet growth with attention fusion between stages, and
/// a pyramid refinement head.
template <typename Real>
class PoseNet {
public:
    /// Kaiming-uniform init, except that each block's conv2 starts at zero and
    /// head.final.weight is scaled by 0.01.
    static PoseNet build(const NetworkConfig& config, std::uint64_t seed);

    const NetworkConfig& config() const noexcept { return config_; }
    const ParameterSet<Real>& params() const noexcept { return params_; }
    ParameterSet<Real>& params() noexcept { return params_; }

    const ConvLayer& stem(int i) const { return stem_.at(i); }
    const std::vector<StageParams>& stages() const noexcept { return stages_; }
    const std::variant<GprParams, RescaleSumParams>& head() const noexcept { return head_; }

    /// Records the pass on `b.tape`. `images` is (n, 3, H, W).
    ForwardResult<Real> forward(const Binding<Real>& b, Var<Real> images) const;

    /// Inference without gradients.
    Tensor<Real> predict(const Tensor<Real>& images, std::vector<AttentionReport>* attention = nullptr) const;

    std::size_t count_params() const { return params_.count(); }

    /// Same structure with parameters converted to another precision.
    template <typename Other>
    PoseNet<Other> cast() const {
        PoseNet<Other> out = PoseNet<Other>::build(config_, 0);
        out.params() = params_.template cast<Other>();
        return out;
    }

private:
    NetworkConfig config_;
    ParameterSet<Real> params_;
    std::vector<ConvLayer> stem_;
    std::vector<StageParams> stages_;
    std::variant<GprParams, RescaleSumParams> head_;
};

/// Per-layer conv/deconv cost of one forward pass at batch 1: two FLOPs per
/// multiply-accumulate plus one add per output element for biased layers.
template <typename Real>
std::vector<LayerFlops> layer_flops(const PoseNet<Real>& model);

template <typename Real>
std::int64_t count_flops(const PoseNet<Real>& model);

// ---------------------------------------------------------------------------
// Binary container: magic "RGPR", u32 version, u32-length-prefixed UTF-8
// `key=value` text, u32 record count, then records of (u32-prefixed name,
// u32 rank, rank x u32 dims, little-endian f32 payload).

struct ContainerRecord {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

struct Container {
    std::string text;
    std::vector<ContainerRecord> records;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(std::ostream& os, const Container& c);
Container read_container(std::istream& is);

std::string key_values_to_text(const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> text_to_key_values(const std::string& text);

template <typename Real>
void save_checkpoint(std::ostream& os, const PoseNet<Real>& model);
template <typename Real>
void save_checkpoint(const std::string& path, const PoseNet<Real>& model);

PoseNet<float> load_checkpoint(std::istream& is);
PoseNet<float> load_checkpoint(const std::string& path);

}  // namespace rapose
