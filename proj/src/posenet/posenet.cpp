#include "rapose/posenet.hpp"

#include <charconv>

namespace rapose {

std::string to_string(HeadKind kind) { return kind == HeadKind::gpr ? "gpr" : "rescale_sum"; }

HeadKind parse_head_kind(const std::string& text) {
    if (text == "gpr") return HeadKind::gpr;
    if (text == "rescale_sum") return HeadKind::rescale_sum;
    throw ValueError("unknown head kind '" + text + "' (expected gpr or rescale_sum)");
}

std::vector<std::string> NetworkConfig::violations() const {
    std::vector<std::string> v;
    if (width < 1) v.push_back("width must be >= 1 (got " + std::to_string(width) + ")");
    if (num_stages < 1) v.push_back("num_stages must be >= 1 (got " + std::to_string(num_stages) + ")");
    if (num_stages > 8) v.push_back("num_stages must be <= 8 (got " + std::to_string(num_stages) + ")");
    if (blocks_per_stage < 0) v.push_back("blocks_per_stage must be >= 0 (got " + std::to_string(blocks_per_stage) + ")");
    if (num_keypoints < 1) v.push_back("num_keypoints must be >= 1 (got " + std::to_string(num_keypoints) + ")");
    if (input_h < 1 || input_w < 1) {
        v.push_back("input size must be positive (got " + std::to_string(input_h) + "x" + std::to_string(input_w) + ")");
        return v;
    }
    if (3 * input_h != 4 * input_w)
        v.push_back("input aspect must be H:W = 4:3 (got " + std::to_string(input_h) + "x" + std::to_string(input_w) + ")");
    if (num_stages >= 1 && num_stages <= 8) {
        const int div = 4 << (num_stages - 1);
        if (input_h % div != 0)
            v.push_back("input_h " + std::to_string(input_h) + " not divisible by " + std::to_string(div) +
                        " = 4 * 2^(num_stages - 1)");
        if (input_w % div != 0)
            v.push_back("input_w " + std::to_string(input_w) + " not divisible by " + std::to_string(div) +
                        " = 4 * 2^(num_stages - 1)");
    }
    return v;
}

void NetworkConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
}

std::vector<std::pair<std::string, std::string>> NetworkConfig::to_key_values() const {
    return {
        {"width", std::to_string(width)},
        {"num_stages", std::to_string(num_stages)},
        {"blocks_per_stage", std::to_string(blocks_per_stage)},
        {"input_h", std::to_string(input_h)},
        {"input_w", std::to_string(input_w)},
        {"num_keypoints", std::to_string(num_keypoints)},
        {"attention", attention_enabled ? "true" : "false"},
        {"head", to_string(head)},
    };
}

namespace {

int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ValueError("'" + key + "' expects an integer, got '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ValueError("'" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace

std::vector<std::string> NetworkConfig::apply_key_values(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::vector<std::string> unknown;
    for (const auto& [k, val] : kv) {
        if (k == "width") width = parse_int(k, val);
        else if (k == "num_stages") num_stages = parse_int(k, val);
        else if (k == "blocks_per_stage") blocks_per_stage = parse_int(k, val);
        else if (k == "input_h") input_h = parse_int(k, val);
        else if (k == "input_w") input_w = parse_int(k, val);
        else if (k == "num_keypoints") num_keypoints = parse_int(k, val);
        else if (k == "attention") attention_enabled = parse_bool(k, val);
        else if (k == "head") head = parse_head_kind(val);
        else unknown.push_back(k);
    }
    return unknown;
}

template <typename Real>
Var<Real> residual_block(const Binding<Real>& b, const ResidualBlock& block, Var<Real> x) {
    Var<Real> y = relu(apply(b, block.conv1, x));
    y = apply(b, block.conv2, y);
    return relu(add(y, x));
}

template <typename Real>
PoseNet<Real> PoseNet<Real>::build(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    PoseNet net;
    net.config_ = config;
    Initializer init(seed);
    auto& p = net.params_;
    const int c0 = config.width;
    net.stem_.push_back(make_conv(p, init, "stem.conv1", 3, c0, 3, 2, 1));
    net.stem_.push_back(make_conv(p, init, "stem.conv2", c0, c0, 3, 2, 1));
    for (int s = 0; s < config.num_stages; ++s) {
        StageParams stage;
        stage.index = s;
        const std::string sname = "stage" + std::to_string(s + 1);
        for (int level = 0; level <= s; ++level) {
            std::vector<ResidualBlock> blocks;
            const int c = config.channels(level);
            for (int k = 0; k < config.blocks_per_stage; ++k) {
                const std::string bname = sname + ".level" + std::to_string(level) + ".block" + std::to_string(k);
                blocks.push_back(ResidualBlock{make_conv(p, init, bname + ".conv1", c, c, 3, 1, 1),
                                               make_conv(p, init, bname + ".conv2", c, c, 3, 1, 1)});
            }
            stage.blocks.push_back(std::move(blocks));
        }
        const int inputs = s + 1;
        const int outputs = s + 1 < config.num_stages ? s + 2 : s + 1;
        stage.ram = make_ram(p, init, sname + ".ram", c0, inputs, outputs, config.attention_enabled);
        net.stages_.push_back(std::move(stage));
    }
    if (config.head == HeadKind::gpr)
        net.head_ = make_gpr(p, init, "head", c0, config.num_stages, config.num_keypoints);
    else
        net.head_ = make_rescale_sum(p, init, "head", c0, config.num_stages, config.num_keypoints);
    // Blocks start as identities and heatmaps start near zero; without this
    // the untrained net's output swamps the Gaussian targets.
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::string& n = p.name(i);
        Real f = 1;
        if (n.starts_with("stage") && n.ends_with(".conv2.weight")) f = 0;
        else if (n == "head.final.weight") f = Real(0.01);
        if (f != 1)
            for (auto& v : p.at(i).data()) v *= f;
    }
    return net;
}

template <typename Real>
ForwardResult<Real> PoseNet<Real>::forward(const Binding<Real>& b, Var<Real> images) const {
    const Shape s = images.shape();
    std::vector<std::string> axes;
    if (s.c != 3) axes.emplace_back("channels");
    if (s.h != config_.input_h) axes.emplace_back("height");
    if (s.w != config_.input_w) axes.emplace_back("width");
    if (!axes.empty())
        throw DimensionError("PoseNet::forward", axes,
                             "expected (n,3," + std::to_string(config_.input_h) + "," +
                                 std::to_string(config_.input_w) + "), got " + s.str());
    ForwardResult<Real> result;
    // Images arrive in [0, 1]; the stem sees them centred on [-1, 1].
    Var<Real> x = add(scale(images, Real(2)), images.tape->constant(Tensor<Real>(s, Real(-1))));
    x = relu(apply(b, stem_[0], x));
    x = relu(apply(b, stem_[1], x));
    Pyramid<Real> pyramid{x};
    for (const auto& stage : stages_) {
        for (std::size_t level = 0; level < stage.blocks.size(); ++level)
            for (const auto& block : stage.blocks[level]) pyramid[level] = residual_block(b, block, pyramid[level]);
        RamResult<Real> fused = ram_fuse(b, stage.ram, pyramid);
        pyramid = std::move(fused.outputs);
        result.attention.push_back(std::move(fused.report));
    }
    result.heatmap = std::visit(
        [&](const auto& head) {
            using H = std::decay_t<decltype(head)>;
            if constexpr (std::is_same_v<H, GprParams>) return gpr_head(b, head, pyramid);
            else return rescale_sum_head(b, head, pyramid);
        },
        head_);
    return result;
}

template <typename Real>
Tensor<Real> PoseNet<Real>::predict(const Tensor<Real>& images, std::vector<AttentionReport>* attention) const {
    Tape<Real> tape;
    Binding<Real> b = bind(tape, params_, false);
    auto result = forward(b, tape.constant(images));
    if (attention) *attention = std::move(result.attention);
    return result.heatmap.value();
}

template <typename Real>
std::vector<LayerFlops> layer_flops(const PoseNet<Real>& model) {
    const auto& cfg = model.config();
    Tape<Real> tape;
    Binding<Real> b = bind(tape, model.params(), false);
    model.forward(b, tape.constant(Tensor<Real>(Shape{1, 3, cfg.input_h, cfg.input_w})));
    std::vector<LayerFlops> layers;
    for (const auto& node : tape.nodes())
        if (node.kind == OpKind::conv2d || node.kind == OpKind::deconv2d)
            layers.push_back(LayerFlops{node.kind, tape.value(Var<Real>{&tape, node.output}).shape(), node.flops});
    return layers;
}

template <typename Real>
std::int64_t count_flops(const PoseNet<Real>& model) {
    std::int64_t total = 0;
    for (const auto& l : layer_flops(model)) total += l.flops;
    return total;
}

template class PoseNet<float>;
template class PoseNet<double>;
template Var<float> residual_block(const Binding<float>&, const ResidualBlock&, Var<float>);
template Var<double> residual_block(const Binding<double>&, const ResidualBlock&, Var<double>);
template std::vector<LayerFlops> layer_flops(const PoseNet<float>&);
template std::vector<LayerFlops> layer_flops(const PoseNet<double>&);
template std::int64_t count_flops(const PoseNet<float>&);
template std::int64_t count_flops(const PoseNet<double>&);

}  // namespace rapose
