#include "run_config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace rapose::cli {
namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || value.empty())
        throw ValueError("'" + key + "' expects a number, got '" + value + "'");
    return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "off" || value == "no") return false;
    throw ValueError("'" + key + "' expects true or false, got '" + value + "'");
}

std::vector<std::pair<int, int>> parse_pairs(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    if (text == "none") return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) throw ValueError("flip pair '" + item + "' is not of the form a-b");
        out.emplace_back(parse_number<int>("flip_pairs", trim(item.substr(0, dash))),
                         parse_number<int>("flip_pairs", trim(item.substr(dash + 1))));
    }
    return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    // Network keys share the checkpoint's own parser.
    if (network.apply_key_values({{key, value}}).empty()) return;
    if (key == "lr0") train.lr0 = parse_number<double>(key, value);
    else if (key == "sgdr_t0") train.sgdr_t0 = parse_number<int>(key, value);
    else if (key == "sgdr_tmul") train.sgdr_tmul = parse_number<int>(key, value);
    else if (key == "eta_min") train.eta_min = parse_number<double>(key, value);
    else if (key == "batch_size") train.batch_size = parse_number<int>(key, value);
    else if (key == "epochs") train.epochs = parse_number<int>(key, value);
    else if (key == "sigma") train.sigma = parse_number<double>(key, value);
    else if (key == "cutout") train.cutout = parse_flag(key, value);
    else if (key == "cutout_holes") train.cutout_holes = parse_number<int>(key, value);
    else if (key == "cutout_size") train.cutout_size = parse_number<int>(key, value);
    else if (key == "flip") train.flip = parse_flag(key, value);
    else if (key == "scale_jitter") train.scale_jitter = parse_number<double>(key, value);
    else if (key == "rotation_max") train.rotation_max = parse_number<double>(key, value);
    else if (key == "prefetch") train.prefetch = parse_flag(key, value);
    else if (key == "flip_pairs") {
        if (value != "auto") parse_pairs(value);
        flip_pairs = value;
    } else if (key == "dataset_size") dataset_size = parse_number<int>(key, value);
    else if (key == "dataset_seed") dataset_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "dataset_cache") dataset_cache = value;
    else if (key == "eval_flip") eval_flip = parse_flag(key, value);
    else if (key == "annotations") annotations = value;
    else if (key == "oks_constants") oks_constants = value;
    else if (key == "predictions_out") predictions_out = value;
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "out") out_dir = value;
    else if (key == "dump_attention") dump_attention = parse_flag(key, value);
    else throw FieldError(key, "unknown configuration key");
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_key_values() const {
    auto kv = network.to_key_values();
    const std::vector<std::pair<std::string, std::string>> rest = {
        {"lr0", fmt(train.lr0)},
        {"sgdr_t0", std::to_string(train.sgdr_t0)},
        {"sgdr_tmul", std::to_string(train.sgdr_tmul)},
        {"eta_min", fmt(train.eta_min)},
        {"batch_size", std::to_string(train.batch_size)},
        {"epochs", std::to_string(train.epochs)},
        {"sigma", fmt(train.sigma)},
        {"cutout", fmt(train.cutout)},
        {"cutout_holes", std::to_string(train.cutout_holes)},
        {"cutout_size", std::to_string(train.cutout_size)},
        {"flip", fmt(train.flip)},
        {"scale_jitter", fmt(train.scale_jitter)},
        {"rotation_max", fmt(train.rotation_max)},
        {"prefetch", fmt(train.prefetch)},
        {"flip_pairs", flip_pairs},
        {"dataset_size", std::to_string(dataset_size)},
        {"dataset_seed", std::to_string(dataset_seed)},
        {"dataset_cache", dataset_cache},
        {"eval_flip", fmt(eval_flip)},
        {"annotations", annotations},
        {"oks_constants", oks_constants},
        {"predictions_out", predictions_out},
        {"seed", std::to_string(seed)},
        {"out", out_dir},
        {"dump_attention", fmt(dump_attention)},
    };
    kv.insert(kv.end(), rest.begin(), rest.end());
    return kv;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : to_key_values()) out += k + " = " + v + "\n";
    return out;
}

std::vector<std::pair<int, int>> RunConfig::resolved_flip_pairs() const {
    if (flip_pairs == "auto") return synthetic_flip_pairs(network.num_keypoints);
    return parse_pairs(flip_pairs);
}

TrainConfig RunConfig::effective_train() const {
    TrainConfig t = train;
    t.seed = seed;
    t.flip_pairs = resolved_flip_pairs();
    return t;
}

std::vector<std::string> RunConfig::violations() const {
    auto v = network.violations();
    for (auto& s : train.violations()) v.push_back(std::move(s));
    if (dataset_size < 1) v.push_back("dataset_size must be >= 1");
    if (network.num_keypoints > kMaxSyntheticJoints)
        v.push_back("num_keypoints must be <= " + std::to_string(kMaxSyntheticJoints) + " for the synthetic figure");
    try {
        if (network.num_keypoints >= 1) flip_permutation(network.num_keypoints, resolved_flip_pairs());
    } catch (const std::exception& e) {
        v.push_back(std::string("flip_pairs: ") + e.what());
    }
    if (out_dir.empty()) v.push_back("out must not be empty");
    return v;
}

void RunConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
}

bool RunConfig::operator==(const RunConfig& other) const { return to_key_values() == other.to_key_values(); }

RunConfig parse_run_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t pos = 0;
    while (std::getline(in, line)) {
        const std::size_t here = pos;
        pos += line.size() + 1;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(here, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ParseError(here, "missing key before '='");
        base.set(key, trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), std::move(base));
}

std::pair<std::string, std::string> split_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw ValueError("override '" + text + "' is not key=value");
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

}  // namespace rapose::cli
