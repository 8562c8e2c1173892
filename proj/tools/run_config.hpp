#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rapose/posenet.hpp"
#include "rapose/train.hpp"

namespace rapose::cli {

/// Everything one command needs, read from `key = value` lines.
struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    std::string flip_pairs = "auto";  // "auto" or "a-b,c-d"; "none" for no pairs

    int dataset_size = 16;
    std::uint64_t dataset_seed = 1;
    std::string dataset_cache;  // optional container path

    bool eval_flip = true;
    std::string annotations;            // optional annotation document; else derived from the dataset
    std::string oks_constants = "auto";  // "auto", "coco" or a path
    std::string predictions_out;

    std::uint64_t seed = 0;
    std::string out_dir = "run";
    bool dump_attention = false;

    /// Throws FieldError on an unknown key and ValueError on a bad value.
    void set(const std::string& key, const std::string& value);

    std::vector<std::pair<std::string, std::string>> to_key_values() const;
    std::string to_text() const;

    /// Flip pairs after resolving "auto" against the keypoint count.
    std::vector<std::pair<int, int>> resolved_flip_pairs() const;

    /// TrainConfig with the run seed and resolved flip pairs filled in.
    TrainConfig effective_train() const;

    std::vector<std::string> violations() const;
    void validate() const;

    bool operator==(const RunConfig& other) const;
};

/// Parses a config document. '#' starts a comment; blank lines are skipped.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

/// Splits "key=value"; throws ValueError without '='.
std::pair<std::string, std::string> split_override(const std::string& text);

}  // namespace rapose::cli
