#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rapose/posenet.hpp"

namespace rapose {

/// A labelled joint in input-image pixels (pixel centres at integer coordinates).
struct KeypointLabel {
    double x = 0;
    double y = 0;
    bool visible = false;
};

/// Rendered stick figure. `image` is (1, 3, H, W) with values in [0, 1].
struct SyntheticSample {
    Tensor<float> image;
    std::vector<KeypointLabel> keypoints;
    double area = 0;  // object scale s^2 in input px^2
    std::uint64_t seed = 0;
};

// --- synthetic skeleton ------------------------------------------------------

/// Joint catalogue of the synthetic figure. The first K entries form a
/// K-keypoint dataset; left/right partners are adjacent.
struct JointInfo {
    const char* name;
    double oks_constant;  // k_i = 2 * sigma_i of the matching COCO joint
    int mirror;           // index of the left/right partner (self if unpaired)
};

std::span<const JointInfo> synthetic_joints();
inline constexpr int kMaxSyntheticJoints = 17;

std::vector<std::pair<int, int>> synthetic_flip_pairs(int num_keypoints);
std::vector<double> synthetic_oks_constants(int num_keypoints);

SyntheticSample render_synthetic(int height, int width, int num_keypoints, std::uint64_t seed);
std::vector<SyntheticSample> make_synthetic_dataset(int count, int height, int width, int num_keypoints,
                                                    std::uint64_t seed);

/// Dataset cache in the checkpoint container format.
void save_dataset(const std::string& path, std::span<const SyntheticSample> samples);
std::vector<SyntheticSample> load_dataset(const std::string& path);

// --- heatmap targets ----------------------------------------------------------

inline constexpr int kHeatmapStride = 4;

/// Heatmap cell j covers input pixels [4j, 4j + 3]; its centre is 4j + 1.5.
constexpr double input_to_heatmap(double v, int stride = kHeatmapStride) {
    return (v - 0.5 * (stride - 1)) / stride;
}
constexpr double heatmap_to_input(double u, int stride = kHeatmapStride) {
    return u * stride + 0.5 * (stride - 1);
}

/// (1, K, h, w) Gaussian peaks; keypoints are in heatmap coordinates and
/// pixel (i, j) is sampled at (x = j, y = i). Invisible joints give zero channels.
Tensor<float> render_target(std::span<const KeypointLabel> keypoints, int heatmap_h, int heatmap_w, double sigma);

/// render_target after mapping input-pixel labels onto the heatmap grid.
Tensor<float> render_sample_target(const SyntheticSample& sample, int heatmap_h, int heatmap_w, double sigma);

// --- schedule and configuration ---------------------------------------------

struct TrainConfig {
    double lr0 = 0.001;
    int sgdr_t0 = 16;
    int sgdr_tmul = 2;
    double eta_min = 0.0;
    int batch_size = 4;
    int epochs = 16;
    double sigma = 2.0;
    bool cutout = true;
    int cutout_holes = 1;
    int cutout_size = 0;  // 0: input height / 8
    bool flip = true;
    double scale_jitter = 0.35;
    double rotation_max = 45.0;
    std::vector<std::pair<int, int>> flip_pairs;
    std::uint64_t seed = 0;
    bool prefetch = true;  // prepare the next batch on a producer thread

    std::vector<std::string> violations() const;
    void validate() const;
};

/// Cosine annealing with warm restarts; cycle j lasts t0 * tmul^j epochs.
double sgdr_lr(double epoch, const TrainConfig& cfg);

/// Start of the cycle containing `epoch` and that cycle's length.
std::pair<double, double> sgdr_cycle(double epoch, const TrainConfig& cfg);

// --- augmentation -----------------------------------------------------------

/// Mirror horizontally and exchange left/right labels.
SyntheticSample flip_sample(const SyntheticSample& s, std::span<const std::pair<int, int>> flip_pairs);

/// Scale and rotate (degrees) about the image centre with bilinear resampling.
/// Labels follow the same map; those leaving the image become invisible.
SyntheticSample affine_sample(const SyntheticSample& s, double scale, double degrees);

/// Zero `holes` squares of side `size` in the image; labels are untouched.
SyntheticSample cutout_sample(const SyntheticSample& s, int holes, int size, std::mt19937_64& rng);

SyntheticSample augment(const SyntheticSample& s, const TrainConfig& cfg, std::mt19937_64& rng);

/// Index map of a flip-pair list; throws unless it is an involution over [0, K).
std::vector<int> flip_permutation(int num_keypoints, std::span<const std::pair<int, int>> flip_pairs);

// --- loop -----------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double loss = 0;
};

void write_epoch_log(std::ostream& os, const EpochLog& e);

struct TrainCallbacks {
    std::function<void(const EpochLog&)> on_epoch;
    /// Attention reports from the first batch of every epoch.
    std::function<void(int epoch, const std::vector<AttentionReport>&)> on_attention;
    std::function<void(int step, double loss)> on_step;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int steps = 0;
};

/// Raised when a loss or gradient stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::string parameter)
        : std::runtime_error(what), parameter_(std::move(parameter)) {}
    const std::string& parameter() const noexcept { return parameter_; }

private:
    std::string parameter_;
};

/// Plain SGD, p <- p - lr * grad, with lr from sgdr_lr at the fractional epoch.
TrainResult train_loop(PoseNet<float>& model, std::span<const SyntheticSample> dataset, const TrainConfig& cfg,
                       const TrainCallbacks& callbacks = {});

/// Mean heatmap MSE of the model over the dataset (no augmentation, one image per forward).
double evaluate_mse(const PoseNet<float>& model, std::span<const SyntheticSample> dataset, double sigma);

/// One SGD update on every parameter; exposed for tests.
void sgd_step(ParameterSet<float>& params, std::span<const Tensor<float>> grads, double lr);

}  // namespace rapose
