#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rapose/posenet.hpp"
#include "rapose/train.hpp"

namespace rapose {

/// Decoded joint. Coordinates are heatmap cells straight out of decode();
/// to_input_coords() maps them onto input pixels.
struct Keypoint {
    double x = 0;
    double y = 0;
    double score = 0;
};

/// Argmax (first maximum in row-major order) plus a quarter-cell shift per
/// axis toward the larger neighbour. Ties, and a missing neighbour that is
/// not exceeded by the one present, give no shift. Requires h, w >= 3.
Keypoint decode(std::span<const float> plane, int h, int w);
Keypoint decode(std::span<const double> plane, int h, int w);

/// decode() on every (sample, channel) plane; result is [n][k].
template <typename Real>
std::vector<std::vector<Keypoint>> decode_all(const Tensor<Real>& heatmaps);

Keypoint to_input_coords(const Keypoint& k, int stride = kHeatmapStride);

/// Mirror horizontally and exchange paired channels.
template <typename Real>
Tensor<Real> unflip(const Tensor<Real>& heatmaps, std::span<const std::pair<int, int>> flip_pairs);

template <typename Real>
using HeatmapFn = std::function<Tensor<Real>(const Tensor<Real>& images)>;

/// (forward(x) + unflip(forward(hflip(x)))) / 2.
template <typename Real>
Tensor<Real> flip_average(const HeatmapFn<Real>& forward, const Tensor<Real>& images,
                          std::span<const std::pair<int, int>> flip_pairs);
template <typename Real>
Tensor<Real> flip_average(const PoseNet<Real>& model, const Tensor<Real>& images,
                          std::span<const std::pair<int, int>> flip_pairs);

// --- ground truth and similarity ---------------------------------------------

struct LabeledKeypoint {
    double x = 0;
    double y = 0;
    int v = 0;  // 0 unlabeled, 1 labeled but occluded, 2 visible
};

struct Annotation {
    std::int64_t image_id = 0;
    std::vector<LabeledKeypoint> keypoints;
    double area = 0;
    int labeled() const;
};

struct AnnotationSet {
    std::vector<std::int64_t> image_ids;  // from `images`, or from the annotations when absent
    std::vector<Annotation> annotations;
};

/// COCO per-joint constants k_i = 2 sigma_i in COCO joint order.
std::vector<double> coco_keypoint_constants();
/// Reads `name value` lines ('#' starts a comment).
std::vector<double> load_keypoint_constants(const std::string& path);

std::vector<double> default_ap_thresholds();

struct OksConfig {
    std::vector<double> k;
    std::vector<double> thresholds = default_ap_thresholds();

    std::vector<std::string> violations() const;
    void validate() const;
};

/// Mean of exp(-d^2 / (2 s^2 k^2)) over labeled joints; d and s in input pixels.
double oks(std::span<const Keypoint> pred, const Annotation& gt, std::span<const double> k);

struct PosePrediction {
    std::int64_t image_id = 0;
    std::vector<Keypoint> keypoints;  // input pixels
    double score = 0;
};

struct ApResult {
    std::vector<double> thresholds;
    std::vector<double> ap;
    double mean_ap = 0;
};

/// Greedy score-ordered matching to the best unmatched ground truth of the same
/// image, then 101-point interpolated precision over recall.
ApResult average_precision(std::span<const PosePrediction> predictions, const AnnotationSet& annotations,
                           const OksConfig& cfg);

void write_ap_table(std::ostream& os, const ApResult& r);

// --- documents ---------------------------------------------------------------

AnnotationSet parse_annotations(const std::string& document);
std::string annotations_to_json(const AnnotationSet& set);

/// Same container as the annotations; keypoint triples are (x, y, score).
std::string predictions_to_json(std::span<const PosePrediction> predictions);
std::vector<PosePrediction> parse_predictions(const std::string& document);

// --- convenience ---------------------------------------------------------------

/// Image id i for sample i; visible joints get v = 2, the rest v = 0.
AnnotationSet annotations_from_dataset(std::span<const SyntheticSample> dataset);

/// Heatmaps (flip-averaged when `flip`, one image per forward), decoded and mapped to input pixels.
/// Prediction score is the mean joint score.
std::vector<PosePrediction> predict_poses(const PoseNet<float>& model, std::span<const SyntheticSample> dataset,
                                          bool flip, std::span<const std::pair<int, int>> flip_pairs);

}  // namespace rapose
