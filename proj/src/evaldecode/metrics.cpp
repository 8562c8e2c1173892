#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "rapose/evaldecode.hpp"

namespace rapose {

int Annotation::labeled() const {
    return static_cast<int>(std::count_if(keypoints.begin(), keypoints.end(), [](const auto& k) { return k.v > 0; }));
}

std::vector<double> coco_keypoint_constants() {
    // nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles
    return {0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144,
            0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178, 0.178};
}

std::vector<double> load_keypoint_constants(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open keypoint constants '" + path + "'");
    std::vector<double> k;
    std::string line;
    std::size_t pos = 0;
    while (std::getline(in, line)) {
        const std::size_t here = pos;
        pos += line.size() + 1;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string name;
        double value = 0;
        if (!(ls >> name)) continue;
        if (!(ls >> value) || !(value > 0)) throw ParseError(here, "expected '<name> <positive constant>'");
        k.push_back(value);
    }
    return k;
}

std::vector<double> default_ap_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
    return t;
}

std::vector<std::string> OksConfig::violations() const {
    std::vector<std::string> v;
    if (k.empty()) v.emplace_back("OKS constants are empty");
    for (std::size_t i = 0; i < k.size(); ++i)
        if (!(k[i] > 0)) v.push_back("OKS constant k[" + std::to_string(i) + "] must be > 0");
    if (thresholds.empty()) v.emplace_back("no AP thresholds");
    for (double t : thresholds)
        if (!(t >= 0 && t <= 1)) v.push_back("AP threshold " + std::to_string(t) + " outside [0, 1]");
    return v;
}

void OksConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
}

double oks(std::span<const Keypoint> pred, const Annotation& gt, std::span<const double> k) {
    if (pred.size() != gt.keypoints.size() || k.size() != pred.size())
        throw DimensionError("oks", {"keypoints"},
                             std::to_string(pred.size()) + " predicted, " + std::to_string(gt.keypoints.size()) +
                                 " annotated, " + std::to_string(k.size()) + " constants");
    double total = 0;
    int n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (gt.keypoints[i].v <= 0) continue;
        const double dx = pred[i].x - gt.keypoints[i].x, dy = pred[i].y - gt.keypoints[i].y;
        total += std::exp(-(dx * dx + dy * dy) / (2 * gt.area * k[i] * k[i]));
        ++n;
    }
    return n ? total / n : 0.0;
}

namespace {

// Score descending; ties fall back to image id and then coordinates so the
// ranking does not depend on input order.
bool ranks_before(const PosePrediction& a, const PosePrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    for (std::size_t i = 0; i < std::min(a.keypoints.size(), b.keypoints.size()); ++i) {
        if (a.keypoints[i].x != b.keypoints[i].x) return a.keypoints[i].x < b.keypoints[i].x;
        if (a.keypoints[i].y != b.keypoints[i].y) return a.keypoints[i].y < b.keypoints[i].y;
    }
    return false;
}

double interpolated_ap(const std::vector<bool>& tp, int num_gt) {
    const std::size_t n = tp.size();
    std::vector<double> precision(n), recall(n);
    int hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        hits += tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(hits) / num_gt;
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), level - 1e-12);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

}  // namespace

ApResult average_precision(std::span<const PosePrediction> predictions, const AnnotationSet& annotations,
                           const OksConfig& cfg) {
    cfg.validate();
    if (annotations.annotations.empty()) throw FieldError("annotations", "empty annotation set; nothing to evaluate");
    std::map<std::int64_t, std::vector<std::size_t>> by_image;
    int num_gt = 0;
    for (std::size_t i = 0; i < annotations.annotations.size(); ++i) {
        const auto& a = annotations.annotations[i];
        if (a.keypoints.size() != cfg.k.size())
            throw DimensionError("average_precision", {"keypoints"},
                                 "annotation has " + std::to_string(a.keypoints.size()) + " keypoints, OKS config has " +
                                     std::to_string(cfg.k.size()));
        if (a.labeled() > 0) {
            by_image[a.image_id].push_back(i);
            ++num_gt;
        }
    }
    if (num_gt == 0) throw FieldError("annotations", "no annotation has a labeled keypoint");
    const std::set<std::int64_t> known(annotations.image_ids.begin(), annotations.image_ids.end());
    std::vector<const PosePrediction*> ranked;
    for (const auto& p : predictions) {
        if (!known.count(p.image_id))
            throw FieldError("image_id", "prediction for unknown image " + std::to_string(p.image_id));
        ranked.push_back(&p);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](auto* a, auto* b) { return ranks_before(*a, *b); });

    // OKS against every candidate is threshold independent.
    std::vector<std::vector<std::pair<std::size_t, double>>> sims(ranked.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        auto it = by_image.find(ranked[r]->image_id);
        if (it == by_image.end()) continue;
        for (std::size_t g : it->second)
            sims[r].emplace_back(g, oks(ranked[r]->keypoints, annotations.annotations[g], cfg.k));
    }

    ApResult out;
    out.thresholds = cfg.thresholds;
    for (double thr : cfg.thresholds) {
        std::vector<bool> matched(annotations.annotations.size(), false), tp(ranked.size(), false);
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            double best = -1;
            std::size_t best_g = 0;
            for (const auto& [g, s] : sims[r])
                if (!matched[g] && s > best) {
                    best = s;
                    best_g = g;
                }
            if (best >= thr) {
                matched[best_g] = true;
                tp[r] = true;
            }
        }
        out.ap.push_back(interpolated_ap(tp, num_gt));
    }
    out.mean_ap = std::accumulate(out.ap.begin(), out.ap.end(), 0.0) / static_cast<double>(out.ap.size());
    return out;
}

void write_ap_table(std::ostream& os, const ApResult& r) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << "threshold\tap\n" << std::fixed;
    for (std::size_t i = 0; i < r.ap.size(); ++i)
        os << std::setprecision(2) << r.thresholds[i] << '\t' << std::setprecision(6) << r.ap[i] << '\n';
    os << "mean\t" << std::setprecision(6) << r.mean_ap << '\n';
    os.flags(flags);
    os.precision(prec);
}

AnnotationSet annotations_from_dataset(std::span<const SyntheticSample> dataset) {
    AnnotationSet set;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Annotation a;
        a.image_id = static_cast<std::int64_t>(i);
        a.area = dataset[i].area;
        for (const auto& kp : dataset[i].keypoints) a.keypoints.push_back(LabeledKeypoint{kp.x, kp.y, kp.visible ? 2 : 0});
        set.image_ids.push_back(a.image_id);
        set.annotations.push_back(std::move(a));
    }
    return set;
}

std::vector<PosePrediction> predict_poses(const PoseNet<float>& model, std::span<const SyntheticSample> dataset,
                                          bool flip, std::span<const std::pair<int, int>> flip_pairs) {
    std::vector<PosePrediction> out;
    // One image per forward: RAM attention averages over the batch, so larger
    // chunks would let images influence each other's heatmaps.
    constexpr std::size_t chunk = 1;
    for (std::size_t lo = 0; lo < dataset.size(); lo += chunk) {
        const std::size_t hi = std::min(dataset.size(), lo + chunk);
        std::vector<Tensor<float>> imgs;
        for (std::size_t i = lo; i < hi; ++i) imgs.push_back(dataset[i].image);
        const Tensor<float> batch = stack_batch<float>(imgs);
        const Tensor<float> heat = flip ? flip_average(model, batch, flip_pairs) : model.predict(batch);
        const auto decoded = decode_all(heat);
        for (std::size_t i = lo; i < hi; ++i) {
            PosePrediction p;
            p.image_id = static_cast<std::int64_t>(i);
            double score = 0;
            for (const auto& k : decoded[i - lo]) {
                p.keypoints.push_back(to_input_coords(k));
                score += k.score;
            }
            p.score = decoded[i - lo].empty() ? 0.0 : score / static_cast<double>(decoded[i - lo].size());
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace rapose
