#include <nlohmann/json.hpp>

#include "rapose/evaldecode.hpp"

namespace rapose {
namespace {

using nlohmann::json;

json parse_document(const std::string& document) {
    try {
        return json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte, e.what());
    }
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw FieldError(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw FieldError(path.empty() ? key : path + "." + key, "required field missing");
    return *it;
}

std::int64_t require_id(const json& obj, const std::string& key, const std::string& path) {
    const json& v = require(obj, key, path);
    if (!v.is_number_integer()) throw FieldError(path + "." + key, "expected an integer");
    return v.get<std::int64_t>();
}

std::vector<double> require_numbers(const json& obj, const std::string& key, const std::string& path) {
    const json& v = require(obj, key, path);
    if (!v.is_array()) throw FieldError(path + "." + key, "expected an array");
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw FieldError(path + "." + key, "expected numbers only");
        out.push_back(x.get<double>());
    }
    if (out.size() % 3 != 0) throw FieldError(path + "." + key, "length is not a multiple of 3");
    return out;
}

}  // namespace

AnnotationSet parse_annotations(const std::string& document) {
    const json doc = parse_document(document);
    if (!doc.is_object()) throw FieldError("", "document root must be an object");
    AnnotationSet set;
    const json& anns = require(doc, "annotations", "");
    if (!anns.is_array()) throw FieldError("annotations", "expected an array");
    bool have_images = false;
    if (auto it = doc.find("images"); it != doc.end()) {
        if (!it->is_array()) throw FieldError("images", "expected an array");
        have_images = true;
        for (std::size_t i = 0; i < it->size(); ++i)
            set.image_ids.push_back(require_id((*it)[i], "id", "images[" + std::to_string(i) + "]"));
    }
    std::size_t k_count = 0;
    for (std::size_t i = 0; i < anns.size(); ++i) {
        const std::string path = "annotations[" + std::to_string(i) + "]";
        const json& a = anns[i];
        Annotation out;
        out.image_id = require_id(a, "image_id", path);
        const auto kp = require_numbers(a, "keypoints", path);
        if (i == 0) k_count = kp.size() / 3;
        else if (kp.size() / 3 != k_count)
            throw FieldError(path + ".keypoints", "has " + std::to_string(kp.size() / 3) + " keypoints, expected " +
                                                      std::to_string(k_count));
        for (std::size_t k = 0; k < kp.size(); k += 3) {
            const double v = kp[k + 2];
            if (v != 0 && v != 1 && v != 2) throw FieldError(path + ".keypoints", "visibility must be 0, 1 or 2");
            out.keypoints.push_back(LabeledKeypoint{kp[k], kp[k + 1], static_cast<int>(v)});
        }
        const json& area = require(a, "area", path);
        if (!area.is_number() || !(area.get<double>() > 0)) throw FieldError(path + ".area", "must be a positive number");
        out.area = area.get<double>();
        if (have_images && std::find(set.image_ids.begin(), set.image_ids.end(), out.image_id) == set.image_ids.end())
            throw FieldError(path + ".image_id", "refers to image " + std::to_string(out.image_id) + " not in images");
        if (!have_images && std::find(set.image_ids.begin(), set.image_ids.end(), out.image_id) == set.image_ids.end())
            set.image_ids.push_back(out.image_id);
        set.annotations.push_back(std::move(out));
    }
    return set;
}

std::string annotations_to_json(const AnnotationSet& set) {
    json doc;
    doc["images"] = json::array();
    for (auto id : set.image_ids) doc["images"].push_back({{"id", id}});
    doc["annotations"] = json::array();
    for (std::size_t i = 0; i < set.annotations.size(); ++i) {
        const auto& a = set.annotations[i];
        json kp = json::array();
        for (const auto& k : a.keypoints) {
            kp.push_back(k.x);
            kp.push_back(k.y);
            kp.push_back(k.v);
        }
        doc["annotations"].push_back({{"id", i + 1},
                                      {"image_id", a.image_id},
                                      {"category_id", 1},
                                      {"num_keypoints", a.labeled()},
                                      {"keypoints", kp},
                                      {"area", a.area}});
    }
    return doc.dump(1);
}

std::string predictions_to_json(std::span<const PosePrediction> predictions) {
    json doc;
    doc["annotations"] = json::array();
    for (const auto& p : predictions) {
        json kp = json::array();
        for (const auto& k : p.keypoints) {
            kp.push_back(k.x);
            kp.push_back(k.y);
            kp.push_back(k.score);
        }
        doc["annotations"].push_back({{"image_id", p.image_id}, {"category_id", 1}, {"keypoints", kp}, {"score", p.score}});
    }
    return doc.dump(1);
}

std::vector<PosePrediction> parse_predictions(const std::string& document) {
    const json doc = parse_document(document);
    const json& anns = require(doc, "annotations", "");
    if (!anns.is_array()) throw FieldError("annotations", "expected an array");
    std::vector<PosePrediction> out;
    for (std::size_t i = 0; i < anns.size(); ++i) {
        const std::string path = "annotations[" + std::to_string(i) + "]";
        PosePrediction p;
        p.image_id = require_id(anns[i], "image_id", path);
        const auto kp = require_numbers(anns[i], "keypoints", path);
        double mean = 0;
        for (std::size_t k = 0; k < kp.size(); k += 3) {
            p.keypoints.push_back(Keypoint{kp[k], kp[k + 1], kp[k + 2]});
            mean += kp[k + 2];
        }
        p.score = p.keypoints.empty() ? 0.0 : mean / static_cast<double>(p.keypoints.size());
        if (auto it = anns[i].find("score"); it != anns[i].end()) {
            if (!it->is_number()) throw FieldError(path + ".score", "expected a number");
            p.score = it->get<double>();
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace rapose
