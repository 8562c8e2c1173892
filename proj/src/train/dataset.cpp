#include <fstream>

#include "rapose/train.hpp"

namespace rapose {

// One image record plus one label record (x, y, visible per joint, then area)
// per sample. The container text carries the seeds.
void save_dataset(const std::string& path, std::span<const SyntheticSample> samples) {
    Container c;
    c.text = "kind=synthetic_dataset\ncount=" + std::to_string(samples.size()) + "\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const Shape sh = s.image.shape();
        c.text += "seed" + std::to_string(i) + "=" + std::to_string(s.seed) + "\n";
        ContainerRecord img;
        img.name = "sample" + std::to_string(i) + ".image";
        img.dims = {static_cast<std::uint32_t>(sh.c), static_cast<std::uint32_t>(sh.h), static_cast<std::uint32_t>(sh.w)};
        img.data.assign(s.image.data().begin(), s.image.data().end());
        ContainerRecord lab;
        lab.name = "sample" + std::to_string(i) + ".labels";
        for (const auto& kp : s.keypoints) {
            lab.data.push_back(static_cast<float>(kp.x));
            lab.data.push_back(static_cast<float>(kp.y));
            lab.data.push_back(kp.visible ? 1.0f : 0.0f);
        }
        lab.data.push_back(static_cast<float>(s.area));
        lab.dims = {static_cast<std::uint32_t>(lab.data.size())};
        c.records.push_back(std::move(img));
        c.records.push_back(std::move(lab));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_container(os, c);
}

std::vector<SyntheticSample> load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset '" + path + "'");
    Container c = read_container(is);
    std::vector<std::uint64_t> seeds;
    bool is_dataset = false;
    for (const auto& [k, v] : text_to_key_values(c.text)) {
        if (k == "kind") is_dataset = v == "synthetic_dataset";
        else if (k.rfind("seed", 0) == 0) seeds.push_back(std::stoull(v));
    }
    if (!is_dataset) throw FieldError("kind", "container does not hold a synthetic dataset");
    if (c.records.size() % 2 != 0 || c.records.size() / 2 != seeds.size())
        throw ValueError("dataset container has mismatched record count");
    std::vector<SyntheticSample> out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        auto& img = c.records[2 * i];
        auto& lab = c.records[2 * i + 1];
        if (img.dims.size() != 3 || lab.data.empty() || (lab.data.size() - 1) % 3 != 0)
            throw ValueError("dataset sample " + std::to_string(i) + " is malformed");
        SyntheticSample s;
        s.seed = seeds[i];
        s.image = Tensor<float>(Shape{1, static_cast<int>(img.dims[0]), static_cast<int>(img.dims[1]),
                                      static_cast<int>(img.dims[2])},
                                std::move(img.data));
        for (std::size_t k = 0; k + 1 < lab.data.size(); k += 3)
            s.keypoints.push_back(KeypointLabel{lab.data[k], lab.data[k + 1], lab.data[k + 2] != 0.0f});
        s.area = lab.data.back();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace rapose
