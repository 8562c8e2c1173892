#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rapose/posenet.hpp"

namespace rapose {
namespace {

constexpr char kMagic[4] = {'R', 'G', 'P', 'R'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4))
        throw ParseError(static_cast<std::size_t>(is.gcount()), std::string("truncated container reading ") + what);
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const char* what) {
    const std::uint32_t n = get_u32(is, what);
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw ParseError(0, std::string("truncated container reading ") + what);
    return s;
}

}  // namespace

void write_container(std::ostream& os, const Container& c) {
    os.write(kMagic, 4);
    put_u32(os, kContainerVersion);
    put_string(os, c.text);
    put_u32(os, static_cast<std::uint32_t>(c.records.size()));
    for (const auto& r : c.records) {
        std::size_t expect = 1;
        for (auto d : r.dims) expect *= d;
        if (expect != r.data.size()) throw ValueError("container record '" + r.name + "' has inconsistent dims");
        put_string(os, r.name);
        put_u32(os, static_cast<std::uint32_t>(r.dims.size()));
        for (auto d : r.dims) put_u32(os, d);
        for (float f : r.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
    }
    if (!os) throw std::runtime_error("write_container: stream error");
}

Container read_container(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
        throw ParseError(0, "not an RGPR container (bad magic)");
    const std::uint32_t version = get_u32(is, "version");
    if (version != kContainerVersion)
        throw ParseError(4, "unsupported container version " + std::to_string(version));
    Container c;
    c.text = get_string(is, "config text");
    const std::uint32_t count = get_u32(is, "record count");
    c.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ContainerRecord r;
        r.name = get_string(is, "record name");
        const std::uint32_t rank = get_u32(is, "rank");
        if (rank > 8) throw ParseError(0, "record '" + r.name + "' has implausible rank " + std::to_string(rank));
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            r.dims.push_back(get_u32(is, "dims"));
            n *= r.dims.back();
        }
        r.data.resize(n);
        for (auto& f : r.data) f = std::bit_cast<float>(get_u32(is, "payload"));
        c.records.push_back(std::move(r));
    }
    return c;
}

std::string key_values_to_text(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::vector<std::pair<std::string, std::string>> text_to_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t pos = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(pos, "expected key=value, got '" + line + "'");
            kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        }
        pos += line.size() + 1;
    }
    return kv;
}

template <typename Real>
void save_checkpoint(std::ostream& os, const PoseNet<Real>& model) {
    Container c;
    c.text = key_values_to_text(model.config().to_key_values());
    const auto& p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Tensor<Real>& t = p.at(i);
        const Shape s = t.shape();
        ContainerRecord r;
        r.name = p.name(i);
        r.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                  static_cast<std::uint32_t>(s.w)};
        r.data.assign(t.data().begin(), t.data().end());
        c.records.push_back(std::move(r));
    }
    write_container(os, c);
}

template <typename Real>
void save_checkpoint(const std::string& path, const PoseNet<Real>& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    save_checkpoint(os, model);
}

PoseNet<float> load_checkpoint(std::istream& is) {
    Container c = read_container(is);
    NetworkConfig cfg;
    auto unknown = cfg.apply_key_values(text_to_key_values(c.text));
    if (!unknown.empty()) throw FieldError(unknown.front(), "unknown key in checkpoint config");
    PoseNet<float> model = PoseNet<float>::build(cfg, 0);
    auto& p = model.params();
    if (c.records.size() != p.size())
        throw ValueError("checkpoint holds " + std::to_string(c.records.size()) + " parameters, model expects " +
                         std::to_string(p.size()));
    for (auto& r : c.records) {
        auto id = p.find(r.name);
        if (!id) throw FieldError(r.name, "parameter not present in model");
        Shape s = p[*id].shape();
        std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                        static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
        if (r.dims != dims) throw DimensionError("load_checkpoint", {r.name}, "stored dims differ from " + s.str());
        p[*id] = Tensor<float>(s, std::move(r.data));
    }
    return model;
}

PoseNet<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    return load_checkpoint(is);
}

template void save_checkpoint(std::ostream&, const PoseNet<float>&);
template void save_checkpoint(std::ostream&, const PoseNet<double>&);
template void save_checkpoint(const std::string&, const PoseNet<float>&);
template void save_checkpoint(const std::string&, const PoseNet<double>&);

}  // namespace rapose
