#include "qrlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qrlab {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw std::runtime_error(std::string("checkpoint: truncated reading ") + what);
    if constexpr (std::endian::native == std::endian::big)
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    uint32_t len = read_le<uint32_t>(in, "string length");
    if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

constexpr char kMagic[4] = {'Q', 'R', 'C', 'K'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kMagic, 4);
    write_le<uint32_t>(out, Checkpoint::kVersion);

    const ModelSpec& s = ck.model.spec;
    write_le<uint8_t>(out, s.kind == ModelSpec::Kind::Mlp ? 0 : 1);
    write_le<uint32_t>(out, static_cast<uint32_t>(s.hidden.size()));
    for (int64_t h : s.hidden) write_le<int64_t>(out, h);
    write_le<int64_t>(out, s.input_dim);
    write_le<int64_t>(out, s.classes);
    write_le<int64_t>(out, s.image_side);

    write_le<uint64_t>(out, ck.config_hash);
    write_le<uint64_t>(out, ck.seed);
    write_le<uint32_t>(out, ck.epoch);

    write_le<uint32_t>(out, static_cast<uint32_t>(ck.model.param_names.size()));
    for (const std::string& name : ck.model.param_names) {
        const Tensor& t = ck.model.params.at(name);
        write_string(out, name);
        write_le<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) write_le<int64_t>(out, d);
        for (double v : t.data) write_le<double>(out, v);
    }

    write_le<uint8_t>(out, ck.schemes.empty() ? 0 : 1);
    if (!ck.schemes.empty()) {
        for (const std::string& name : ck.model.param_names) {
            auto it = ck.schemes.find(name);
            write_le<uint8_t>(out, it == ck.schemes.end() ? 0 : 1);
            if (it != ck.schemes.end()) {
                write_le<int32_t>(out, it->second.bits);
                write_le<double>(out, it->second.scale);
                write_le<double>(out, it->second.zero_point);
                write_le<uint8_t>(out, it->second.symmetric ? 1 : 0);
            }
        }
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic (not a checkpoint file)");
    uint32_t version = read_le<uint32_t>(in, "version");
    if (version != Checkpoint::kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ck;
    ModelSpec& s = ck.model.spec;
    s.kind = read_le<uint8_t>(in, "model kind") == 0 ? ModelSpec::Kind::Mlp : ModelSpec::Kind::TinyConv;
    uint32_t nh = read_le<uint32_t>(in, "hidden count");
    s.hidden.clear();
    for (uint32_t i = 0; i < nh; ++i) s.hidden.push_back(read_le<int64_t>(in, "hidden width"));
    s.input_dim = read_le<int64_t>(in, "input dim");
    s.classes = read_le<int64_t>(in, "classes");
    s.image_side = read_le<int64_t>(in, "image side");

    ck.config_hash = read_le<uint64_t>(in, "config hash");
    ck.seed = read_le<uint64_t>(in, "seed");
    ck.epoch = read_le<uint32_t>(in, "epoch");

    uint32_t nt = read_le<uint32_t>(in, "tensor count");
    for (uint32_t i = 0; i < nt; ++i) {
        std::string name = read_string(in);
        uint32_t nd = read_le<uint32_t>(in, "tensor rank");
        std::vector<int64_t> shape;
        for (uint32_t k = 0; k < nd; ++k) shape.push_back(read_le<int64_t>(in, "tensor extent"));
        int64_t n = Tensor::numel_of(shape);
        std::vector<double> data(static_cast<size_t>(n));
        for (double& v : data) v = read_le<double>(in, "tensor data");
        ck.model.param_names.push_back(name);
        ck.model.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }

    if (read_le<uint8_t>(in, "scheme flag")) {
        for (const std::string& name : ck.model.param_names) {
            if (!read_le<uint8_t>(in, "scheme presence")) continue;
            QuantScheme qs;
            qs.bits = read_le<int32_t>(in, "scheme bits");
            qs.scale = read_le<double>(in, "scheme scale");
            qs.zero_point = read_le<double>(in, "scheme zero point");
            qs.symmetric = read_le<uint8_t>(in, "scheme symmetric") != 0;
            ck.schemes.emplace(name, qs);
        }
    }
    return ck;
}

}  // namespace qrlab
