#include "vsf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

namespace vsf {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::istream& in) {
    const std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_tensor(std::ostream& out, const std::string& name,
                  const std::vector<std::uint32_t>& dims, const std::vector<float>& values) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    std::size_t count = 1;
    for (std::uint32_t d : dims) {
        put_u32(out, d);
        count *= d;
    }
    if (values.size() != count) throw std::logic_error("checkpoint: dim/value mismatch");
    for (float v : values) put_f32(out, v);
}

struct RawTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

bool read_tensor(std::istream& in, RawTensor& t) {
    int first = in.peek();
    if (first == std::char_traits<char>::eof()) return false;
    const std::uint32_t name_len = get_u32(in);
    if (name_len > 4096) throw std::runtime_error("checkpoint: unreasonable tensor name length");
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const std::uint32_t rank = get_u32(in);
    if (rank > 8) throw std::runtime_error("checkpoint: unreasonable tensor rank");
    t.dims.resize(rank);
    std::size_t count = 1;
    for (std::uint32_t& d : t.dims) {
        d = get_u32(in);
        count *= d;
    }
    t.values.resize(count);
    for (float& v : t.values) v = get_f32(in);
    if (!in) throw std::runtime_error("checkpoint: truncated tensor '" + t.name + "'");
    return true;
}

} // namespace

void save_checkpoint(const std::string& path, const ToyModel& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write("VSFT", 4);
    put_u32(out, kCheckpointVersion);

    const ToyModelConfig& c = m.cfg;
    write_tensor(out, "__config__", {8},
                 {static_cast<float>(c.model_dim), static_cast<float>(c.heads),
                  static_cast<float>(c.layers), static_cast<float>(c.patch),
                  static_cast<float>(c.img_size), static_cast<float>(c.mlp_hidden),
                  static_cast<float>(c.vocab), static_cast<float>(c.max_prompt)});

    for (const auto& [name, tensor] : named_tensors(m)) {
        std::vector<float> values(tensor->size());
        for (std::size_t i = 0; i < tensor->size(); ++i) {
            values[i] = static_cast<float>(tensor->data()[i]);
        }
        write_tensor(out, name,
                     {static_cast<std::uint32_t>(tensor->rows()),
                      static_cast<std::uint32_t>(tensor->cols())},
                     values);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ToyModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "VSFT", 4) != 0) {
        throw std::runtime_error("load_checkpoint: " + path + " is not a VSFT checkpoint");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(version));
    }

    RawTensor t;
    if (!read_tensor(in, t) || t.name != "__config__" || t.values.size() != 8) {
        throw std::runtime_error("load_checkpoint: missing __config__ tensor");
    }
    ToyModelConfig cfg;
    cfg.model_dim = static_cast<int>(t.values[0]);
    cfg.heads = static_cast<int>(t.values[1]);
    cfg.layers = static_cast<int>(t.values[2]);
    cfg.patch = static_cast<int>(t.values[3]);
    cfg.img_size = static_cast<int>(t.values[4]);
    cfg.mlp_hidden = static_cast<int>(t.values[5]);
    cfg.vocab = static_cast<int>(t.values[6]);
    cfg.max_prompt = static_cast<int>(t.values[7]);

    ToyModel m = make_toy_model(cfg, 0);
    auto registry = named_tensors(m);
    std::set<std::string> remaining;
    for (const auto& [name, tensor] : registry) remaining.insert(name);

    while (read_tensor(in, t)) {
        Matrix* target = nullptr;
        for (auto& [name, tensor] : registry) {
            if (name == t.name) {
                target = tensor;
                break;
            }
        }
        if (!target) throw std::runtime_error("load_checkpoint: unknown tensor '" + t.name + "'");
        if (t.dims.size() != 2 || t.dims[0] != target->rows() || t.dims[1] != target->cols()) {
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + t.name + "'");
        }
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            target->data()[i] = static_cast<double>(t.values[i]);
        }
        remaining.erase(t.name);
    }
    if (!remaining.empty()) {
        throw std::runtime_error("load_checkpoint: missing tensor '" + *remaining.begin() + "'");
    }
    return m;
}

} // namespace vsf
