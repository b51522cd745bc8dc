#include "ssmri/models.hpp"

#include <cstring>
#include <fstream>

namespace ssmri::models {

namespace {

constexpr char kMagic[6] = {'S', 'S', 'C', 'K', '1', '\0'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated checkpoint while reading " + what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof kMagic);
    write_u32(os, static_cast<std::uint32_t>(ckpt.config_echo.size()));
    os.write(ckpt.config_echo.data(), static_cast<std::streamsize>(ckpt.config_echo.size()));
    write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        write_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        const unsigned char rank = static_cast<unsigned char>(t.shape.size());
        os.write(reinterpret_cast<const char*>(&rank), 1);
        std::int64_t n = 1;
        for (auto d : t.shape) {
            write_u32(os, static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (n != static_cast<std::int64_t>(t.data.size()))
            throw std::runtime_error("checkpoint tensor " + t.name + ": shape/data length mismatch");
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw std::runtime_error(path + ": not an SSCK1 checkpoint");
    Checkpoint ckpt;
    const std::uint32_t cfg_len = read_u32(is, path, "config length");
    ckpt.config_echo.resize(cfg_len);
    if (cfg_len && !is.read(ckpt.config_echo.data(), cfg_len))
        throw std::runtime_error(path + ": truncated checkpoint while reading config echo");
    const std::uint32_t count = read_u32(is, path, "tensor count");
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        const std::uint32_t name_len = read_u32(is, path, "tensor name length");
        t.name.resize(name_len);
        if (name_len && !is.read(t.name.data(), name_len))
            throw std::runtime_error(path + ": truncated checkpoint while reading tensor name");
        unsigned char rank;
        if (!is.read(reinterpret_cast<char*>(&rank), 1))
            throw std::runtime_error(path + ": truncated checkpoint while reading rank of " + t.name);
        std::int64_t n = 1;
        for (int d = 0; d < rank; ++d) {
            t.shape.push_back(static_cast<std::int64_t>(read_u32(is, path, "tensor dims")));
            n *= t.shape.back();
        }
        t.data.resize(static_cast<std::size_t>(n));
        if (n && !is.read(reinterpret_cast<char*>(t.data.data()),
                          static_cast<std::streamsize>(n * 4)))
            throw std::runtime_error(path + ": truncated checkpoint while reading data of " + t.name +
                                     " (" + std::to_string(n * 4) + " bytes expected)");
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void append_params(Checkpoint& ckpt, const std::vector<NamedParam<float>>& params,
                   const std::string& prefix) {
    for (const auto& np : params)
        ckpt.tensors.push_back({prefix + np.name, np.p->shape, np.p->value});
}

void restore_params(const Checkpoint& ckpt, std::vector<NamedParam<float>>& params,
                    const std::string& prefix) {
    for (auto& np : params) {
        const auto* t = ckpt.find(prefix + np.name);
        if (!t) throw std::runtime_error("checkpoint is missing tensor " + prefix + np.name);
        if (t->shape != np.p->shape)
            throw std::runtime_error("checkpoint tensor " + t->name + " has shape " +
                                     ad::shape_str(t->shape) + ", model expects " +
                                     ad::shape_str(np.p->shape));
        np.p->value = t->data;
    }
}

} // namespace ssmri::models
