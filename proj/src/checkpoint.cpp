#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "nac/training.hpp"

namespace nac {

namespace {

constexpr char kMagic[4] = {'N', 'A', 'C', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const ParamList& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.value.data().data()),
                 static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

void load_checkpoint(const ParamList& params, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + " is not a checkpoint");
    if (get_u32(is) != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    const std::uint32_t count = get_u32(is);

    std::map<std::string, Tensor> by_name;
    for (const auto& p : params) by_name.emplace(p.name, p.value);
    if (count != params.size()) {
        throw ContractError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                            std::to_string(params.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get_u32(is), '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw std::runtime_error("checkpoint: truncated file");
        Shape shape(get_u32(is));
        for (auto& d : shape) d = get_u32(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ContractError("checkpoint tensor '" + name + "' is not a model parameter");
        Tensor t = it->second;
        if (t.shape() != shape) {
            throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                                 shape_str(t.shape()));
        }
        if (!is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
            throw std::runtime_error("checkpoint: truncated file");
        }
    }
}

}  // namespace nac
