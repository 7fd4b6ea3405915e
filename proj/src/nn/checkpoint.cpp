#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dbf/errors.hpp"
#include "dbf/nn.hpp"

// Layout (all integers little-endian):
//   8 bytes  magic "DBFCKPT\0"
//   u32      format version (1)
//   u32      parameter count
//   per parameter:
//     u32 layer_id, u32 name length, name bytes,
//     u32 rank, rank x u64 dims, element_count x f64 (IEEE-754 bits, row-major)

namespace dbf {

namespace {

constexpr char kMagic[8] = {'D', 'B', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const Detector& d, std::ostream& out) {
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(d.parameters().size()));
    for (const Parameter& p : d.parameters()) {
        put_u32(out, static_cast<std::uint32_t>(p.layer_id));
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t dim : p.value.shape()) put_u64(out, dim);
        for (double v : p.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw IoError("checkpoint write failed");
}

void save_checkpoint(const Detector& d, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    save_checkpoint(d, out);
}

void load_checkpoint(Detector& d, std::istream& in) {
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw IoError("not a dbf checkpoint (bad magic)");
    }
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = get_u32(in);
    if (count != d.parameters().size()) {
        throw IoError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                      std::to_string(d.parameters().size()));
    }
    std::vector<Tensor> loaded;
    loaded.reserve(count);
    for (const Parameter& p : d.parameters()) {
        const std::uint32_t layer_id = get_u32(in);
        std::string name(get_u32(in), '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("checkpoint truncated");
        Shape shape(get_u32(in));
        for (std::size_t& dim : shape) dim = get_u64(in);
        if (layer_id != p.layer_id || name != p.name || shape != p.value.shape()) {
            throw IoError("checkpoint entry (layer " + std::to_string(layer_id) + ", " + name + ", " +
                          shape_string(shape) + ") does not match model parameter (layer " +
                          std::to_string(p.layer_id) + ", " + p.name + ", " + shape_string(p.value.shape()) + ")");
        }
        std::vector<double> values(element_count(shape));
        for (double& v : values) v = std::bit_cast<double>(get_u64(in));
        loaded.emplace_back(std::move(shape), std::move(values));
    }
    for (std::size_t i = 0; i < loaded.size(); ++i) d.parameters()[i].value = std::move(loaded[i]);
}

void load_checkpoint(Detector& d, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    try {
        load_checkpoint(d, in);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace dbf
