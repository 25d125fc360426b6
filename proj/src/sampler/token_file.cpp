#include "swtt/token_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "swtt/errors.hpp"

namespace swtt {

static_assert(std::endian::native == std::endian::little, "token file I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'W', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(path.string() + ": truncated token file");
    return v;
}

}  // namespace

void write_token_file(const std::filesystem::path& path, const TokenPyramid& p, std::size_t vocab) {
    if (vocab > 65536) throw FormatError("token files hold u16 ids; vocabulary " + std::to_string(vocab) + " is too large");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.grids.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(vocab));
    for (const TokenGrid& g : p.grids) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(g.h));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(g.w));
        for (std::uint32_t id : g.ids) {
            if (id >= vocab) throw FormatError("token " + std::to_string(id) + " outside vocabulary");
            put<std::uint16_t>(os, static_cast<std::uint16_t>(id));
        }
    }
    if (!os) throw FormatError("write failed for " + path.string());
}

TokenPyramid read_token_file(const std::filesystem::path& path, std::size_t* vocab) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open token file " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": bad magic");
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    const auto scales = get<std::uint32_t>(is, path);
    const auto v = get<std::uint32_t>(is, path);
    if (vocab) *vocab = v;
    TokenPyramid p;
    for (std::uint32_t s = 0; s < scales; ++s) {
        TokenGrid g;
        g.h = get<std::uint32_t>(is, path);
        g.w = get<std::uint32_t>(is, path);
        if (g.h * g.w > (1u << 24)) throw FormatError(path.string() + ": implausible grid size");
        g.ids.resize(g.h * g.w);
        for (auto& id : g.ids) {
            id = get<std::uint16_t>(is, path);
            if (id >= v) throw FormatError(path.string() + ": token " + std::to_string(id) + " outside vocabulary");
        }
        p.grids.push_back(std::move(g));
    }
    return p;
}

}  // namespace swtt
