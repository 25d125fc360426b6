#include "swtt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "swtt/errors.hpp"

namespace swtt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'W', 'T', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(path.string() + ": truncated checkpoint");
    return v;
}

std::string get_bytes(std::istream& is, std::size_t n, const std::filesystem::path& path) {
    if (n > (1u << 26)) throw FormatError(path.string() + ": implausible field length " + std::to_string(n));
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError(path.string() + ": truncated checkpoint");
    return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CodeBook* codebook) {
    std::ostringstream cfg;
    for (const auto& [k, v] : config_to_kv(model.config())) cfg << k << '=' << v << '\n';
    const std::string text = cfg.str();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = model.named_parameters();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size() + (codebook ? 1 : 0)));
    for (const auto& [name, v] : params) put_tensor(os, name, v.value());
    if (codebook) put_tensor(os, "codebook", codebook->vectors());
    if (!os) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::string text = get_bytes(is, get<std::uint32_t>(is, path), path);
    KeyValues kv;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path.string() + ": bad config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    Checkpoint ck{Model(config_from_kv(kv)), std::nullopt};

    auto params = ck.model.named_parameters();
    const auto count = get<std::uint32_t>(is, path);
    std::size_t loaded = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = get_bytes(is, get<std::uint32_t>(is, path), path);
        const auto rank = get<std::uint32_t>(is, path);
        if (rank > 8) throw FormatError(path.string() + ": tensor '" + name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw FormatError(path.string() + ": truncated tensor '" + name + "'");
        }
        if (name == "codebook") {
            ck.codebook = CodeBook(std::move(t));
            continue;
        }
        auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
        if (it == params.end()) throw FormatError(path.string() + ": unknown tensor '" + name + "'");
        if (it->second.value().shape() != shape) {
            throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(it->second.value().shape()));
        }
        it->second.mutable_value() = std::move(t);
        ++loaded;
    }
    if (loaded != params.size()) {
        throw FormatError(path.string() + ": checkpoint holds " + std::to_string(loaded) + " of " +
                          std::to_string(params.size()) + " model tensors");
    }
    return ck;
}

}  // namespace swtt
