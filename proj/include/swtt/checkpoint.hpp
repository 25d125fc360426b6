#pragma once

#include <filesystem>
#include <optional>

#include "swtt/codec.hpp"
#include "swtt/model.hpp"

namespace swtt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// File layout, all integers little-endian:
//   "SWTT" | u32 version | u32 config bytes | config text (key=value lines)
//   | u32 tensor count | per tensor: u32 name bytes, name, u32 rank,
//     rank x u64 extents, extents-product x f64
// The codebook, when present, is stored as the tensor "codebook".
struct Checkpoint {
    Model model;
    std::optional<CodeBook> codebook;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CodeBook* codebook = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace swtt
