#pragma once

#include <filesystem>

#include "swtt/codec.hpp"

namespace swtt {

// "SWTK" | u32 version | u32 scales | u32 vocab | per scale: u32 h, u32 w,
// h*w u16 ids. Little-endian.
void write_token_file(const std::filesystem::path& path, const TokenPyramid& p, std::size_t vocab);
TokenPyramid read_token_file(const std::filesystem::path& path, std::size_t* vocab = nullptr);

}  // namespace swtt
