#pragma once

#include <string>
#include <vector>

#include "swtt/codec.hpp"
#include "swtt/ops.hpp"

namespace swtt {

// BlockCausal: scale i attends to scales j <= i (next-scale AR baseline).
// BlockDiagonal: scale i attends to scale i only.
enum class AttentionRegime { BlockCausal, BlockDiagonal };

std::string to_string(AttentionRegime r);
AttentionRegime parse_regime(const std::string& s);

// Dense boolean view over the concatenated token sequence of every scale.
struct AttentionMask {
    std::size_t size = 0;
    std::vector<std::size_t> boundaries;  // scale offsets, size N + 1
    std::vector<char> allowed;            // size x size, row-major

    bool operator()(std::size_t row, std::size_t col) const { return allowed[row * size + col] != 0; }
};

AttentionMask build_attention_mask(const ScaleSchedule& sched, AttentionRegime regime);

// Query/key rectangles for one sample whose rows cover scales
// [first, last] of `sched`, starting at row `row_offset`. Keys are laid out as
// `cached` rows (scales < first, already in a KV cache) followed by the current
// rows, starting at `key_offset`.
std::vector<ops::AttentionBlock> attention_blocks(const ScaleSchedule& sched, AttentionRegime regime,
                                                  std::size_t first, std::size_t last, std::size_t row_offset,
                                                  std::size_t key_offset, std::size_t cached);

}  // namespace swtt
