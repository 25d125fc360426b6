#pragma once

#include <vector>

#include "swtt/attention_mask.hpp"
#include "swtt/tensor.hpp"

namespace swtt {

// Keys (after QK-norm and RoPE) and values of every generated scale, one pair
// per transformer block. Append-only; only meaningful for block-causal models.
class KVCache {
public:
    KVCache(std::size_t depth, std::size_t width, AttentionRegime regime);

    // Appends rows [n, width] to block `block`'s keys and values.
    void extend(std::size_t block, const Tensor& keys, const Tensor& values);
    // All cached rows of a block as [length, width] tensors.
    Tensor read_keys(std::size_t block) const;
    Tensor read_values(std::size_t block) const;

    // Rows cached per block; equal across blocks between forward passes.
    std::size_t length() const { return length_.empty() ? 0 : length_.front(); }
    std::size_t length(std::size_t block) const { return length_.at(block); }
    std::size_t depth() const { return keys_.size(); }

    // Scales completed so far and their token counts.
    void mark_scale(std::size_t tokens) { scale_tokens_.push_back(tokens); }
    const std::vector<std::size_t>& scale_tokens() const { return scale_tokens_; }

private:
    std::size_t width_;
    std::vector<std::vector<double>> keys_;
    std::vector<std::vector<double>> values_;
    std::vector<std::size_t> length_;
    std::vector<std::size_t> scale_tokens_;
};

}  // namespace swtt
