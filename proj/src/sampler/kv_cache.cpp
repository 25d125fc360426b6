#include "swtt/kv_cache.hpp"

#include "swtt/errors.hpp"

namespace swtt {

KVCache::KVCache(std::size_t depth, std::size_t width, AttentionRegime regime)
    : width_(width), keys_(depth), values_(depth), length_(depth, 0) {
    if (regime != AttentionRegime::BlockCausal) {
        throw UsageError("KV cache is only used with block-causal attention; block-diagonal scales never attend "
                         "to earlier scales");
    }
}

void KVCache::extend(std::size_t block, const Tensor& keys, const Tensor& values) {
    if (block >= keys_.size()) throw UsageError("KV cache block index out of range");
    if (keys.rank() != 2 || keys.shape() != values.shape() || keys.dim(1) != width_) {
        throw DimensionError("KV cache rows must be [n, " + std::to_string(width_) + "], got " +
                             shape_str(keys.shape()) + " and " + shape_str(values.shape()));
    }
    keys_[block].insert(keys_[block].end(), keys.data().begin(), keys.data().end());
    values_[block].insert(values_[block].end(), values.data().begin(), values.data().end());
    length_[block] += keys.dim(0);
}

Tensor KVCache::read_keys(std::size_t block) const {
    return Tensor({length_.at(block), width_}, keys_.at(block));
}

Tensor KVCache::read_values(std::size_t block) const {
    return Tensor({length_.at(block), width_}, values_.at(block));
}

}  // namespace swtt
