#include "swtt/attention_mask.hpp"

#include "swtt/errors.hpp"

namespace swtt {

std::string to_string(AttentionRegime r) {
    return r == AttentionRegime::BlockCausal ? "block-causal" : "block-diagonal";
}

AttentionRegime parse_regime(const std::string& s) {
    if (s == "block-causal" || s == "causal") return AttentionRegime::BlockCausal;
    if (s == "block-diagonal" || s == "non-causal" || s == "diagonal") return AttentionRegime::BlockDiagonal;
    throw ConfigError("unknown attention regime '" + s + "' (expected block-causal or block-diagonal)");
}

AttentionMask build_attention_mask(const ScaleSchedule& sched, AttentionRegime regime) {
    AttentionMask m;
    m.size = sched.total_tokens();
    for (std::size_t i = 0; i <= sched.size(); ++i) m.boundaries.push_back(i < sched.size() ? sched.offset(i) : m.size);
    m.allowed.assign(m.size * m.size, 0);
    for (std::size_t i = 0; i < sched.size(); ++i) {
        const std::size_t k_begin = regime == AttentionRegime::BlockCausal ? 0 : sched.offset(i);
        const std::size_t k_end = sched.offset(i) + sched.tokens(i);
        for (std::size_t r = sched.offset(i); r < k_end; ++r)
            for (std::size_t c = k_begin; c < k_end; ++c) m.allowed[r * m.size + c] = 1;
    }
    return m;
}

std::vector<ops::AttentionBlock> attention_blocks(const ScaleSchedule& sched, AttentionRegime regime,
                                                  std::size_t first, std::size_t last, std::size_t row_offset,
                                                  std::size_t key_offset, std::size_t cached) {
    if (first > last || last >= sched.size()) throw UsageError("attention_blocks: bad scale range");
    if (regime == AttentionRegime::BlockCausal && cached != sched.offset(first)) {
        throw UsageError("block-causal attention over scales starting at " + std::to_string(first + 1) +
                         " needs all earlier scales as keys (" + std::to_string(sched.offset(first)) + " cached, got " +
                         std::to_string(cached) + ")");
    }
    std::vector<ops::AttentionBlock> blocks;
    std::size_t row = row_offset;
    std::size_t key = key_offset + cached;
    for (std::size_t s = first; s <= last; ++s) {
        const std::size_t n = sched.tokens(s);
        ops::AttentionBlock b;
        b.q_begin = row;
        b.q_end = row + n;
        b.k_begin = regime == AttentionRegime::BlockCausal ? key_offset : key;
        b.k_end = key + n;
        blocks.push_back(b);
        row += n;
        key += n;
    }
    return blocks;
}

}  // namespace swtt
