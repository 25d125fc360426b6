#include "swtt/analysis.hpp"
#include "swtt/errors.hpp"

namespace swtt {

std::uint64_t attention_flops(const ModelConfig& cfg, std::size_t cond_len, std::size_t first, std::size_t last) {
    const ScaleSchedule& sched = cfg.schedule;
    std::uint64_t keys = 0, rows = 0;
    for (std::size_t s = first; s <= last; ++s) {
        const std::uint64_t t = sched.tokens(s);
        const std::uint64_t k = cfg.regime == AttentionRegime::BlockCausal ? sched.offset(s) + t : t;
        keys += t * k;
        rows += t;
    }
    const std::uint64_t d = cfg.width;
    return cfg.depth * (4 * d * keys + 4 * d * rows * cond_len);
}

std::uint64_t forward_flops(const ModelConfig& cfg, std::size_t cond_len, bool crop, std::size_t first,
                            std::size_t last) {
    const ScaleSchedule& sched = cfg.schedule;
    if (first > last || last >= sched.size()) throw UsageError("forward_flops: bad scale range");
    const std::uint64_t d = cfg.width, tw = cfg.text_width, f = cfg.ffn_hidden, c = cfg.channels, v = cfg.vocab;
    const std::uint64_t l = cond_len;
    std::uint64_t rows = 0, flops = 0;
    for (std::size_t s = first; s <= last; ++s) {
        rows += sched.tokens(s);
        if (s > 0) flops += 2 * sched.tokens(s) * c * d;
    }
    if (first == 0) flops += 2 * tw * d;
    if (crop) flops += 2 * kCropFeatures * tw * (first == 0 ? 2 : 1);
    std::uint64_t block = 2 * tw * 6 * d;            // AdaLN projection
    block += 8 * rows * d * d;                       // q, k, v, o
    block += 4 * rows * d * d + 4 * l * tw * d;      // cross q, o and k, v
    block += (cfg.variant.swiglu ? 6 : 4) * rows * d * f;
    flops += cfg.depth * block + attention_flops(cfg, cond_len, first, last);
    flops += 2 * rows * d * v;
    return flops;
}

GenerationFlops generation_flops(const ModelConfig& cfg, std::size_t cond_len, bool crop, const SamplerConfig& sc) {
    const ScaleSchedule& sched = cfg.schedule;
    const std::size_t n = sched.size();
    const bool recompute = cfg.regime == AttentionRegime::BlockCausal && !sc.use_cache;
    GenerationFlops g;
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t first = recompute ? 0 : s;
        const std::size_t tokens = sched.offset(s) + sched.tokens(s) - sched.offset(first);
        g.conditional += forward_flops(cfg, cond_len, crop, first, s);
        g.attention += attention_flops(cfg, cond_len, first, s);
        g.forward_tokens += tokens;
        if (cfg_active(s + 1, n, sc.cfg_off_last)) {
            g.unconditional += forward_flops(cfg, 1, false, first, s);
            g.attention += attention_flops(cfg, 1, first, s);
            g.forward_tokens += tokens;
            ++g.uncond_passes;
        }
    }
    return g;
}

}  // namespace swtt
