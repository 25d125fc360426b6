#include <memory>

#include "swtt/errors.hpp"
#include "swtt/kv_cache.hpp"
#include "swtt/ops.hpp"
#include "swtt/sampler.hpp"

namespace swtt {

namespace {

TokenPyramid empty_pyramid(const ScaleSchedule& sched) {
    TokenPyramid p;
    for (const GridSize& g : sched.sizes()) p.grids.push_back({g.h, g.w, std::vector<std::uint32_t>(g.area(), 0)});
    return p;
}

Tensor scale_input(const TokenPyramid& p, std::size_t scale, const CodeBook& cb, const ScaleSchedule& sched) {
    if (scale == 0) return Tensor({1, cb.channels()}, 0.0);
    return accumulate_prefix(p, scale, cb, sched).to_tokens();
}

// Logits of scale s for one condition. Block-causal without a cache reruns the
// whole prefix under `cond`.
Tensor scale_logits(const Model& model, const CodeBook& cb, const TokenPyramid& p, const ConditionBundle& cond,
                    std::size_t s, KVCache* cache, AttentionRecorder* recorder, Precision precision) {
    const ScaleSchedule& sched = model.config().schedule;
    ForwardOptions opts;
    opts.cache = cache;
    opts.recorder = recorder;
    opts.block_precision = precision;
    ScaleInputs in;
    std::size_t first = s;
    if (model.config().regime == AttentionRegime::BlockCausal && cache == nullptr) {
        first = 0;
        for (std::size_t j = 0; j <= s; ++j) in.maps.push_back(scale_input(p, j, cb, sched));
    } else {
        in.maps.push_back(scale_input(p, s, cb, sched));
    }
    const Var logits = model.forward(std::span<const ConditionBundle>(&cond, 1), std::span<const ScaleInputs>(&in, 1),
                                     first, s, opts);
    if (first == s) return logits.value();
    const Var last = ops::slice_rows(logits, sched.offset(s), sched.offset(s) + sched.tokens(s));
    return last.value();
}

GenerationResult run(const Model& model, const CodeBook& cb, const ConditionBundle& cond_a,
                     const ConditionBundle& cond_b, std::size_t switch_scale, const SamplerConfig& cfg,
                     AttentionRecorder* recorder) {
    const ModelConfig& mc = model.config();
    const ScaleSchedule& sched = mc.schedule;
    const std::size_t n = sched.size();
    cfg.validate(n);
    if (cb.vocab() != mc.vocab || cb.channels() != mc.channels) {
        throw UsageError("codebook is " + std::to_string(cb.vocab()) + "x" + std::to_string(cb.channels()) +
                         " but the model expects " + std::to_string(mc.vocab) + "x" + std::to_string(mc.channels));
    }
    if (switch_scale == 0 || switch_scale > n + 1) {
        throw UsageError("switch scale " + std::to_string(switch_scale) + " outside [1, " + std::to_string(n + 1) + "]");
    }
    const bool causal = mc.regime == AttentionRegime::BlockCausal;
    std::unique_ptr<KVCache> cond_cache, uncond_cache;
    if (causal && cfg.use_cache) {
        cond_cache = std::make_unique<KVCache>(mc.depth, mc.width, mc.regime);
        uncond_cache = std::make_unique<KVCache>(mc.depth, mc.width, mc.regime);
    }
    const ConditionBundle null_cond = model.null_condition();

    GenerationResult res;
    res.pyramid = empty_pyramid(sched);
    Rng rng(cfg.seed);
    for (std::size_t s = 0; s < n; ++s) {
        const ConditionBundle& cond = s + 1 < switch_scale ? cond_a : cond_b;
        Tensor logits;
        try {
            logits = scale_logits(model, cb, res.pyramid, cond, s, cond_cache.get(), recorder, cfg.precision);
            ++res.stats.cond_passes;
            if (cfg_active(s + 1, n, cfg.cfg_off_last)) {
                const Tensor uncond = scale_logits(model, cb, res.pyramid, null_cond, s, uncond_cache.get(), nullptr,
                                                   cfg.precision);
                ++res.stats.uncond_passes;
                logits = apply_cfg(logits, uncond, cfg.guidance);
            }
            if (!logits.all_finite()) throw NumericError("guided logits contain non-finite values");
        } catch (const NumericError& e) {
            throw GenerationError("non-finite logits at scale " + std::to_string(s + 1) + ": " + e.what());
        }
        res.pyramid.grids[s].ids = select_tokens(logits, s + 1, n, cfg, rng);
    }
    res.latent = decode_pyramid(res.pyramid, cb, sched);
    res.image = latent_to_image(res.latent);
    return res;
}

}  // namespace

GenerationResult generate(const Model& model, const CodeBook& cb, const ConditionBundle& cond,
                          const SamplerConfig& cfg, AttentionRecorder* recorder) {
    return run(model, cb, cond, cond, 1, cfg, recorder);
}

GenerationResult switch_condition(const Model& model, const CodeBook& cb, const ConditionBundle& cond_a,
                                  const ConditionBundle& cond_b, std::size_t switch_scale, const SamplerConfig& cfg,
                                  AttentionRecorder* recorder) {
    return run(model, cb, cond_a, cond_b, switch_scale, cfg, recorder);
}

}  // namespace swtt
