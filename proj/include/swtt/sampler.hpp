#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "swtt/codec.hpp"
#include "swtt/image_io.hpp"
#include "swtt/model.hpp"
#include "swtt/random.hpp"

namespace swtt {

struct SamplerConfig {
    double guidance = 4.0;
    std::size_t cfg_off_last = 2;       // K: guidance disabled at the last K scales
    std::vector<double> temperatures;   // per scale; empty selects default_temperatures
    std::size_t top_k = 400;
    double top_p = 0.95;
    std::size_t nucleus_scales = 2;     // scales sampled with top-k/top-p
    std::uint64_t seed = 0;
    bool use_cache = true;              // block-causal models only
    Precision precision = Precision::Double;  // transformer blocks; the head stays double

    void validate(std::size_t n_scales) const;
    double temperature(std::size_t scale, std::size_t n_scales) const;  // scale is 1-based
};

// 1.0 at scales 1-2, then linear from 1.0 down to 0.1 over scales 3..N.
std::vector<double> default_temperatures(std::size_t n_scales);

Tensor apply_cfg(const Tensor& cond, const Tensor& uncond, double w);

// False iff scale > N - K (1-based scale).
bool cfg_active(std::size_t scale, std::size_t n_scales, std::size_t cfg_off_last);

// Probabilities after temperature, top-k and top-p filtering. Top-p keeps the
// smallest descending-probability prefix whose mass reaches top_p, measured
// after renormalizing the top-k set.
std::vector<double> filtered_distribution(std::span<const double> logits, std::size_t top_k, double top_p,
                                          double temperature);

// One token per row of logits[R, V]. Nucleus scales draw one uniform per row;
// later scales draw V Gumbels per row and take argmax(logits + t * g).
std::vector<std::uint32_t> select_tokens(const Tensor& logits, std::size_t scale, std::size_t n_scales,
                                         const SamplerConfig& cfg, Rng& rng);

struct GenerationStats {
    std::size_t cond_passes = 0;
    std::size_t uncond_passes = 0;
};

struct GenerationResult {
    TokenPyramid pyramid;
    FeatureMap latent;
    Image image;
    GenerationStats stats;
};

GenerationResult generate(const Model& model, const CodeBook& cb, const ConditionBundle& cond,
                          const SamplerConfig& cfg, AttentionRecorder* recorder = nullptr);

// Scales before switch_scale (1-based) use cond_a, the rest cond_b.
GenerationResult switch_condition(const Model& model, const CodeBook& cb, const ConditionBundle& cond_a,
                                  const ConditionBundle& cond_b, std::size_t switch_scale, const SamplerConfig& cfg,
                                  AttentionRecorder* recorder = nullptr);

}  // namespace swtt
