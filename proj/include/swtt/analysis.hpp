#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "swtt/codec.hpp"
#include "swtt/model.hpp"
#include "swtt/sampler.hpp"

namespace swtt {

// Per-scale inputs of a complete pyramid, as used by teacher forcing.
ScaleInputs pyramid_inputs(const TokenPyramid& p, const CodeBook& cb, const ScaleSchedule& sched);

// [N, L] mean cross-attention mass on each condition token, averaged over
// blocks, heads and the image positions of each scale. Rows sum to 1.
Tensor cross_attention_scale_map(const Model& model, const ConditionBundle& cond, const ScaleInputs& inputs);

// [N, N] scale-to-scale attention: entry (i, j) is the attention mass that a
// query of scale i puts on scale j, averaged over the queries of scale i,
// blocks, heads and the samples. Rows sum to 1.
Tensor self_attention_scale_map(const Model& model, std::span<const ConditionBundle> conds,
                                std::span<const ScaleInputs> inputs);

// Entry (i, j) (0-based) of a self-attention scale map; off-diagonal entries
// do not exist for block-diagonal models.
double scale_map_entry(const Tensor& map, AttentionRegime regime, std::size_t i, std::size_t j);

// Exact FLOPs issued by one Model::forward over scales [first, last] for a
// single sample, matching FlopCounter.
std::uint64_t forward_flops(const ModelConfig& cfg, std::size_t cond_len, bool crop, std::size_t first,
                            std::size_t last);
// Of which self- and cross-attention score/value products.
std::uint64_t attention_flops(const ModelConfig& cfg, std::size_t cond_len, std::size_t first, std::size_t last);

struct GenerationFlops {
    std::uint64_t conditional = 0;
    std::uint64_t unconditional = 0;
    std::uint64_t attention = 0;
    std::size_t forward_tokens = 0;  // rows pushed through the model, both passes
    std::size_t uncond_passes = 0;

    std::uint64_t total() const { return conditional + unconditional; }
};

// Analytic cost of generate() with the given sampler settings; the null
// condition has length 1.
GenerationFlops generation_flops(const ModelConfig& cfg, std::size_t cond_len, bool crop, const SamplerConfig& sc);

struct BenchCase {
    std::string name;
    AttentionRegime regime = AttentionRegime::BlockCausal;
    std::size_t cfg_off_last = 0;
};

struct BenchRow {
    BenchCase bench;
    double median_ms = 0.0;
    double iqr_ms = 0.0;
    double step_ms = 0.0;  // median / N
    std::uint64_t flops = 0;
    std::uint64_t attention_flops = 0;
    std::size_t uncond_passes = 0;
};

struct BenchConfig {
    ModelConfig model;  // regime is overridden per case
    std::size_t reps = 20;
    std::size_t warmup = 2;
    std::size_t cfg_off_last = 2;
    double guidance = 4.0;
    std::string prompt;  // empty selects the null condition
    Precision precision = Precision::Double;
    std::uint64_t seed = 0;
};

// The four configurations: causal + cache and block-diagonal, each with CFG
// on every scale and with CFG off at the last K scales.
std::vector<BenchCase> bench_cases(std::size_t cfg_off_last);
std::vector<BenchRow> latency_bench(const BenchConfig& cfg, const CodeBook& cb);

// Non-empty messages for every violated ordering: block-diagonal faster than
// causal at equal CFG setting, late-CFG-off faster than CFG-on per regime.
std::vector<std::string> bench_ordering_violations(const std::vector<BenchRow>& rows);

void write_bench_table(std::ostream& os, const std::vector<BenchRow>& rows);

// Median and interquartile range with linear interpolation between order statistics.
double percentile(std::vector<double> v, double q);

}  // namespace swtt
