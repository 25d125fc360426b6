#include <algorithm>

#include "swtt/analysis.hpp"
#include "swtt/errors.hpp"

namespace swtt {

ScaleInputs pyramid_inputs(const TokenPyramid& p, const CodeBook& cb, const ScaleSchedule& sched) {
    ScaleInputs in;
    for (std::size_t s = 0; s < sched.size(); ++s) {
        in.maps.push_back(s == 0 ? Tensor({1, cb.channels()}, 0.0) : accumulate_prefix(p, s, cb, sched).to_tokens());
    }
    return in;
}

namespace {

std::size_t scale_of(const ScaleSchedule& sched, std::size_t pos) {
    std::size_t s = 0;
    while (s + 1 < sched.size() && sched.offset(s + 1) <= pos) ++s;
    return s;
}

}  // namespace

Tensor cross_attention_scale_map(const Model& model, const ConditionBundle& cond, const ScaleInputs& inputs) {
    const ModelConfig& mc = model.config();
    const ScaleSchedule& sched = mc.schedule;
    const std::size_t n = sched.size(), len = cond.length();
    Tensor map({n, len}, 0.0);
    std::vector<double> counts(n, 0.0);
    AttentionRecorder rec;
    rec.cross_attention = [&](std::size_t, std::size_t, std::size_t row, std::size_t k_begin,
                              std::span<const double> probs) {
        const std::size_t s = scale_of(sched, row);
        for (std::size_t j = 0; j < probs.size(); ++j) map.at(s, k_begin + j) += probs[j];
        counts[s] += 1.0;
    };
    ForwardOptions opts;
    opts.recorder = &rec;
    model.forward(std::span<const ConditionBundle>(&cond, 1), std::span<const ScaleInputs>(&inputs, 1), 0, n - 1, opts);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < len; ++j) map.at(s, j) /= counts[s];
    return map;
}

Tensor self_attention_scale_map(const Model& model, std::span<const ConditionBundle> conds,
                                std::span<const ScaleInputs> inputs) {
    const ScaleSchedule& sched = model.config().schedule;
    const std::size_t n = sched.size(), t = sched.total_tokens();
    Tensor map({n, n}, 0.0);
    std::vector<double> counts(n, 0.0);
    AttentionRecorder rec;
    rec.self_attention = [&](std::size_t, std::size_t, std::size_t row, std::size_t k_begin,
                             std::span<const double> probs) {
        const std::size_t base = (row / t) * t;
        const std::size_t si = scale_of(sched, row - base);
        for (std::size_t j = 0; j < probs.size(); ++j) map.at(si, scale_of(sched, k_begin + j - base)) += probs[j];
        counts[si] += 1.0;
    };
    ForwardOptions opts;
    opts.recorder = &rec;
    model.forward(conds, inputs, 0, n - 1, opts);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) map.at(i, j) /= counts[i];
    return map;
}

double scale_map_entry(const Tensor& map, AttentionRegime regime, std::size_t i, std::size_t j) {
    if (map.rank() != 2 || i >= map.rows() || j >= map.cols()) throw DomainError("scale map index out of range");
    if (regime == AttentionRegime::BlockDiagonal && i != j) {
        throw DomainError("block-diagonal attention has no scale " + std::to_string(i + 1) + " -> " +
                          std::to_string(j + 1) + " entry");
    }
    if (regime == AttentionRegime::BlockCausal && j > i) {
        throw DomainError("block-causal attention has no entry from scale " + std::to_string(i + 1) +
                          " to later scale " + std::to_string(j + 1));
    }
    return map.at(i, j);
}

}  // namespace swtt
