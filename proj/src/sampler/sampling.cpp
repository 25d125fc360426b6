#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "swtt/errors.hpp"
#include "swtt/log.hpp"
#include "swtt/sampler.hpp"

namespace swtt {

void SamplerConfig::validate(std::size_t n_scales) const {
    if (!(guidance >= 0.0) || !std::isfinite(guidance)) throw ConfigError("guidance scale must be finite and >= 0");
    if (cfg_off_last > n_scales) {
        throw ConfigError("cfg_off_last " + std::to_string(cfg_off_last) + " exceeds " + std::to_string(n_scales) +
                          " scales");
    }
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    if (!temperatures.empty()) {
        if (temperatures.size() != n_scales) {
            throw ConfigError("temperature schedule has " + std::to_string(temperatures.size()) + " entries for " +
                              std::to_string(n_scales) + " scales");
        }
        for (double t : temperatures)
            if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("temperatures must be finite and > 0");
    }
}

std::vector<double> default_temperatures(std::size_t n_scales) {
    std::vector<double> t(n_scales, 1.0);
    if (n_scales <= 2) return t;
    const std::size_t span = n_scales - 3;
    for (std::size_t s = 3; s <= n_scales; ++s) {
        const double frac = span == 0 ? 0.0 : static_cast<double>(s - 3) / static_cast<double>(span);
        t[s - 1] = span == 0 ? 1.0 : 1.0 + (0.1 - 1.0) * frac;
    }
    return t;
}

double SamplerConfig::temperature(std::size_t scale, std::size_t n_scales) const {
    if (scale == 0 || scale > n_scales) throw UsageError("temperature: scale out of range");
    return temperatures.empty() ? default_temperatures(n_scales)[scale - 1] : temperatures[scale - 1];
}

Tensor apply_cfg(const Tensor& cond, const Tensor& uncond, double w) {
    if (cond.shape() != uncond.shape()) {
        throw DimensionError("apply_cfg: " + shape_str(cond.shape()) + " vs " + shape_str(uncond.shape()));
    }
    if (w == 1.0) return cond;
    if (w == 0.0) return uncond;
    Tensor out(cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + w * (cond[i] - uncond[i]);
    return out;
}

bool cfg_active(std::size_t scale, std::size_t n_scales, std::size_t cfg_off_last) {
    if (scale == 0 || scale > n_scales) throw UsageError("cfg_active: scale out of range");
    return scale + cfg_off_last <= n_scales;
}

std::vector<double> filtered_distribution(std::span<const double> logits, std::size_t top_k, double top_p,
                                          double temperature) {
    const std::size_t v = logits.size();
    if (v == 0) throw UsageError("filtered_distribution: empty logits");
    const std::size_t k = std::min(std::max<std::size_t>(top_k, 1), v);
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });

    const double top = logits[order[0]];
    std::vector<double> p(v, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double e = std::exp((logits[order[i]] - top) / temperature);
        p[order[i]] = e;
        z += e;
    }
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < k) {
        cum += p[order[keep]] / z;
        ++keep;
        if (cum >= top_p) break;
    }
    double kept = 0.0;
    for (std::size_t i = 0; i < keep; ++i) kept += p[order[i]];
    for (std::size_t i = keep; i < k; ++i) p[order[i]] = 0.0;
    for (std::size_t i = 0; i < keep; ++i) p[order[i]] /= kept;
    return p;
}

std::vector<std::uint32_t> select_tokens(const Tensor& logits, std::size_t scale, std::size_t n_scales,
                                         const SamplerConfig& cfg, Rng& rng) {
    if (logits.rank() != 2) throw DimensionError("select_tokens: logits must be [rows, V], got " + shape_str(logits.shape()));
    if (!logits.all_finite()) throw NumericError("select_tokens: non-finite logits at scale " + std::to_string(scale));
    const std::size_t v = logits.cols();
    if (cfg.top_k > v) {
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true)) {
            log::warn("top_k " + std::to_string(cfg.top_k) + " exceeds vocabulary " + std::to_string(v) + "; clamped");
        }
    }
    const double t = cfg.temperature(scale, n_scales);
    std::vector<std::uint32_t> ids(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto row = logits.row(r);
        if (scale <= cfg.nucleus_scales) {
            const std::vector<double> p = filtered_distribution(row, cfg.top_k, cfg.top_p, t);
            const double u = rng.uniform();
            double cum = 0.0;
            std::size_t pick = v;
            std::size_t last_nonzero = 0;
            for (std::size_t i = 0; i < v; ++i) {
                if (p[i] == 0.0) continue;
                last_nonzero = i;
                cum += p[i];
                if (u < cum) {
                    pick = i;
                    break;
                }
            }
            ids[r] = static_cast<std::uint32_t>(pick == v ? last_nonzero : pick);
        } else {
            std::size_t best = 0;
            double best_v = -INFINITY;
            for (std::size_t i = 0; i < v; ++i) {
                const double s = row[i] + t * rng.gumbel();
                if (s > best_v) {
                    best_v = s;
                    best = i;
                }
            }
            ids[r] = static_cast<std::uint32_t>(best);
        }
    }
    return ids;
}

}  // namespace swtt
