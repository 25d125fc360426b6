#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "swtt/analysis.hpp"
#include "swtt/errors.hpp"
#include "swtt/log.hpp"

namespace swtt {

double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw UsageError("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

std::vector<BenchCase> bench_cases(std::size_t k) {
    return {
        {"causal+cache cfg-all", AttentionRegime::BlockCausal, 0},
        {"causal+cache cfg-off-last-" + std::to_string(k), AttentionRegime::BlockCausal, k},
        {"diagonal cfg-all", AttentionRegime::BlockDiagonal, 0},
        {"diagonal cfg-off-last-" + std::to_string(k), AttentionRegime::BlockDiagonal, k},
    };
}

std::vector<BenchRow> latency_bench(const BenchConfig& cfg, const CodeBook& cb) {
    using Clock = std::chrono::steady_clock;
    if (cfg.reps == 0) throw BenchError("bench needs at least one repetition");
    const double tick_ms = 1e3 * static_cast<double>(Clock::period::num) / static_cast<double>(Clock::period::den);

    std::vector<BenchRow> rows;
    for (const BenchCase& bc : bench_cases(cfg.cfg_off_last)) {
        ModelConfig mc = cfg.model;
        mc.regime = bc.regime;
        const Model model(mc);
        const ConditionBundle cond = cfg.prompt.empty() ? model.null_condition() : model.encode_prompt(cfg.prompt);
        SamplerConfig sc;
        sc.guidance = cfg.guidance;
        sc.cfg_off_last = bc.cfg_off_last;
        sc.seed = cfg.seed;
        sc.use_cache = true;
        sc.precision = cfg.precision;

        std::vector<double> times;
        GenerationStats stats;
        for (std::size_t r = 0; r < cfg.warmup + cfg.reps; ++r) {
            const auto t0 = Clock::now();
            const GenerationResult res = generate(model, cb, cond, sc);
            const auto t1 = Clock::now();
            if (r >= cfg.warmup) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            stats = res.stats;
        }
        BenchRow row;
        row.bench = bc;
        row.median_ms = percentile(times, 0.5);
        row.iqr_ms = percentile(times, 0.75) - percentile(times, 0.25);
        row.step_ms = row.median_ms / static_cast<double>(mc.schedule.size());
        if (row.median_ms < 1000.0 * tick_ms) {
            throw BenchError("generation takes " + std::to_string(row.median_ms) +
                             " ms, too close to the clock resolution; increase width or the schedule size");
        }
        const GenerationFlops g = generation_flops(mc, cond.length(), false, sc);
        row.flops = g.total();
        row.attention_flops = g.attention;
        row.uncond_passes = stats.uncond_passes;
        log::debug(bc.name + ": median " + std::to_string(row.median_ms) + " ms");
        rows.push_back(row);
    }
    return rows;
}

std::vector<std::string> bench_ordering_violations(const std::vector<BenchRow>& rows) {
    std::vector<std::string> out;
    auto find = [&](AttentionRegime r, bool late_off) -> const BenchRow* {
        for (const BenchRow& row : rows)
            if (row.bench.regime == r && (row.bench.cfg_off_last > 0) == late_off) return &row;
        return nullptr;
    };
    auto expect_faster = [&](const BenchRow* fast, const BenchRow* slow) {
        if (fast && slow && !(fast->median_ms < slow->median_ms)) {
            out.push_back(fast->bench.name + " (" + std::to_string(fast->median_ms) + " ms) is not faster than " +
                          slow->bench.name + " (" + std::to_string(slow->median_ms) + " ms)");
        }
    };
    for (bool late : {false, true})
        expect_faster(find(AttentionRegime::BlockDiagonal, late), find(AttentionRegime::BlockCausal, late));
    for (AttentionRegime r : {AttentionRegime::BlockCausal, AttentionRegime::BlockDiagonal})
        expect_faster(find(r, true), find(r, false));
    return out;
}

void write_bench_table(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "config regime cfg_off_last median_ms iqr_ms step_ms flops attention_flops uncond_passes\n";
    for (const BenchRow& r : rows) {
        std::string name = r.bench.name;
        std::replace(name.begin(), name.end(), ' ', '/');
        os << name << ' ' << to_string(r.bench.regime) << ' ' << r.bench.cfg_off_last << std::fixed
           << std::setprecision(3) << ' ' << r.median_ms << ' ' << r.iqr_ms << ' ' << r.step_ms
           << std::defaultfloat << ' ' << r.flops << ' ' << r.attention_flops << ' ' << r.uncond_passes << '\n';
    }
}

}  // namespace swtt
