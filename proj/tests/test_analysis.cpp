#include <doctest.h>

#include <sstream>

#include "swtt/analysis.hpp"
#include "swtt/errors.hpp"
#include "swtt/random.hpp"
#include "swtt/toy_corpus.hpp"

using namespace swtt;

namespace {

ModelConfig small_config(AttentionRegime regime) {
    ModelConfig c;
    c.depth = 2;
    c.width = 16;
    c.heads = 2;
    c.ffn_hidden = 20;
    c.vocab = 8;
    c.channels = 3;
    c.text_width = 12;
    c.prompt_vocab = ToyCorpus::prompt_vocab();
    c.schedule = build_scale_schedule(4, {6, 6});
    c.regime = regime;
    c.seed = 3;
    return c;
}

Model perturbed(const ModelConfig& cfg) {
    Model m(cfg);
    Rng rng(9);
    for (auto& [name, p] : m.named_parameters())
        for (double& v : p.mutable_value().data()) v += rng.truncated_normal(0.3);
    return m;
}

CodeBook codebook() {
    Rng rng(5);
    Tensor t({8, 3});
    for (std::size_t i = 3; i < t.size(); ++i) t[i] = 0.5 * rng.normal();
    return CodeBook(t);
}

ScaleInputs inputs_for(const ModelConfig& cfg, std::uint64_t seed) {
    FeatureMap f(3, 6, 6);
    Rng rng(seed);
    for (double& v : f.values()) v = rng.normal();
    const CodeBook cb = codebook();
    return pyramid_inputs(encode_pyramid(f, cb, cfg.schedule), cb, cfg.schedule);
}

}  // namespace

TEST_CASE("analytic forward FLOPs equal the kernel counter") {
    for (AttentionRegime r : {AttentionRegime::BlockCausal, AttentionRegime::BlockDiagonal}) {
        for (bool swiglu : {true, false}) {
            ModelConfig cfg = small_config(r);
            cfg.variant.swiglu = swiglu;
            const Model m(cfg);
            const ScaleInputs in = inputs_for(cfg, 1);
            for (bool crop : {false, true}) {
                const ConditionBundle c =
                    m.encode_prompt("red circle", crop ? std::optional<CropCoords>(CropCoords{1, 2}) : std::nullopt);
                FlopCounter::reset();
                m.forward(std::span(&c, 1), std::span(&in, 1), 0, 3);
                CHECK(FlopCounter::value() == forward_flops(cfg, 2, crop, 0, 3));
                if (r == AttentionRegime::BlockDiagonal) {
                    ScaleInputs tail;
                    tail.maps.assign(in.maps.begin() + 1, in.maps.begin() + 3);
                    FlopCounter::reset();
                    m.forward(std::span(&c, 1), std::span(&tail, 1), 1, 2);
                    CHECK(FlopCounter::value() == forward_flops(cfg, 2, crop, 1, 2));
                }
            }
        }
    }
    CHECK(attention_flops(small_config(AttentionRegime::BlockCausal), 2, 0, 3) >
          attention_flops(small_config(AttentionRegime::BlockDiagonal), 2, 0, 3));
}

TEST_CASE("analytic generation FLOPs equal the kernel counter") {
    for (AttentionRegime r : {AttentionRegime::BlockCausal, AttentionRegime::BlockDiagonal}) {
        for (bool cache : {true, false}) {
            if (r == AttentionRegime::BlockDiagonal && !cache) continue;
            const ModelConfig cfg = small_config(r);
            const Model m = perturbed(cfg);
            SamplerConfig sc;
            sc.cfg_off_last = 1;
            sc.use_cache = cache;
            FlopCounter::reset();
            const GenerationResult g = generate(m, codebook(), m.encode_prompt("blue cross"), sc);
            const GenerationFlops a = generation_flops(cfg, 2, false, sc);
            CHECK(FlopCounter::value() == a.total());
            CHECK(a.uncond_passes == g.stats.uncond_passes);
            CHECK(a.uncond_passes == 3);
        }
    }
    SamplerConfig all, late;
    all.cfg_off_last = 0;
    late.cfg_off_last = 2;
    const ModelConfig cfg = small_config(AttentionRegime::BlockDiagonal);
    CHECK(generation_flops(cfg, 2, false, late).total() < generation_flops(cfg, 2, false, all).total());
    CHECK(generation_flops(cfg, 2, false, all).forward_tokens == 2 * cfg.schedule.total_tokens());
}

TEST_CASE("scale attention maps are row-stochastic and respect the regime") {
    for (AttentionRegime r : {AttentionRegime::BlockCausal, AttentionRegime::BlockDiagonal}) {
        const ModelConfig cfg = small_config(r);
        const Model m = perturbed(cfg);
        const std::vector<ConditionBundle> conds{m.encode_prompt("red circle"), m.encode_prompt("green")};
        const std::vector<ScaleInputs> ins{inputs_for(cfg, 1), inputs_for(cfg, 2)};
        const Tensor self = self_attention_scale_map(m, conds, ins);
        REQUIRE(self.shape() == Shape{4, 4});
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                s += self.at(i, j);
                if (j > i || (r == AttentionRegime::BlockDiagonal && j != i)) CHECK(self.at(i, j) == 0.0);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
        CHECK(self.at(0, 0) == 1.0);
        const Tensor cross = cross_attention_scale_map(m, conds[0], ins[0]);
        REQUIRE(cross.shape() == Shape{4, 2});
        for (std::size_t i = 0; i < 4; ++i) CHECK(cross.at(i, 0) + cross.at(i, 1) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("scale map entries outside the regime are a domain error") {
    const Tensor map = Tensor::matrix(2, 2, {1.0, 0.0, 0.3, 0.7});
    CHECK(scale_map_entry(map, AttentionRegime::BlockCausal, 1, 0) == 0.3);
    CHECK_THROWS_AS(scale_map_entry(map, AttentionRegime::BlockCausal, 0, 1), DomainError);
    CHECK(scale_map_entry(map, AttentionRegime::BlockDiagonal, 1, 1) == 0.7);
    CHECK_THROWS_AS(scale_map_entry(map, AttentionRegime::BlockDiagonal, 1, 0), DomainError);
    CHECK_THROWS_AS(scale_map_entry(map, AttentionRegime::BlockDiagonal, 2, 2), DomainError);
}

TEST_CASE("percentiles interpolate between order statistics") {
    CHECK(percentile({4, 1, 3, 2}, 0.5) == 2.5);
    CHECK(percentile({4, 1, 3, 2}, 0.25) == 1.75);
    CHECK(percentile({7}, 0.75) == 7.0);
    CHECK(percentile({1, 2, 3}, 1.0) == 3.0);
}

TEST_CASE("bench cases, ordering checks and table") {
    const auto cases = bench_cases(2);
    REQUIRE(cases.size() == 4);
    std::vector<BenchRow> rows;
    for (const BenchCase& c : cases) {
        BenchRow r;
        r.bench = c;
        const bool diag = c.regime == AttentionRegime::BlockDiagonal;
        r.median_ms = 40.0 - (diag ? 20.0 : 0.0) - (c.cfg_off_last > 0 ? 5.0 : 0.0);
        rows.push_back(r);
    }
    CHECK(bench_ordering_violations(rows).empty());
    for (BenchRow& r : rows)
        if (r.bench.regime == AttentionRegime::BlockDiagonal && r.bench.cfg_off_last > 0) r.median_ms = 100.0;
    CHECK(bench_ordering_violations(rows).size() == 2);
    std::ostringstream os;
    write_bench_table(os, rows);
    const std::string out = os.str();
    CHECK(out.rfind("config regime cfg_off_last median_ms", 0) == 0);
    std::size_t lines = 0;
    for (char c : out) lines += c == '\n';
    CHECK(lines == 5);
}
