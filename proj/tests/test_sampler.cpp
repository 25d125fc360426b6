#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "swtt/analysis.hpp"
#include "swtt/errors.hpp"
#include "swtt/kv_cache.hpp"
#include "swtt/model.hpp"
#include "swtt/random.hpp"
#include "swtt/sampler.hpp"
#include "swtt/token_file.hpp"
#include "swtt/toy_corpus.hpp"

using namespace swtt;

namespace {

ModelConfig small_config(AttentionRegime regime, std::uint64_t seed) {
    ModelConfig c;
    c.depth = 2;
    c.width = 16;
    c.heads = 2;
    c.ffn_hidden = 24;
    c.vocab = 8;
    c.channels = 3;
    c.text_width = 8;
    c.prompt_vocab = ToyCorpus::prompt_vocab();
    c.schedule = build_scale_schedule(4, {6, 6});
    c.regime = regime;
    c.seed = seed;
    return c;
}

Model perturbed_model(const ModelConfig& cfg, std::uint64_t seed) {
    Model m(cfg);
    Rng rng(seed);
    for (auto& [name, p] : m.named_parameters())
        for (double& v : p.mutable_value().data()) v += rng.truncated_normal(0.3);
    return m;
}

CodeBook random_codebook(std::size_t v, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({v, c});
    for (std::size_t i = c; i < t.size(); ++i) t[i] = 0.5 * rng.normal();
    return CodeBook(t);
}

}  // namespace

TEST_CASE("guidance combination identities") {
    const Tensor c = Tensor::matrix(1, 3, {1.0, -2.0, 0.3}), u = Tensor::matrix(1, 3, {0.5, 4.0, -1.0});
    CHECK(apply_cfg(c, u, 1.0).identical(c));
    CHECK(apply_cfg(c, u, 0.0).identical(u));
    const Tensor g = apply_cfg(c, u, 3.0);
    CHECK(g[0] == 0.5 + 3.0 * 0.5);
    CHECK(g[1] == 4.0 + 3.0 * -6.0);
    CHECK_THROWS_AS(apply_cfg(c, Tensor::matrix(3, 1, {0, 0, 0}), 2.0), DimensionError);
}

TEST_CASE("guidance is switched off for exactly the last K scales") {
    for (std::size_t n = 1; n <= 10; ++n) {
        for (std::size_t k = 0; k <= n; ++k) {
            std::size_t active = 0;
            for (std::size_t s = 1; s <= n; ++s) {
                const bool a = cfg_active(s, n, k);
                CHECK(a == (s <= n - k));
                active += a;
            }
            CHECK(active == n - k);
        }
    }
    CHECK_THROWS_AS(cfg_active(0, 4, 1), UsageError);
}

TEST_CASE("default temperature schedule") {
    const auto t = default_temperatures(6);
    CHECK(t[0] == 1.0);
    CHECK(t[1] == 1.0);
    CHECK(t[2] == 1.0);
    CHECK(t[3] == doctest::Approx(0.7));
    CHECK(t[4] == doctest::Approx(0.4));
    CHECK(t[5] == doctest::Approx(0.1));
    SamplerConfig sc;
    CHECK(sc.temperature(6, 6) == doctest::Approx(0.1));
    sc.temperatures = {1, 1};
    CHECK_THROWS_AS(sc.validate(3), ConfigError);
    sc.temperatures = {1, 1, 0};
    CHECK_THROWS_AS(sc.validate(3), ConfigError);
    SamplerConfig k;
    k.cfg_off_last = 5;
    CHECK_THROWS_AS(k.validate(4), ConfigError);
}

TEST_CASE("filtered distribution matches the reference values") {
    const std::vector<double> logits{2.0, 1.0, 0.0};
    const auto all = filtered_distribution(logits, 3, 0.95, 1.0);
    CHECK(all[0] == doctest::Approx(0.66524096).epsilon(1e-7));
    CHECK(all[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(all[2] == doctest::Approx(0.09003057).epsilon(1e-7));
    const auto nucleus = filtered_distribution(logits, 3, 0.9, 1.0);
    CHECK(nucleus[0] == doctest::Approx(0.7310585786).epsilon(1e-9));
    CHECK(nucleus[1] == doctest::Approx(0.2689414214).epsilon(1e-9));
    CHECK(nucleus[2] == 0.0);
    const auto top1 = filtered_distribution(logits, 1, 1.0, 1.0);
    CHECK(top1 == std::vector<double>{1.0, 0.0, 0.0});
    const auto hot = filtered_distribution(logits, 3, 1.0, 2.0);
    const double z = 1.0 + std::exp(-0.5) + std::exp(-1.0);
    CHECK(hot[2] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-12));
    // Ties keep the lower index first.
    const auto tie = filtered_distribution(std::vector<double>{1.0, 1.0, 1.0}, 2, 1.0, 1.0);
    CHECK(tie == std::vector<double>{0.5, 0.5, 0.0});
}

TEST_CASE("nucleus sampling frequencies follow the filtered distribution") {
    SamplerConfig sc;
    sc.top_k = 3;
    sc.top_p = 0.95;
    sc.nucleus_scales = 2;
    const Tensor logits = Tensor::matrix(1, 4, {2.0, 1.0, 0.0, -1.0});
    const auto p = filtered_distribution(logits.row(0), 3, 0.95, 1.0);
    Rng rng(21);
    std::vector<std::size_t> counts(4, 0);
    const std::size_t draws = 20000;
    for (std::size_t i = 0; i < draws; ++i) ++counts[select_tokens(logits, 1, 4, sc, rng)[0]];
    for (std::size_t i = 0; i < 4; ++i) {
        const double expect = p[i] * draws;
        const double sd = std::sqrt(draws * p[i] * (1 - p[i]));
        CHECK(std::abs(static_cast<double>(counts[i]) - expect) <= 3.0 * sd + 1e-9);
    }
    CHECK(counts[3] == 0);
}

TEST_CASE("low temperature Gumbel sampling is argmax") {
    SamplerConfig sc;
    sc.nucleus_scales = 0;
    sc.temperatures = {1e-9, 1e-9};
    Rng rng(3);
    Tensor logits({50, 6});
    Rng fill(4);
    for (double& v : logits.data()) v = fill.normal();
    const auto ids = select_tokens(logits, 2, 2, sc, rng);
    for (std::size_t r = 0; r < 50; ++r) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 6; ++i)
            if (logits.at(r, i) > logits.at(r, best)) best = i;
        CHECK(ids[r] == best);
    }
    Tensor bad = logits;
    bad[3] = NAN;
    CHECK_THROWS_AS(select_tokens(bad, 2, 2, sc, rng), NumericError);
}

TEST_CASE("KV-cached forwards equal the full block-causal forward") {
    const ModelConfig cfg = small_config(AttentionRegime::BlockCausal, 3);
    const Model m = perturbed_model(cfg, 4);
    const CodeBook cb = random_codebook(8, 3, 5);
    const ConditionBundle c = m.encode_prompt("red circle");
    const ScaleSchedule& s = cfg.schedule;
    FeatureMap f(3, 6, 6);
    Rng rng(6);
    for (double& v : f.values()) v = rng.normal();
    const ScaleInputs in = pyramid_inputs(encode_pyramid(f, cb, s), cb, s);
    const Tensor full = m.forward(std::span(&c, 1), std::span(&in, 1), 0, s.size() - 1).value();
    KVCache cache(cfg.depth, cfg.width, cfg.regime);
    ForwardOptions o;
    o.cache = &cache;
    for (std::size_t k = 0; k < s.size(); ++k) {
        ScaleInputs one;
        one.maps = {in.maps[k]};
        const Tensor part = m.forward(std::span(&c, 1), std::span(&one, 1), k, k, o).value();
        CHECK(cache.length() == s.offset(k) + s.tokens(k));
        for (std::size_t r = 0; r < part.rows(); ++r)
            for (std::size_t v = 0; v < part.cols(); ++v) CHECK(part.at(r, v) == full.at(s.offset(k) + r, v));
    }
    CHECK(cache.scale_tokens() == std::vector<std::size_t>{1, 4, 9, 36});
    CHECK_THROWS_AS(KVCache(2, 16, AttentionRegime::BlockDiagonal), UsageError);
}

TEST_CASE("generation with and without the cache is identical") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const ModelConfig cfg = small_config(AttentionRegime::BlockCausal, seed);
        const Model m = perturbed_model(cfg, 100 + seed);
        const CodeBook cb = random_codebook(8, 3, 200 + seed);
        SamplerConfig sc;
        sc.seed = seed;
        sc.guidance = 2.5;
        sc.cfg_off_last = 1;
        const ConditionBundle c = m.encode_prompt("blue square");
        const GenerationResult a = generate(m, cb, c, sc);
        sc.use_cache = false;
        const GenerationResult b = generate(m, cb, c, sc);
        CHECK(a.pyramid == b.pyramid);
        CHECK(a.image.pixels == b.image.pixels);
        CHECK(a.stats.uncond_passes == 3);
        CHECK(a.stats.cond_passes == 4);
    }
}

TEST_CASE("generation is deterministic and respects guidance switches") {
    const ModelConfig cfg = small_config(AttentionRegime::BlockDiagonal, 9);
    const Model m = perturbed_model(cfg, 10);
    const CodeBook cb = random_codebook(8, 3, 11);
    const ConditionBundle c = m.encode_prompt("green cross");
    SamplerConfig sc;
    sc.seed = 4;
    const GenerationResult a = generate(m, cb, c, sc), b = generate(m, cb, c, sc);
    CHECK(a.pyramid == b.pyramid);
    CHECK(a.stats.uncond_passes == 2);
    validate_pyramid(a.pyramid, cfg.schedule, 8);
    CHECK(a.latent.grid() == GridSize{6, 6});
    CHECK(a.image.width == 6);

    sc.guidance = 1.0;
    sc.cfg_off_last = 0;
    const GenerationResult g1 = generate(m, cb, c, sc);
    sc.cfg_off_last = 4;
    const GenerationResult off = generate(m, cb, c, sc);
    CHECK(g1.pyramid == off.pyramid);
    CHECK(off.stats.uncond_passes == 0);
    CHECK_THROWS_AS(generate(m, random_codebook(8, 2, 1), c, sc), UsageError);
}

TEST_CASE("condition switching uses the first condition before the switch scale") {
    const ModelConfig cfg = small_config(AttentionRegime::BlockDiagonal, 12);
    const Model m = perturbed_model(cfg, 13);
    const CodeBook cb = random_codebook(8, 3, 14);
    const ConditionBundle a = m.encode_prompt("red circle"), b = m.encode_prompt("yellow triangle");
    SamplerConfig sc;
    sc.seed = 8;
    CHECK(switch_condition(m, cb, a, b, 1, sc).pyramid == generate(m, cb, b, sc).pyramid);
    CHECK(switch_condition(m, cb, a, b, 5, sc).pyramid == generate(m, cb, a, sc).pyramid);
    const GenerationResult mid = switch_condition(m, cb, a, b, 3, sc);
    const GenerationResult pure_a = generate(m, cb, a, sc);
    CHECK(mid.pyramid.grids[0] == pure_a.pyramid.grids[0]);
    CHECK(mid.pyramid.grids[1] == pure_a.pyramid.grids[1]);
    CHECK_THROWS_AS(switch_condition(m, cb, a, b, 0, sc), UsageError);
    CHECK_THROWS_AS(switch_condition(m, cb, a, b, 6, sc), UsageError);
}

TEST_CASE("token files round trip") {
    TokenPyramid p;
    p.grids.push_back({1, 1, {3}});
    p.grids.push_back({2, 3, {0, 1, 2, 3, 4, 5}});
    const auto path = std::filesystem::temp_directory_path() / "swtt_tokens.swtk";
    write_token_file(path, p, 6);
    std::size_t vocab = 0;
    CHECK(read_token_file(path, &vocab) == p);
    CHECK(vocab == 6);
    CHECK(std::filesystem::file_size(path) == 16 + 8 + 2 + 8 + 12);
    CHECK_THROWS_AS(write_token_file(path, p, 5), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_token_file(path), FormatError);
}
