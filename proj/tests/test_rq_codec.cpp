#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "swtt/codec.hpp"
#include "swtt/errors.hpp"
#include "swtt/image_io.hpp"
#include "swtt/random.hpp"

using namespace swtt;

namespace {

const std::filesystem::path kGolden = SWTT_GOLDEN_DIR;

FeatureMap random_map(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, double scale = 1.0) {
    FeatureMap f(c, h, w);
    Rng rng(seed);
    for (double& v : f.values()) v = scale * rng.normal();
    return f;
}

CodeBook random_codebook(std::size_t v, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({v, c});
    for (std::size_t i = c; i < t.size(); ++i) t[i] = 0.7 * rng.normal();
    return CodeBook(t);
}

std::string schedule_str(const ScaleSchedule& s) {
    std::string out;
    for (const GridSize& g : s.sizes()) {
        if (!out.empty()) out += " ";
        out += std::to_string(g.h) + "x" + std::to_string(g.w);
    }
    return out;
}

}  // namespace

TEST_CASE("schedules match the reference table") {
    std::ifstream is(kGolden / "schedules.txt");
    REQUIRE(is);
    std::string line;
    std::size_t cases = 0;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::size_t n, h, w;
        ls >> n >> h >> w;
        std::string rest;
        std::getline(ls, rest);
        rest.erase(0, rest.find_first_not_of(' '));
        CAPTURE(line);
        const ScaleSchedule s = build_scale_schedule(n, {h, w});
        CHECK(schedule_str(s) == rest);
        ++cases;
    }
    CHECK(cases == 8);
}

TEST_CASE("schedule invariants and rejections") {
    for (std::size_t side = 1; side <= 24; ++side) {
        for (std::size_t n = 1; n <= side; ++n) {
            if (n == 1 && side != 1) continue;
            const ScaleSchedule s = build_scale_schedule(n, {side, side});
            REQUIRE(s.size() == n);
            CHECK(s[0] == GridSize{1, 1});
            CHECK(s.final_size() == GridSize{side, side});
            for (std::size_t i = 1; i < n; ++i) CHECK(s[i].h > s[i - 1].h);
        }
    }
    CHECK_THROWS_AS(build_scale_schedule(5, {4, 4}), ScheduleError);
    CHECK_THROWS_AS(build_scale_schedule(0, {4, 4}), ScheduleError);
    CHECK_THROWS_AS(build_scale_schedule(1, {4, 4}), ScheduleError);
    CHECK_THROWS_AS(ScaleSchedule({{2, 2}}), ScheduleError);
    CHECK_THROWS_AS(ScaleSchedule({{1, 1}, {3, 3}, {2, 4}}), ScheduleError);
    const ScaleSchedule s({{1, 1}, {2, 3}, {4, 4}});
    CHECK(s.offset(2) == 7);
    CHECK(s.total_tokens() == 23);
}

TEST_CASE("encoding matches the reference residual quantizer") {
    std::ifstream is(kGolden / "rq_case.txt");
    REQUIRE(is);
    std::size_t c, h, w, v, n;
    is >> c >> h >> w >> v >> n;
    FeatureMap f(c, h, w);
    for (double& x : f.values()) is >> x;
    Tensor cbv({v, c});
    for (double& x : cbv.data()) is >> x;
    const CodeBook cb(cbv);
    std::vector<GridSize> sizes;
    TokenPyramid expect;
    for (std::size_t s = 0; s < n; ++s) {
        TokenGrid g;
        is >> g.h >> g.w;
        g.ids.resize(g.h * g.w);
        for (auto& id : g.ids) is >> id;
        sizes.push_back({g.h, g.w});
        expect.grids.push_back(g);
    }
    FeatureMap recon(c, h, w);
    for (double& x : recon.values()) is >> x;
    REQUIRE(is);

    const ScaleSchedule sched = build_scale_schedule(n, {h, w});
    CHECK(sched.sizes() == sizes);
    const TokenPyramid p = encode_pyramid(f, cb, sched);
    CHECK(p == expect);
    const FeatureMap dec = decode_pyramid(p, cb, sched);
    for (std::size_t i = 0; i < dec.values().size(); ++i) CHECK(dec.values()[i] == doctest::Approx(recon.values()[i]).epsilon(1e-12));
}

TEST_CASE("each chosen code is the exhaustive nearest neighbour of the residual mean") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const std::size_t side = 2 + seed % 3, v = 4 + seed % 13;
        const FeatureMap f = random_map(2, side, side, seed);
        const CodeBook cb = random_codebook(v, 2, 100 + seed);
        const ScaleSchedule sched = build_scale_schedule(std::min<std::size_t>(3, side), {side, side});
        const TokenPyramid p = encode_pyramid(f, cb, sched);
        FeatureMap residual = f;
        for (std::size_t s = 0; s < sched.size(); ++s) {
            const FeatureMap d = area_downsample(residual, sched[s]);
            for (std::size_t y = 0; y < sched[s].h; ++y) {
                for (std::size_t x = 0; x < sched[s].w; ++x) {
                    const std::uint32_t chosen = p.grids[s].ids[y * sched[s].w + x];
                    auto dist = [&](std::size_t k) {
                        double t = 0.0;
                        for (std::size_t ch = 0; ch < 2; ++ch) t += std::pow(d.at(ch, y, x) - cb.code(k)[ch], 2);
                        return t;
                    };
                    for (std::size_t k = 0; k < v; ++k) {
                        if (k < chosen) CHECK(dist(k) > dist(chosen));
                        else CHECK(dist(k) >= dist(chosen));
                    }
                }
            }
            const FeatureMap up = upsample_nearest(embed_grid(p.grids[s], cb), f.grid());
            for (std::size_t i = 0; i < residual.values().size(); ++i) residual.values()[i] -= up.values()[i];
        }
    }
}

TEST_CASE("decode equals the explicit sum of upsampled scale embeddings") {
    const FeatureMap f = random_map(3, 8, 8, 4);
    const CodeBook cb = random_codebook(12, 3, 5);
    const ScaleSchedule sched = build_scale_schedule(4, {8, 8});
    const TokenPyramid p = encode_pyramid(f, cb, sched);
    const FeatureMap dec = decode_pyramid(p, cb, sched);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < 8; ++y) {
            for (std::size_t x = 0; x < 8; ++x) {
                double s = 0.0;
                for (std::size_t k = 0; k < sched.size(); ++k) {
                    const GridSize g = sched[k];
                    const std::size_t gy = y * g.h / 8, gx = x * g.w / 8;
                    s += cb.code(p.grids[k].ids[gy * g.w + gx])[c];
                }
                CHECK(dec.at(c, y, x) == doctest::Approx(s).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("prefix sums telescope to the full decode") {
    const FeatureMap f = random_map(2, 9, 9, 6);
    const CodeBook cb = random_codebook(10, 2, 7);
    const ScaleSchedule sched = build_scale_schedule(5, {9, 9});
    const TokenPyramid p = encode_pyramid(f, cb, sched);
    CHECK(decode_prefix(p, 0, cb, sched).squared_norm() == 0.0);
    for (std::size_t k = 0; k < sched.size(); ++k) {
        const FeatureMap a = decode_prefix(p, k, cb, sched), b = decode_prefix(p, k + 1, cb, sched);
        const FeatureMap step = upsample_nearest(embed_grid(p.grids[k], cb), sched.final_size());
        for (std::size_t i = 0; i < a.values().size(); ++i)
            CHECK(b.values()[i] == doctest::Approx(a.values()[i] + step.values()[i]).epsilon(1e-14));
        CHECK(accumulate_prefix(p, k, cb, sched).grid() == sched[k]);
    }
    CHECK(accumulate_prefix(p, sched.size(), cb, sched).grid() == sched.final_size());
    CHECK_THROWS_AS(decode_prefix(p, 6, cb, sched), DomainError);
}

TEST_CASE("residual norms never increase when code 0 is zero") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const FeatureMap f = random_map(3, 8, 8, seed, 2.0);
        const CodeBook cb = random_codebook(16, 3, 50 + seed);
        EncodeTrace trace;
        encode_pyramid(f, cb, build_scale_schedule(5, {8, 8}), &trace);
        REQUIRE(trace.residual_norms.size() == 6);
        for (std::size_t i = 1; i < trace.residual_norms.size(); ++i)
            CHECK(trace.residual_norms[i] <= trace.residual_norms[i - 1] + 1e-12);
    }
}

TEST_CASE("area downsample and nearest upsample are adjoint up to bin size") {
    const FeatureMap a = random_map(2, 7, 5, 8), b = random_map(2, 3, 2, 9);
    const FeatureMap da = area_downsample(a, {3, 2});
    const FeatureMap ub = upsample_nearest(b, {7, 5});
    double lhs = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) lhs += a.values()[i] * ub.values()[i];
    double rhs = 0.0;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const std::size_t area = ((i + 1) * 7 / 3 - i * 7 / 3) * ((j + 1) * 5 / 2 - j * 5 / 2);
                rhs += static_cast<double>(area) * da.at(c, i, j) * b.at(c, i, j);
            }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    const FeatureMap round = area_downsample(upsample_nearest(b, {7, 5}), {3, 2});
    for (std::size_t i = 0; i < b.values().size(); ++i) CHECK(round.values()[i] == doctest::Approx(b.values()[i]));
    CHECK_THROWS_AS(area_downsample(a, {8, 5}), DimensionError);
}

TEST_CASE("codec input validation") {
    const CodeBook cb = random_codebook(4, 2, 1);
    const ScaleSchedule sched = build_scale_schedule(3, {4, 4});
    CHECK_THROWS_AS(encode_pyramid(random_map(3, 4, 4, 1), cb, sched), UsageError);
    CHECK_THROWS_AS(encode_pyramid(random_map(2, 5, 5, 1), cb, sched), UsageError);
    FeatureMap bad = random_map(2, 4, 4, 1);
    bad.at(0, 1, 1) = NAN;
    CHECK_THROWS_AS(encode_pyramid(bad, cb, sched), NumericError);
    TokenPyramid p = encode_pyramid(random_map(2, 4, 4, 2), cb, sched);
    p.grids[1].ids[0] = 9;
    CHECK_THROWS_AS(decode_pyramid(p, cb, sched), CodecError);
    CHECK_THROWS_AS(CodeBook(Tensor::matrix(2, 2, {1, 1, 1, 1})), CodecError);
}

TEST_CASE("fitting keeps code 0 at zero and never worsens reconstruction") {
    const ScaleSchedule sched = build_scale_schedule(4, {8, 8});
    std::vector<FeatureMap> latents;
    for (std::uint64_t s = 0; s < 6; ++s) latents.push_back(random_map(3, 8, 8, 200 + s));
    const FitResult r = fit_codebook(latents, 16, 3, 11, sched);
    CHECK(r.codebook.vocab() == 16);
    for (double v : r.codebook.code(0)) CHECK(v == 0.0);
    REQUIRE(r.mse_history.size() == 4);
    for (std::size_t i = 1; i < r.mse_history.size(); ++i) CHECK(r.mse_history[i] <= r.mse_history[i - 1]);
    const FitResult again = fit_codebook(latents, 16, 3, 11, sched);
    CHECK(again.codebook.vectors().identical(r.codebook.vectors()));
    CHECK_THROWS_AS(fit_codebook(latents, 0, 1, 1, sched), UsageError);
}

TEST_CASE("perturbation noise has the requested spread") {
    const FeatureMap f(3, 32, 32, 0.5);
    const FeatureMap g = perturb_latents(f, 0.1, 3);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < g.values().size(); ++i) {
        const double d = g.values()[i] - 0.5;
        sum += d;
        sq += d * d;
    }
    const double n = static_cast<double>(g.values().size());
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::sqrt(sq / n) == doctest::Approx(0.1).epsilon(0.05));
    CHECK(perturb_latents(f, 0.0, 3).values()[0] == 0.5);
    CHECK_THROWS_AS(perturb_latents(f, -1.0, 3), UsageError);
}

TEST_CASE("images round-trip through png and netpbm") {
    const auto dir = std::filesystem::temp_directory_path() / "swtt_test_images";
    std::filesystem::create_directories(dir);
    Image rgb{5, 4, 3, {}};
    for (std::size_t i = 0; i < 60; ++i) rgb.pixels.push_back(static_cast<std::uint8_t>(i * 17 % 256));
    for (const char* name : {"a.png", "a.ppm"}) {
        write_image(dir / name, rgb);
        const Image back = read_image(dir / name);
        CHECK(back.width == 5);
        CHECK(back.height == 4);
        CHECK(back.pixels == rgb.pixels);
    }
    CHECK_THROWS_AS(write_image(dir / "a.bmp", rgb), UsageError);
    CHECK_THROWS_AS(read_image(dir / "missing.png"), FormatError);

    const FeatureMap lat = image_to_latent(rgb, {4, 5});
    CHECK(lat.at(0, 0, 0) == -1.0);
    CHECK(latent_to_image(lat).pixels == rgb.pixels);
    std::filesystem::remove_all(dir);
}
