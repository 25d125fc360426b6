#include <algorithm>
#include <cmath>

#include "swtt/codec.hpp"
#include "swtt/errors.hpp"
#include "swtt/random.hpp"

namespace swtt {

FeatureMap::FeatureMap(std::size_t channels, std::size_t h, std::size_t w, double fill)
    : channels_(channels), h_(h), w_(w), values_(channels * h * w, fill) {}

Tensor FeatureMap::to_tokens() const {
    Tensor t({h_ * w_, channels_});
    for (std::size_t y = 0; y < h_; ++y)
        for (std::size_t x = 0; x < w_; ++x)
            for (std::size_t c = 0; c < channels_; ++c) t.at(y * w_ + x, c) = at(c, y, x);
    return t;
}

bool FeatureMap::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double FeatureMap::squared_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
}

double mse(const FeatureMap& a, const FeatureMap& b) {
    if (a.channels() != b.channels() || a.grid() != b.grid()) throw DimensionError("mse: feature maps differ in shape");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.values().size());
}

CodeBook::CodeBook(Tensor vectors) : vectors_(std::move(vectors)) {
    if (vectors_.rank() != 2) throw CodecError("codebook must be a V x C matrix");
    if (!vectors_.all_finite()) throw CodecError("codebook has non-finite entries");
    const std::size_t v = vectors_.dim(0), c = vectors_.dim(1);
    for (std::size_t i = 0; i < v; ++i) {
        for (std::size_t j = i + 1; j < v; ++j) {
            if (std::equal(vectors_.ptr() + i * c, vectors_.ptr() + (i + 1) * c, vectors_.ptr() + j * c)) {
                throw CodecError("codebook rows " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
            }
        }
    }
}

std::size_t CodeBook::nearest(std::span<const double> v) const {
    const std::size_t n = vocab(), c = channels();
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = vectors_.ptr() + i * c;
        double d = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double t = v[k] - row[k];
            d += t * t;
        }
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

namespace {

std::size_t bin_start(std::size_t i, std::size_t src, std::size_t dst) { return i * src / dst; }

void check_shrink(const char* op, GridSize small, GridSize large) {
    if (small.h > large.h || small.w > large.w || small.h == 0 || small.w == 0) {
        throw DimensionError(std::string(op) + ": cannot map " + std::to_string(large.h) + "x" +
                             std::to_string(large.w) + " onto " + std::to_string(small.h) + "x" +
                             std::to_string(small.w));
    }
}

}  // namespace

FeatureMap area_downsample(const FeatureMap& f, GridSize target) {
    if (f.grid() == target) return f;
    check_shrink("area_downsample", target, f.grid());
    FeatureMap out(f.channels(), target.h, target.w);
    for (std::size_t c = 0; c < f.channels(); ++c) {
        for (std::size_t i = 0; i < target.h; ++i) {
            const std::size_t y0 = bin_start(i, f.height(), target.h), y1 = bin_start(i + 1, f.height(), target.h);
            for (std::size_t j = 0; j < target.w; ++j) {
                const std::size_t x0 = bin_start(j, f.width(), target.w), x1 = bin_start(j + 1, f.width(), target.w);
                double s = 0.0;
                for (std::size_t y = y0; y < y1; ++y)
                    for (std::size_t x = x0; x < x1; ++x) s += f.at(c, y, x);
                out.at(c, i, j) = s / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

FeatureMap upsample_nearest(const FeatureMap& f, GridSize target) {
    if (f.grid() == target) return f;
    check_shrink("upsample_nearest", f.grid(), target);
    std::vector<std::size_t> row_src(target.h), col_src(target.w);
    for (std::size_t i = 0; i < f.height(); ++i)
        for (std::size_t y = bin_start(i, target.h, f.height()); y < bin_start(i + 1, target.h, f.height()); ++y)
            row_src[y] = i;
    for (std::size_t j = 0; j < f.width(); ++j)
        for (std::size_t x = bin_start(j, target.w, f.width()); x < bin_start(j + 1, target.w, f.width()); ++x)
            col_src[x] = j;
    FeatureMap out(f.channels(), target.h, target.w);
    for (std::size_t c = 0; c < f.channels(); ++c)
        for (std::size_t y = 0; y < target.h; ++y)
            for (std::size_t x = 0; x < target.w; ++x) out.at(c, y, x) = f.at(c, row_src[y], col_src[x]);
    return out;
}

FeatureMap embed_grid(const TokenGrid& grid, const CodeBook& cb) {
    FeatureMap out(cb.channels(), grid.h, grid.w);
    for (std::size_t y = 0; y < grid.h; ++y) {
        for (std::size_t x = 0; x < grid.w; ++x) {
            const std::uint32_t id = grid.ids[y * grid.w + x];
            if (id >= cb.vocab()) {
                throw CodecError("token " + std::to_string(id) + " outside codebook of " + std::to_string(cb.vocab()));
            }
            const auto code = cb.code(id);
            for (std::size_t c = 0; c < cb.channels(); ++c) out.at(c, y, x) = code[c];
        }
    }
    return out;
}

void validate_pyramid(const TokenPyramid& p, const ScaleSchedule& sched, std::size_t vocab) {
    if (p.grids.size() != sched.size()) {
        throw CodecError("pyramid has " + std::to_string(p.grids.size()) + " scales, schedule has " +
                         std::to_string(sched.size()));
    }
    for (std::size_t i = 0; i < p.grids.size(); ++i) {
        const TokenGrid& g = p.grids[i];
        if (g.h != sched[i].h || g.w != sched[i].w || g.ids.size() != g.h * g.w) {
            throw CodecError("pyramid scale " + std::to_string(i + 1) + " does not match the schedule");
        }
        for (std::uint32_t id : g.ids) {
            if (id >= vocab) {
                throw CodecError("token " + std::to_string(id) + " at scale " + std::to_string(i + 1) +
                                 " outside codebook of " + std::to_string(vocab));
            }
        }
    }
}

TokenPyramid encode_pyramid(const FeatureMap& f, const CodeBook& cb, const ScaleSchedule& sched, EncodeTrace* trace) {
    if (cb.vocab() == 0) throw UsageError("encode_pyramid: empty codebook");
    if (f.channels() != cb.channels()) {
        throw UsageError("encode_pyramid: feature map has " + std::to_string(f.channels()) +
                         " channels, codebook has " + std::to_string(cb.channels()));
    }
    if (f.grid() != sched.final_size()) throw UsageError("encode_pyramid: feature map does not match final scale");
    if (!f.all_finite()) throw NumericError("encode_pyramid: non-finite feature map");

    FeatureMap residual = f;
    if (trace) trace->residual_norms = {std::sqrt(residual.squared_norm())};
    TokenPyramid p;
    std::vector<double> v(cb.channels());
    for (std::size_t s = 0; s < sched.size(); ++s) {
        const FeatureMap down = area_downsample(residual, sched[s]);
        TokenGrid grid{sched[s].h, sched[s].w, std::vector<std::uint32_t>(sched[s].area())};
        for (std::size_t y = 0; y < grid.h; ++y) {
            for (std::size_t x = 0; x < grid.w; ++x) {
                for (std::size_t c = 0; c < v.size(); ++c) v[c] = down.at(c, y, x);
                grid.ids[y * grid.w + x] = static_cast<std::uint32_t>(cb.nearest(v));
            }
        }
        const FeatureMap up = upsample_nearest(embed_grid(grid, cb), f.grid());
        for (std::size_t i = 0; i < residual.values().size(); ++i) residual.values()[i] -= up.values()[i];
        if (!residual.all_finite()) {
            throw NumericError("encode_pyramid: non-finite residual at scale " + std::to_string(s + 1));
        }
        if (trace) trace->residual_norms.push_back(std::sqrt(residual.squared_norm()));
        p.grids.push_back(std::move(grid));
    }
    return p;
}

FeatureMap decode_prefix(const TokenPyramid& p, std::size_t upto, const CodeBook& cb, const ScaleSchedule& sched) {
    validate_pyramid(p, sched, cb.vocab());
    if (upto > sched.size()) {
        throw DomainError("prefix of " + std::to_string(upto) + " scales requested from a " +
                          std::to_string(sched.size()) + "-scale pyramid");
    }
    const GridSize full = sched.final_size();
    FeatureMap acc(cb.channels(), full.h, full.w, 0.0);
    for (std::size_t s = 0; s < upto; ++s) {
        const FeatureMap up = upsample_nearest(embed_grid(p.grids[s], cb), full);
        for (std::size_t i = 0; i < acc.values().size(); ++i) acc.values()[i] += up.values()[i];
    }
    return acc;
}

FeatureMap decode_pyramid(const TokenPyramid& p, const CodeBook& cb, const ScaleSchedule& sched) {
    return decode_prefix(p, sched.size(), cb, sched);
}

FeatureMap accumulate_prefix(const TokenPyramid& p, std::size_t upto, const CodeBook& cb, const ScaleSchedule& sched) {
    const FeatureMap acc = decode_prefix(p, upto, cb, sched);
    const GridSize target = upto < sched.size() ? sched[upto] : sched.final_size();
    return area_downsample(acc, target);
}

FeatureMap perturb_latents(const FeatureMap& f, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw UsageError("perturb_latents: sigma must be non-negative");
    FeatureMap out = f;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (double& v : out.values()) v += sigma * rng.normal();
    return out;
}

}  // namespace swtt
