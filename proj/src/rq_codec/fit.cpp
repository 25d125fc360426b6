#include <algorithm>
#include <cmath>
#include <set>

#include "swtt/codec.hpp"
#include "swtt/errors.hpp"
#include "swtt/random.hpp"

namespace swtt {

namespace {

using Samples = std::vector<std::vector<double>>;

double dist2(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
    return d;
}

void append_grid(const FeatureMap& m, Samples& out) {
    for (std::size_t y = 0; y < m.height(); ++y) {
        for (std::size_t x = 0; x < m.width(); ++x) {
            std::vector<double> v(m.channels());
            for (std::size_t c = 0; c < m.channels(); ++c) v[c] = m.at(c, y, x);
            out.push_back(std::move(v));
        }
    }
}

// Downsampled latents at every scale, before any quantization.
Samples harvest_initial(std::span<const FeatureMap> latents, const ScaleSchedule& sched) {
    Samples out;
    for (const FeatureMap& f : latents)
        for (std::size_t s = 0; s < sched.size(); ++s) append_grid(area_downsample(f, sched[s]), out);
    return out;
}

// Downsampled residuals seen by the encoder when quantizing with cb.
Samples harvest_residuals(std::span<const FeatureMap> latents, const CodeBook& cb, const ScaleSchedule& sched) {
    Samples out;
    for (const FeatureMap& f : latents) {
        FeatureMap residual = f;
        for (std::size_t s = 0; s < sched.size(); ++s) {
            const FeatureMap down = area_downsample(residual, sched[s]);
            append_grid(down, out);
            TokenGrid grid{sched[s].h, sched[s].w, std::vector<std::uint32_t>(sched[s].area())};
            std::vector<double> v(cb.channels());
            for (std::size_t y = 0; y < grid.h; ++y)
                for (std::size_t x = 0; x < grid.w; ++x) {
                    for (std::size_t c = 0; c < v.size(); ++c) v[c] = down.at(c, y, x);
                    grid.ids[y * grid.w + x] = static_cast<std::uint32_t>(cb.nearest(v));
                }
            const FeatureMap up = upsample_nearest(embed_grid(grid, cb), f.grid());
            for (std::size_t i = 0; i < residual.values().size(); ++i) residual.values()[i] -= up.values()[i];
        }
    }
    return out;
}

std::size_t nearest_center(const Samples& centers, std::span<const double> v) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        const double d = dist2(centers[i], v);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// k-means++ seeding. With an anchor, the zero vector is center 0 and is
// treated as already chosen.
Samples seed_centers(const Samples& data, std::size_t k, bool anchor, Rng& rng) {
    const std::size_t dim = data.front().size();
    Samples centers;
    if (anchor) centers.push_back(std::vector<double>(dim, 0.0));
    else centers.push_back(data[rng.uniform_index(data.size())]);
    std::vector<double> d2(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) d2[i] = dist2(data[i], centers[0]);
    while (centers.size() < k) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (pick = 0; pick + 1 < data.size(); ++pick) {
                if (u < d2[pick]) break;
                u -= d2[pick];
            }
            while (d2[pick] == 0.0) pick = (pick + 1) % data.size();
        }
        centers.push_back(data[pick]);
        for (std::size_t i = 0; i < data.size(); ++i) d2[i] = std::min(d2[i], dist2(data[i], centers.back()));
    }
    return centers;
}

Samples lloyd(const Samples& data, Samples centers, bool anchor, std::size_t iters) {
    const std::size_t k = centers.size(), dim = data.front().size();
    std::vector<std::size_t> assign(data.size(), k);
    for (std::size_t it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const std::size_t a = nearest_center(centers, data[i]);
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
        Samples sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < data.size(); ++i) {
            ++counts[assign[i]];
            for (std::size_t c = 0; c < dim; ++c) sums[assign[i]][c] += data[i][c];
        }
        for (std::size_t j = anchor ? 1 : 0; j < k; ++j) {
            if (counts[j] > 0) {
                for (std::size_t c = 0; c < dim; ++c) centers[j][c] = sums[j][c] / static_cast<double>(counts[j]);
                continue;
            }
            // Empty cluster: move it to the sample worst served by its center.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double d = dist2(data[i], centers[assign[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            centers[j] = data[far];
            assign[far] = j;
        }
    }
    return centers;
}

CodeBook to_codebook(const Samples& centers) {
    const std::size_t k = centers.size(), dim = centers.front().size();
    Tensor t({k, dim});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t c = 0; c < dim; ++c) t.at(i, c) = centers[i][c];
    return CodeBook(std::move(t));
}

Samples from_codebook(const CodeBook& cb) {
    Samples out(cb.vocab());
    for (std::size_t i = 0; i < cb.vocab(); ++i) out[i].assign(cb.code(i).begin(), cb.code(i).end());
    return out;
}

double reconstruction_mse(std::span<const FeatureMap> latents, const CodeBook& cb, const ScaleSchedule& sched) {
    double s = 0.0;
    for (const FeatureMap& f : latents) s += mse(decode_pyramid(encode_pyramid(f, cb, sched), cb, sched), f);
    return s / static_cast<double>(latents.size());
}

}  // namespace

FitResult fit_codebook(std::span<const FeatureMap> latents, std::size_t vocab, std::size_t rounds, std::uint64_t seed,
                       const ScaleSchedule& sched, const FitOptions& options) {
    if (latents.empty()) throw UsageError("fit_codebook: empty dataset");
    if (vocab == 0) throw UsageError("fit_codebook: vocabulary must be at least 1");
    for (const FeatureMap& f : latents) {
        if (f.grid() != sched.final_size() || f.channels() != latents.front().channels()) {
            throw UsageError("fit_codebook: latent does not match the schedule's final scale");
        }
    }
    const bool anchor = options.anchor_zero && vocab >= 2;

    Samples data = harvest_initial(latents, sched);
    std::set<std::vector<double>> distinct(data.begin(), data.end());
    if (anchor) distinct.insert(std::vector<double>(data.front().size(), 0.0));
    if (vocab > distinct.size()) {
        throw CodecError("fit_codebook: " + std::to_string(vocab) + " codes requested but only " +
                         std::to_string(distinct.size()) + " distinct samples");
    }

    Rng rng(seed);
    FitResult res;
    res.codebook = to_codebook(lloyd(data, seed_centers(data, vocab, anchor, rng), anchor, options.lloyd_iters));
    double best = reconstruction_mse(latents, res.codebook, sched);
    res.mse_history.push_back(best);
    for (std::size_t r = 0; r < rounds; ++r) {
        data = harvest_residuals(latents, res.codebook, sched);
        Samples centers = lloyd(data, from_codebook(res.codebook), anchor, options.lloyd_iters);
        try {
            CodeBook candidate = to_codebook(centers);
            const double m = reconstruction_mse(latents, candidate, sched);
            if (m <= best) {
                best = m;
                res.codebook = std::move(candidate);
            }
        } catch (const CodecError&) {
            // Collapsed centers; keep the previous codebook.
        }
        res.mse_history.push_back(best);
    }
    return res;
}

}  // namespace swtt
