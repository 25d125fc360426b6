#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "swtt/tensor.hpp"

namespace swtt {

struct GridSize {
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t area() const { return h * w; }
    friend bool operator==(const GridSize&, const GridSize&) = default;
};

// Token-grid sizes from coarse to fine. First entry is 1x1, sizes never shrink
// along either axis, and the last entry is the latent resolution.
class ScaleSchedule {
public:
    ScaleSchedule() = default;
    explicit ScaleSchedule(std::vector<GridSize> sizes);

    std::size_t size() const { return sizes_.size(); }
    const GridSize& operator[](std::size_t i) const { return sizes_.at(i); }
    const GridSize& final_size() const { return sizes_.back(); }
    const std::vector<GridSize>& sizes() const { return sizes_; }

    // Number of tokens of scale i and the offset of its first token in the
    // concatenated sequence.
    std::size_t tokens(std::size_t i) const { return sizes_.at(i).area(); }
    std::size_t offset(std::size_t i) const { return offsets_.at(i); }
    std::size_t total_tokens() const { return offsets_.back(); }

    friend bool operator==(const ScaleSchedule& a, const ScaleSchedule& b) { return a.sizes_ == b.sizes_; }

private:
    std::vector<GridSize> sizes_;
    std::vector<std::size_t> offsets_{0};
};

// Rounded geometric interpolation from 1 to the final size. The longer axis
// grows strictly; the shorter one follows proportionally.
ScaleSchedule build_scale_schedule(std::size_t n_scales, GridSize final_size);

// C x H x W latent map.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(std::size_t channels, std::size_t h, std::size_t w, double fill = 0.0);

    std::size_t channels() const { return channels_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    GridSize grid() const { return {h_, w_}; }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return values_[(c * h_ + y) * w_ + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return values_[(c * h_ + y) * w_ + x]; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    // Positions in row-major order as rows of a [h*w, C] matrix.
    Tensor to_tokens() const;
    bool all_finite() const;
    double squared_norm() const;

private:
    std::size_t channels_ = 0;
    std::size_t h_ = 0;
    std::size_t w_ = 0;
    std::vector<double> values_;
};

double mse(const FeatureMap& a, const FeatureMap& b);

// V x C code vectors shared by every scale. Rows are finite and pairwise distinct.
class CodeBook {
public:
    CodeBook() = default;
    explicit CodeBook(Tensor vectors);

    std::size_t vocab() const { return vectors_.empty() ? 0 : vectors_.dim(0); }
    std::size_t channels() const { return vectors_.empty() ? 0 : vectors_.dim(1); }
    const Tensor& vectors() const { return vectors_; }
    std::span<const double> code(std::size_t i) const { return vectors_.row(i); }

    // Exhaustive L2 nearest neighbour; ties go to the lowest index.
    std::size_t nearest(std::span<const double> v) const;

private:
    Tensor vectors_;
};

struct TokenGrid {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint32_t> ids;  // row-major

    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

struct TokenPyramid {
    std::vector<TokenGrid> grids;

    friend bool operator==(const TokenPyramid&, const TokenPyramid&) = default;
};

// Area average over the disjoint bin partition rows [floor(i*H/h), floor((i+1)*H/h)).
FeatureMap area_downsample(const FeatureMap& f, GridSize target);
// Each source cell is replicated over its bin; the adjoint of area_downsample
// up to the per-bin size.
FeatureMap upsample_nearest(const FeatureMap& f, GridSize target);

// Map of code vectors for one grid of tokens, at the grid's own resolution.
FeatureMap embed_grid(const TokenGrid& grid, const CodeBook& cb);

struct EncodeTrace {
    // ||r|| after each scale; entry 0 is ||f||.
    std::vector<double> residual_norms;
};

TokenPyramid encode_pyramid(const FeatureMap& f, const CodeBook& cb, const ScaleSchedule& sched,
                            EncodeTrace* trace = nullptr);
FeatureMap decode_pyramid(const TokenPyramid& p, const CodeBook& cb, const ScaleSchedule& sched);
// Sum of the first `upto` scales' upsampled embeddings at full resolution.
FeatureMap decode_prefix(const TokenPyramid& p, std::size_t upto, const CodeBook& cb, const ScaleSchedule& sched);
// decode_prefix(upto) area-resampled to the grid of scale upto+1 (or to the
// final grid when upto == N). upto == 0 gives zeros at scale 1's grid.
FeatureMap accumulate_prefix(const TokenPyramid& p, std::size_t upto, const CodeBook& cb, const ScaleSchedule& sched);

void validate_pyramid(const TokenPyramid& p, const ScaleSchedule& sched, std::size_t vocab);

struct FitOptions {
    bool anchor_zero = true;  // code 0 stays the zero vector (needs V >= 2)
    std::size_t lloyd_iters = 50;
};

struct FitResult {
    CodeBook codebook;
    // Mean reconstruction MSE of the accepted codebook after the initial fit
    // and after each harvest/fit round. Non-increasing.
    std::vector<double> mse_history;
};

FitResult fit_codebook(std::span<const FeatureMap> latents, std::size_t vocab, std::size_t rounds, std::uint64_t seed,
                       const ScaleSchedule& sched, const FitOptions& options = {});

FeatureMap perturb_latents(const FeatureMap& f, double sigma, std::uint64_t seed);

}  // namespace swtt
