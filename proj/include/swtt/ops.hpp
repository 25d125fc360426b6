#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "swtt/autodiff.hpp"

// Differentiable primitives over row-major 2-D tensors. Shapes are explicit:
// the only broadcasts are scalar ones and the named *_rowvec / repeat_rows ops.
namespace swtt::ops {

inline constexpr double kNormEps = 1e-12;

Var matmul(const Var& a, const Var& b);
// x[M,K] * w[K,N] (+ bias[N] if defined).
Var linear(const Var& x, const Var& w, const Var& bias = Var());

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var add_rowvec(const Var& x, const Var& v);
Var mul_rowvec(const Var& x, const Var& v);
// Row r of x is emitted counts[r] times, in order.
Var repeat_rows(const Var& x, std::span<const std::size_t> counts);

Var exp(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);

Var softmax_rows(const Var& a);
// sqrt(mean(a^2)) over every element, as a scalar.
Var rms(const Var& a);
// Normalizes each contiguous group of `group` columns by its RMS; optional
// gain has length `group` and is shared by all groups.
Var rms_norm(const Var& x, std::size_t group, const Var& gain = Var());
// Zero-mean, unit-variance normalization per row (no affine).
Var layer_norm(const Var& x);

Var sum(const Var& a);
Var mean(const Var& a);
// Column means of x[M,N] as [1,N].
Var mean_rows(const Var& x);

Var reshape(const Var& a, Shape shape);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

Var embedding(const Var& table, std::span<const std::size_t> indices);

// Mean token cross-entropy of logits[M,V] against integer targets.
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);

// Rounds to bfloat16 in the forward pass; gradient passes straight through.
Var round_bf16(const Var& a);

// Rotates consecutive pairs of every head slice of x[R, heads*hd] by the
// angles whose cos/sin are given per row in tables of shape [R, hd/2].
Var rope_rotate(const Var& x, const Tensor& cos, const Tensor& sin, std::size_t heads);

// A rectangle of the attention pattern: query rows [q_begin, q_end) attend to
// key rows [k_begin, k_end). Every query row belongs to exactly one block.
struct AttentionBlock {
    std::size_t q_begin = 0;
    std::size_t q_end = 0;
    std::size_t k_begin = 0;
    std::size_t k_end = 0;
};

// Receives the softmax row of one (head, query row); keys start at k_begin.
using AttentionProbe =
    std::function<void(std::size_t head, std::size_t q_row, std::size_t k_begin, std::span<const double> probs)>;

// Multi-head scaled dot-product attention. q[R, H*hd], k/v[S, H*hd].
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::span<const AttentionBlock> blocks,
              double logit_scale, const AttentionProbe* probe = nullptr);

}  // namespace swtt::ops
