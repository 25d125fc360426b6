#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "swtt/errors.hpp"
#include "swtt/ops.hpp"

namespace swtt::ops {

namespace {

struct Layout {
    std::size_t rows;
    std::size_t keys;
    std::size_t width;
    std::size_t heads;
    std::size_t hd;
};

// One head's slice of a [n, heads*hd] matrix, row-major [n, hd] or
// transposed [hd, n].
std::vector<double> pack_head(const Tensor& x, const Layout& l, std::size_t h, bool transpose) {
    const std::size_t n = x.dim(0);
    std::vector<double> out(n * l.hd);
    for (std::size_t r = 0; r < n; ++r) {
        const double* src = x.ptr() + r * l.width + h * l.hd;
        for (std::size_t d = 0; d < l.hd; ++d) {
            if (transpose) {
                out[d * n + r] = src[d];
            } else {
                out[r * l.hd + d] = src[d];
            }
        }
    }
    return out;
}

// Softmax of scaled q.k over keys [k_begin, k_begin + n); kt is [hd, keys].
void row_probs(const double* qr, const double* kt, std::size_t keys, std::size_t hd, std::size_t k_begin,
               std::size_t n, double logit_scale, double* probs) {
    std::fill(probs, probs + n, 0.0);
    for (std::size_t d = 0; d < hd; ++d) {
        const double qd = qr[d];
        const double* kd = kt + d * keys + k_begin;
        for (std::size_t j = 0; j < n; ++j) probs[j] += qd * kd[j];
    }
    double m = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
        probs[j] *= logit_scale;
        m = std::max(m, probs[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        probs[j] = std::exp(probs[j] - m);
        z += probs[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) probs[j] *= inv;
}

// Probabilities of every (head, block, row) kept for the backward pass.
struct SavedProbs {
    std::vector<std::vector<double>> per_head;
};

}  // namespace

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::span<const AttentionBlock> blocks,
              double logit_scale, const AttentionProbe* probe) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2 || kv.shape() != vv.shape() || qv.dim(1) != kv.dim(1)) {
        throw DimensionError("attention: incompatible q " + shape_str(qv.shape()) + ", k " + shape_str(kv.shape()) +
                             ", v " + shape_str(vv.shape()));
    }
    if (heads == 0 || qv.dim(1) % heads != 0) throw DimensionError("attention: width not divisible by heads");
    const Layout l{qv.dim(0), kv.dim(0), qv.dim(1), heads, qv.dim(1) / heads};

    std::vector<char> covered(l.rows, 0);
    for (const AttentionBlock& b : blocks) {
        if (b.q_end > l.rows || b.k_end > l.keys || b.q_begin > b.q_end || b.k_begin > b.k_end) {
            throw DimensionError("attention: block outside operands");
        }
        if (b.k_begin == b.k_end && b.q_begin != b.q_end) {
            throw UsageError("attention: fully masked query rows [" + std::to_string(b.q_begin) + ", " +
                             std::to_string(b.q_end) + ")");
        }
        for (std::size_t r = b.q_begin; r < b.q_end; ++r) {
            if (covered[r]) throw UsageError("attention: query row " + std::to_string(r) + " in two blocks");
            covered[r] = 1;
        }
    }
    if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
        throw UsageError("attention: some query rows are not covered by any block");
    }

    const bool keep = Tape::active() != nullptr && (q.requires_grad() || k.requires_grad() || v.requires_grad());
    std::size_t prob_count = 0;
    for (const AttentionBlock& b : blocks) prob_count += (b.q_end - b.q_begin) * (b.k_end - b.k_begin);
    auto saved = std::make_shared<SavedProbs>();
    if (keep) saved->per_head.resize(heads);

    Tensor out({l.rows, l.width}, 0.0);
    std::vector<double> scratch;
    std::uint64_t flops = 0;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::vector<double> qh = pack_head(qv, l, h, false);
        const std::vector<double> kt = pack_head(kv, l, h, true);
        const std::vector<double> vh = pack_head(vv, l, h, false);
        std::vector<double>* store = keep ? &saved->per_head[h] : nullptr;
        if (store) store->resize(prob_count);
        std::size_t at = 0;
        for (const AttentionBlock& b : blocks) {
            const std::size_t n = b.k_end - b.k_begin;
            for (std::size_t r = b.q_begin; r < b.q_end; ++r) {
                double* probs;
                if (store) {
                    probs = store->data() + at;
                    at += n;
                } else {
                    scratch.resize(n);
                    probs = scratch.data();
                }
                row_probs(qh.data() + r * l.hd, kt.data(), l.keys, l.hd, b.k_begin, n, logit_scale, probs);
                if (probe != nullptr && *probe) (*probe)(h, r, b.k_begin, std::span<const double>(probs, n));
                double* o = out.ptr() + r * l.width + h * l.hd;
                for (std::size_t j = 0; j < n; ++j) {
                    const double* vr = vh.data() + (b.k_begin + j) * l.hd;
                    const double p = probs[j];
                    for (std::size_t d = 0; d < l.hd; ++d) o[d] += p * vr[d];
                }
                flops += 4ULL * l.hd * n;
            }
        }
    }
    FlopCounter::add(flops);

    std::vector<AttentionBlock> blk(blocks.begin(), blocks.end());
    return make_op_result(
        std::move(out), {q, k, v},
        [q, k, v, l, blk, logit_scale, saved](Node& self) {
            std::vector<double> gq(q.value().size(), 0.0), gk(k.value().size(), 0.0), gv(v.value().size(), 0.0);
            std::vector<double> dp;
            for (std::size_t h = 0; h < l.heads; ++h) {
                const std::vector<double> qh = pack_head(q.value(), l, h, false);
                const std::vector<double> kh = pack_head(k.value(), l, h, false);
                const std::vector<double> vt = pack_head(v.value(), l, h, true);
                const std::vector<double> go = pack_head(self.grad, l, h, false);
                std::vector<double> gqh(l.rows * l.hd, 0.0), gkh(l.keys * l.hd, 0.0), gvh(l.keys * l.hd, 0.0);
                const double* probs = saved->per_head[h].data();
                for (const AttentionBlock& b : blk) {
                    const std::size_t n = b.k_end - b.k_begin;
                    dp.resize(n);
                    for (std::size_t r = b.q_begin; r < b.q_end; ++r, probs += n) {
                        const double* g = go.data() + r * l.hd;
                        std::fill(dp.begin(), dp.end(), 0.0);
                        for (std::size_t d = 0; d < l.hd; ++d) {
                            const double gd = g[d];
                            const double* vd = vt.data() + d * l.keys + b.k_begin;
                            for (std::size_t j = 0; j < n; ++j) dp[j] += gd * vd[j];
                        }
                        double mix = 0.0;
                        for (std::size_t j = 0; j < n; ++j) mix += probs[j] * dp[j];
                        const double* qr = qh.data() + r * l.hd;
                        double* gqr = gqh.data() + r * l.hd;
                        for (std::size_t j = 0; j < n; ++j) {
                            const std::size_t kr = (b.k_begin + j) * l.hd;
                            const double p = probs[j];
                            const double ds = p * (dp[j] - mix) * logit_scale;
                            for (std::size_t d = 0; d < l.hd; ++d) {
                                gvh[kr + d] += p * g[d];
                                gqr[d] += ds * kh[kr + d];
                                gkh[kr + d] += ds * qr[d];
                            }
                        }
                    }
                }
                auto unpack = [&](const std::vector<double>& src, std::vector<double>& dst, std::size_t n) {
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t d = 0; d < l.hd; ++d) dst[r * l.width + h * l.hd + d] = src[r * l.hd + d];
                };
                unpack(gqh, gq, l.rows);
                unpack(gkh, gk, l.keys);
                unpack(gvh, gv, l.keys);
            }
            if (q.requires_grad()) q.node()->accumulate(gq);
            if (k.requires_grad()) k.node()->accumulate(gk);
            if (v.requires_grad()) v.node()->accumulate(gv);
        },
        "attention");
}

}  // namespace swtt::ops
