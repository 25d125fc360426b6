#include "swtt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "swtt/errors.hpp"

namespace swtt::ops {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_2d(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

// C[M,N] (+)= A[M,K] B[K,N]. Each output accumulates over k in ascending
// order regardless of M, so row results do not depend on the batch size.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[M,K] += A[M,N] B[K,N]^T, via a transposed copy of B so the inner loop
// runs over contiguous memory.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    std::vector<double> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    std::vector<double> acc(k);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double av = ai[j];
            const double* bj = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) acc[p] += av * bj[p];
        }
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) ci[p] += acc[p];
    }
}

// C[K,N] += A[M,K]^T B[M,N]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <typename F, typename D>
Var unary(const Var& a, const char* name, F f, D df) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return make_op_result(std::move(out), {a},
                          [a, df](Node& self) {
                              const Tensor& x = a.value();
                              std::vector<double> g(x.size());
                              for (std::size_t i = 0; i < x.size(); ++i) g[i] = self.grad[i] * df(x[i], self.value[i]);
                              a.node()->accumulate(g);
                          },
                          name);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_2d("matmul", av);
    require_2d("matmul", bv);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) shape_error("matmul", av.shape(), bv.shape());
    Tensor out({m, n}, 0.0);
    gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
    FlopCounter::add(2ULL * m * k * n);
    return make_op_result(std::move(out), {a, b},
                          [a, b, m, k, n](Node& self) {
                              if (a.requires_grad()) {
                                  Tensor& ga = a.node()->grad_buffer();
                                  gemm_nt(self.grad.ptr(), b.value().ptr(), ga.ptr(), m, n, k);
                              }
                              if (b.requires_grad()) {
                                  Tensor& gb = b.node()->grad_buffer();
                                  gemm_tn(a.value().ptr(), self.grad.ptr(), gb.ptr(), m, k, n);
                              }
                          },
                          "matmul");
}

Var linear(const Var& x, const Var& w, const Var& bias) {
    Var y = matmul(x, w);
    return bias.defined() ? add_rowvec(y, bias) : y;
}

Var add(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_error("add", av.shape(), bv.shape());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return make_op_result(std::move(out), {a, b},
                          [a, b](Node& self) {
                              if (a.requires_grad()) a.node()->accumulate(self.grad.data());
                              if (b.requires_grad()) b.node()->accumulate(self.grad.data());
                          },
                          "add");
}

Var sub(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_error("sub", av.shape(), bv.shape());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return make_op_result(std::move(out), {a, b},
                          [a, b](Node& self) {
                              if (a.requires_grad()) a.node()->accumulate(self.grad.data());
                              if (b.requires_grad()) {
                                  std::vector<double> g(self.grad.size());
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
                                  b.node()->accumulate(g);
                              }
                          },
                          "sub");
}

Var mul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) shape_error("mul", av.shape(), bv.shape());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return make_op_result(std::move(out), {a, b},
                          [a, b](Node& self) {
                              const std::size_t n = self.grad.size();
                              std::vector<double> g(n);
                              if (a.requires_grad()) {
                                  for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * b.value()[i];
                                  a.node()->accumulate(g);
                              }
                              if (b.requires_grad()) {
                                  for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * a.value()[i];
                                  b.node()->accumulate(g);
                              }
                          },
                          "mul");
}

Var scale(const Var& a, double s) {
    return unary(
        a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(
        a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_rowvec(const Var& x, const Var& v) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    require_2d("add_rowvec", xv);
    if (vv.size() != xv.dim(1)) shape_error("add_rowvec", xv.shape(), vv.shape());
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + vv[c];
    return make_op_result(std::move(out), {x, v},
                          [x, v, rows, cols](Node& self) {
                              if (x.requires_grad()) x.node()->accumulate(self.grad.data());
                              if (v.requires_grad()) {
                                  std::vector<double> g(cols, 0.0);
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
                                  v.node()->accumulate(g);
                              }
                          },
                          "add_rowvec");
}

Var mul_rowvec(const Var& x, const Var& v) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    require_2d("mul_rowvec", xv);
    if (vv.size() != xv.dim(1)) shape_error("mul_rowvec", xv.shape(), vv.shape());
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * vv[c];
    return make_op_result(std::move(out), {x, v},
                          [x, v, rows, cols](Node& self) {
                              const Tensor& xv = x.value();
                              const Tensor& vv = v.value();
                              if (x.requires_grad()) {
                                  std::vector<double> g(rows * cols);
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t c = 0; c < cols; ++c)
                                          g[r * cols + c] = self.grad[r * cols + c] * vv[c];
                                  x.node()->accumulate(g);
                              }
                              if (v.requires_grad()) {
                                  std::vector<double> g(cols, 0.0);
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t c = 0; c < cols; ++c)
                                          g[c] += self.grad[r * cols + c] * xv[r * cols + c];
                                  v.node()->accumulate(g);
                              }
                          },
                          "mul_rowvec");
}

Var repeat_rows(const Var& x, std::span<const std::size_t> counts) {
    const Tensor& xv = x.value();
    require_2d("repeat_rows", xv);
    if (counts.size() != xv.dim(0)) {
        throw DimensionError("repeat_rows: " + std::to_string(counts.size()) + " counts for " +
                             std::to_string(xv.dim(0)) + " rows");
    }
    const std::size_t cols = xv.dim(1);
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    Tensor out({total, cols});
    std::size_t o = 0;
    for (std::size_t r = 0; r < counts.size(); ++r)
        for (std::size_t t = 0; t < counts[r]; ++t, ++o)
            std::memcpy(out.ptr() + o * cols, xv.ptr() + r * cols, cols * sizeof(double));
    std::vector<std::size_t> cnt(counts.begin(), counts.end());
    return make_op_result(std::move(out), {x},
                          [x, cnt, cols](Node& self) {
                              std::vector<double> g(cnt.size() * cols, 0.0);
                              std::size_t o = 0;
                              for (std::size_t r = 0; r < cnt.size(); ++r)
                                  for (std::size_t t = 0; t < cnt[r]; ++t, ++o)
                                      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[o * cols + c];
                              x.node()->accumulate(g);
                          },
                          "repeat_rows");
}

Var exp(const Var& a) {
    return unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var silu(const Var& a) {
    return unary(
        a, "silu", [](double x) { return x * sigmoid(x); },
        [](double x, double) {
            const double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Var gelu(const Var& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Var softmax_rows(const Var& a) {
    const Tensor& av = a.value();
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.ptr() + r * cols;
        double* y = out.ptr() + r * cols;
        double m = x[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - m);
            s += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
    }
    return make_op_result(std::move(out), {a},
                          [a, rows, cols](Node& self) {
                              std::vector<double> g(rows * cols);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* y = self.value.ptr() + r * cols;
                                  const double* dy = self.grad.ptr() + r * cols;
                                  double dot = 0.0;
                                  for (std::size_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
                                  for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] = y[c] * (dy[c] - dot);
                              }
                              a.node()->accumulate(g);
                          },
                          "softmax_rows");
}

Var rms(const Var& a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += v * v;
    const double r = std::sqrt(s / static_cast<double>(av.size()));
    return make_op_result(Tensor::scalar(r), {a},
                          [a, r](Node& self) {
                              const Tensor& x = a.value();
                              const double n = static_cast<double>(x.size());
                              const double k = self.grad[0] / (n * std::max(r, kNormEps));
                              std::vector<double> g(x.size());
                              for (std::size_t i = 0; i < x.size(); ++i) g[i] = k * x[i];
                              a.node()->accumulate(g);
                          },
                          "rms");
}

Var rms_norm(const Var& x, std::size_t group, const Var& gain) {
    const Tensor& xv = x.value();
    if (group == 0 || xv.size() % group != 0 || xv.cols() % group != 0) {
        throw DimensionError("rms_norm: group " + std::to_string(group) + " does not divide " + shape_str(xv.shape()));
    }
    if (gain.defined() && gain.value().size() != group) {
        throw DimensionError("rms_norm: gain " + shape_str(gain.value().shape()) + " for group " +
                             std::to_string(group));
    }
    const std::size_t groups = xv.size() / group;
    std::vector<double> inv(groups);
    Tensor out(xv.shape());
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const double* p = xv.ptr() + gi * group;
        double s = 0.0;
        for (std::size_t j = 0; j < group; ++j) s += p[j] * p[j];
        inv[gi] = 1.0 / std::sqrt(s / static_cast<double>(group) + kNormEps);
        double* o = out.ptr() + gi * group;
        for (std::size_t j = 0; j < group; ++j) o[j] = p[j] * inv[gi] * (gain.defined() ? gain.value()[j] : 1.0);
    }
    return make_op_result(std::move(out), {x, gain},
                          [x, gain, group, groups, inv](Node& self) {
                              const Tensor& xv = x.value();
                              const double n = static_cast<double>(group);
                              std::vector<double> gx(x.requires_grad() ? xv.size() : 0);
                              std::vector<double> gg(gain.requires_grad() ? group : 0, 0.0);
                              std::vector<double> dyh(group);
                              for (std::size_t gi = 0; gi < groups; ++gi) {
                                  const double* p = xv.ptr() + gi * group;
                                  const double* dy = self.grad.ptr() + gi * group;
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j < group; ++j) {
                                      const double xh = p[j] * inv[gi];
                                      dyh[j] = dy[j] * (gain.defined() ? gain.value()[j] : 1.0);
                                      dot += dyh[j] * xh;
                                      if (!gg.empty()) gg[j] += dy[j] * xh;
                                  }
                                  if (!gx.empty()) {
                                      for (std::size_t j = 0; j < group; ++j) {
                                          const double xh = p[j] * inv[gi];
                                          gx[gi * group + j] = (dyh[j] - xh * dot / n) * inv[gi];
                                      }
                                  }
                              }
                              if (!gx.empty()) x.node()->accumulate(gx);
                              if (!gg.empty()) gain.node()->accumulate(gg);
                          },
                          "rms_norm");
}

Var layer_norm(const Var& x) {
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows(), cols = xv.cols();
    std::vector<double> inv(rows);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = xv.ptr() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += p[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (p[c] - mu) * (p[c] - mu);
        var /= static_cast<double>(cols);
        inv[r] = 1.0 / std::sqrt(var + kNormEps);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (p[c] - mu) * inv[r];
    }
    return make_op_result(std::move(out), {x},
                          [x, rows, cols, inv](Node& self) {
                              const double n = static_cast<double>(cols);
                              std::vector<double> g(rows * cols);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* y = self.value.ptr() + r * cols;
                                  const double* dy = self.grad.ptr() + r * cols;
                                  double mdy = 0.0, mdyy = 0.0;
                                  for (std::size_t c = 0; c < cols; ++c) {
                                      mdy += dy[c];
                                      mdyy += dy[c] * y[c];
                                  }
                                  mdy /= n;
                                  mdyy /= n;
                                  for (std::size_t c = 0; c < cols; ++c)
                                      g[r * cols + c] = (dy[c] - mdy - y[c] * mdyy) * inv[r];
                              }
                              x.node()->accumulate(g);
                          },
                          "layer_norm");
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return make_op_result(Tensor::scalar(s), {a},
                          [a](Node& self) {
                              std::vector<double> g(a.value().size(), self.grad[0]);
                              a.node()->accumulate(g);
                          },
                          "sum");
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(const Var& x) {
    const Tensor& xv = x.value();
    require_2d("mean_rows", xv);
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    if (rows == 0) throw DimensionError("mean_rows: no rows");
    Tensor out({1, cols}, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(rows);
    return make_op_result(std::move(out), {x},
                          [x, rows, cols](Node& self) {
                              std::vector<double> g(rows * cols);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < cols; ++c)
                                      g[r * cols + c] = self.grad[c] / static_cast<double>(rows);
                              x.node()->accumulate(g);
                          },
                          "mean_rows");
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value();
    out.reshape(std::move(shape));
    return make_op_result(std::move(out), {a}, [a](Node& self) { a.node()->accumulate(self.grad.data()); },
                          "reshape");
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    require_2d("slice_rows", av);
    if (begin > end || end > av.dim(0)) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + shape_str(av.shape()));
    }
    const std::size_t cols = av.dim(1);
    Tensor out({end - begin, cols});
    std::copy(av.ptr() + begin * cols, av.ptr() + end * cols, out.ptr());
    return make_op_result(std::move(out), {a},
                          [a, begin, cols](Node& self) {
                              Tensor& g = a.node()->grad_buffer();
                              double* dst = g.ptr() + begin * cols;
                              for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
                          },
                          "slice_rows");
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    require_2d("slice_cols", av);
    if (begin > end || end > av.dim(1)) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + shape_str(av.shape()));
    }
    const std::size_t rows = av.dim(0), cols = av.dim(1), w = end - begin;
    Tensor out({rows, w});
    for (std::size_t r = 0; r < rows; ++r) std::copy(av.ptr() + r * cols + begin, av.ptr() + r * cols + end, out.ptr() + r * w);
    return make_op_result(std::move(out), {a},
                          [a, begin, rows, cols, w](Node& self) {
                              Tensor& g = a.node()->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
                          },
                          "slice_cols");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t cols = parts[0].value().cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        require_2d("concat_rows", p.value());
        if (p.value().dim(1) != cols) shape_error("concat_rows", parts[0].value().shape(), p.value().shape());
        rows += p.value().dim(0);
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().ptr(), p.value().ptr() + p.value().size(), out.ptr() + off);
        off += p.value().size();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_op_result(std::move(out), parts,
                          [inputs](Node& self) {
                              std::size_t off = 0;
                              for (const Var& p : inputs) {
                                  const std::size_t n = p.value().size();
                                  if (p.requires_grad()) p.node()->accumulate({self.grad.ptr() + off, n});
                                  off += n;
                              }
                          },
                          "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts[0].value().rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        require_2d("concat_cols", p.value());
        if (p.value().dim(0) != rows) shape_error("concat_cols", parts[0].value().shape(), p.value().shape());
        cols += p.value().dim(1);
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const Var& p : parts) {
        const std::size_t w = p.value().dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(p.value().ptr() + r * w, p.value().ptr() + (r + 1) * w, out.ptr() + r * cols + off);
        off += w;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_op_result(std::move(out), parts,
                          [inputs, rows, cols](Node& self) {
                              std::size_t off = 0;
                              for (const Var& p : inputs) {
                                  const std::size_t w = p.value().dim(1);
                                  if (p.requires_grad()) {
                                      std::vector<double> g(rows * w);
                                      for (std::size_t r = 0; r < rows; ++r)
                                          for (std::size_t c = 0; c < w; ++c) g[r * w + c] = self.grad[r * cols + off + c];
                                      p.node()->accumulate(g);
                                  }
                                  off += w;
                              }
                          },
                          "concat_cols");
}

Var embedding(const Var& table, std::span<const std::size_t> indices) {
    const Tensor& tv = table.value();
    require_2d("embedding", tv);
    const std::size_t vocab = tv.dim(0), cols = tv.dim(1);
    Tensor out({indices.size(), cols});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= vocab) {
            throw DimensionError("embedding: index " + std::to_string(indices[i]) + " outside table of " +
                                 std::to_string(vocab) + " rows");
        }
        std::copy(tv.ptr() + indices[i] * cols, tv.ptr() + (indices[i] + 1) * cols, out.ptr() + i * cols);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_op_result(std::move(out), {table},
                          [table, idx, cols](Node& self) {
                              Tensor& g = table.node()->grad_buffer();
                              for (std::size_t i = 0; i < idx.size(); ++i)
                                  for (std::size_t c = 0; c < cols; ++c) g[idx[i] * cols + c] += self.grad[i * cols + c];
                          },
                          "embedding");
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
    const Tensor& lv = logits.value();
    require_2d("cross_entropy", lv);
    const std::size_t rows = lv.dim(0), vocab = lv.dim(1);
    if (targets.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(rows) + " rows");
    }
    if (rows == 0) throw DimensionError("cross_entropy: empty logits");
    Tensor probs({rows, vocab});
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= vocab) {
            throw DataError("cross_entropy: target " + std::to_string(targets[r]) + " >= vocabulary " +
                            std::to_string(vocab));
        }
        const double* x = lv.ptr() + r * vocab;
        double m = x[0];
        for (std::size_t c = 1; c < vocab; ++c) m = std::max(m, x[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < vocab; ++c) {
            probs[r * vocab + c] = std::exp(x[c] - m);
            s += probs[r * vocab + c];
        }
        for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] /= s;
        total += std::log(s) + m - x[targets[r]];
    }
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return make_op_result(Tensor::scalar(total / static_cast<double>(rows)), {logits},
                          [logits, probs = std::move(probs), tgt, rows, vocab](Node& self) {
                              const double k = self.grad[0] / static_cast<double>(rows);
                              std::vector<double> g(rows * vocab);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t c = 0; c < vocab; ++c) g[r * vocab + c] = k * probs[r * vocab + c];
                                  g[r * vocab + tgt[r]] -= k;
                              }
                              logits.node()->accumulate(g);
                          },
                          "cross_entropy");
}

Var round_bf16(const Var& a) {
    auto to_bf16 = [](double x) {
        float f = static_cast<float>(x);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        const std::uint32_t lsb = (bits >> 16) & 1U;
        bits += 0x7FFFU + lsb;
        bits &= 0xFFFF0000U;
        std::memcpy(&f, &bits, sizeof f);
        return static_cast<double>(f);
    };
    return unary(a, "round_bf16", to_bf16, [](double, double) { return 1.0; });
}

Var rope_rotate(const Var& x, const Tensor& cos, const Tensor& sin, std::size_t heads) {
    const Tensor& xv = x.value();
    require_2d("rope_rotate", xv);
    const std::size_t rows = xv.dim(0), width = xv.dim(1);
    if (heads == 0 || width % heads != 0) throw DimensionError("rope_rotate: width not divisible by heads");
    const std::size_t hd = width / heads, pairs = hd / 2;
    if (hd % 2 != 0 || cos.shape() != Shape{rows, pairs} || sin.shape() != Shape{rows, pairs}) {
        throw DimensionError("rope_rotate: tables " + shape_str(cos.shape()) + " do not fit " + shape_str(xv.shape()));
    }
    auto rotate = [rows, width, hd, pairs, heads](const double* in, double* out, const Tensor& c, const Tensor& s,
                                                  double sign) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t p = 0; p < pairs; ++p) {
                    const std::size_t i = r * width + h * hd + 2 * p;
                    const double cv = c[r * pairs + p], sv = sign * s[r * pairs + p];
                    out[i] = in[i] * cv - in[i + 1] * sv;
                    out[i + 1] = in[i] * sv + in[i + 1] * cv;
                }
    };
    Tensor out(xv.shape());
    rotate(xv.ptr(), out.ptr(), cos, sin, 1.0);
    return make_op_result(std::move(out), {x},
                          [x, cos, sin, rotate](Node& self) {
                              std::vector<double> g(self.grad.size());
                              rotate(self.grad.ptr(), g.data(), cos, sin, -1.0);
                              x.node()->accumulate(g);
                          },
                          "rope_rotate");
}

}  // namespace swtt::ops
