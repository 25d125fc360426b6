#include <doctest.h>

#include <cmath>
#include <cstring>

#include "swtt/autodiff.hpp"
#include "swtt/errors.hpp"
#include "swtt/gradcheck.hpp"
#include "swtt/ops.hpp"
#include "swtt/random.hpp"

using namespace swtt;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

Var param(Shape shape, std::uint64_t seed, double scale = 1.0) { return Var(random_tensor(std::move(shape), seed, scale), true); }

// Weighted sum so every output entry gets a distinct upstream gradient.
Var probe_loss(const Var& y) {
    Tensor weights(y.shape());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
    return ops::sum(ops::mul(y, Var(weights)));
}

void check_grad(const std::function<Var()>& f, std::vector<Var> params, double tol = 1e-6) {
    const GradCheckResult r = finite_diff_check(f, params, 1e-5);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("matmul with identity returns the operand") {
    const Tensor a = random_tensor({3, 4}, 1);
    Tensor eye({3, 3}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    const Var y = ops::matmul(Var(eye), Var(a));
    CHECK(y.value().identical(a));
}

TEST_CASE("shape mismatch names both shapes") {
    try {
        ops::matmul(Var(Tensor({2, 3})), Var(Tensor({4, 5})));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 5]") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::add(Var(Tensor({2, 2})), Var(Tensor({2, 3}))), DimensionError);
}

TEST_CASE("softmax of equal logits is uniform and rows sum to one") {
    const Var s = ops::softmax_rows(Var(Tensor::matrix(1, 3, {0, 0, 0})));
    for (double v : s.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const Var r = ops::softmax_rows(Var(random_tensor({6, 9}, 3, 5.0)));
    for (std::size_t i = 0; i < 6; ++i) {
        double total = 0.0;
        for (double v : r.value().row(i)) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("rms of [3, 4]") {
    const Var r = ops::rms(Var(Tensor::vector({3, 4})));
    CHECK(r.value()[0] == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
}

TEST_CASE("non-finite results raise a numeric error naming the op") {
    try {
        ops::exp(Var(Tensor::vector({1000.0})));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }
}

TEST_CASE("backward of sum and of a square") {
    Var w = param({2, 3}, 4);
    {
        Tape tape;
        tape.backward(ops::sum(w));
    }
    for (double g : w.grad().data()) CHECK(g == 1.0);
    w.zero_grad();
    {
        Tape tape;
        tape.backward(ops::sum(ops::mul(w, w)));
    }
    for (std::size_t i = 0; i < w.value().size(); ++i) CHECK(w.grad()[i] == 2.0 * w.value()[i]);
}

TEST_CASE("repeated backward accumulates into leaves") {
    Var w = param({4}, 5);
    Tape tape;
    const Var loss = ops::sum(ops::scale(w, 3.0));
    tape.backward(loss);
    tape.backward(loss);
    for (double g : w.grad().data()) CHECK(g == 6.0);
}

TEST_CASE("backward rejects non-scalar losses and empty tapes") {
    Var w = param({2, 2}, 6);
    Tape tape;
    const Var y = ops::scale(w, 2.0);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
    Tape empty;
    CHECK_THROWS_AS(empty.backward(Var(Tensor::scalar(1.0), true)), UsageError);
}

TEST_CASE("finite_diff_check on x^2 and constants") {
    Var x(Tensor::scalar(3.0), true);
    const GradCheckResult r = finite_diff_check([&] { return ops::mul(x, x); }, std::vector<Var>{x}, 1e-5);
    CHECK(r.max_rel_error < 1e-8);
    CHECK(r.analytic == 6.0);

    Var c(Tensor::vector({1.0, 2.0}), true);
    const GradCheckResult rc = finite_diff_check([] { return Var(Tensor::scalar(4.0)); }, std::vector<Var>{c}, 1e-5);
    CHECK(rc.max_rel_error == 0.0);
    CHECK(rc.checked == 2);
}

TEST_CASE("finite_diff_check rejects non-deterministic functions") {
    Var x(Tensor::scalar(1.0), true);
    int calls = 0;
    auto f = [&] { return ops::add_scalar(x, 1e-3 * ++calls); };
    CHECK_THROWS_AS(finite_diff_check(f, std::vector<Var>{x}, 1e-5), OracleError);
    CHECK_THROWS_AS(finite_diff_check([&] { return x; }, std::vector<Var>{x}, 0.0), UsageError);
}

TEST_CASE("every differentiable op matches central differences") {
    Var a = param({3, 4}, 10), b = param({3, 4}, 11), w = param({4, 5}, 12), bias = param({5}, 13);
    Var row = param({1, 4}, 14), gain = param({2}, 15), table = param({6, 4}, 16);

    check_grad([&] { return probe_loss(ops::matmul(a, w)); }, {a, w});
    check_grad([&] { return probe_loss(ops::linear(a, w, bias)); }, {a, w, bias});
    check_grad([&] { return probe_loss(ops::add(a, b)); }, {a, b});
    check_grad([&] { return probe_loss(ops::sub(a, b)); }, {a, b});
    check_grad([&] { return probe_loss(ops::mul(a, b)); }, {a, b});
    check_grad([&] { return probe_loss(ops::scale(a, -1.5)); }, {a});
    check_grad([&] { return probe_loss(ops::add_scalar(a, 2.0)); }, {a});
    check_grad([&] { return probe_loss(ops::add_rowvec(a, row)); }, {a, row});
    check_grad([&] { return probe_loss(ops::mul_rowvec(a, row)); }, {a, row});
    const std::vector<std::size_t> counts{2, 0, 3};
    check_grad([&] { return probe_loss(ops::repeat_rows(a, counts)); }, {a});
    check_grad([&] { return probe_loss(ops::exp(ops::scale(a, 0.5))); }, {a});
    check_grad([&] { return probe_loss(ops::silu(a)); }, {a});
    check_grad([&] { return probe_loss(ops::gelu(a)); }, {a});
    check_grad([&] { return probe_loss(ops::softmax_rows(a)); }, {a});
    check_grad([&] { return ops::rms(a); }, {a});
    check_grad([&] { return probe_loss(ops::rms_norm(a, 2, gain)); }, {a, gain});
    check_grad([&] { return probe_loss(ops::rms_norm(a, 4)); }, {a});
    check_grad([&] { return probe_loss(ops::layer_norm(a)); }, {a});
    check_grad([&] { return ops::mean(ops::mul(a, b)); }, {a, b});
    check_grad([&] { return probe_loss(ops::mean_rows(a)); }, {a});
    check_grad([&] { return probe_loss(ops::reshape(a, {4, 3})); }, {a});
    check_grad([&] { return probe_loss(ops::slice_rows(a, 1, 3)); }, {a});
    check_grad([&] { return probe_loss(ops::slice_cols(a, 1, 3)); }, {a});
    check_grad([&] {
        const std::vector<Var> parts{a, b};
        return probe_loss(ops::concat_rows(parts));
    }, {a, b});
    check_grad([&] {
        const std::vector<Var> parts{a, b};
        return probe_loss(ops::concat_cols(parts));
    }, {a, b});
    const std::vector<std::size_t> idx{3, 0, 3, 5};
    check_grad([&] { return probe_loss(ops::embedding(table, idx)); }, {table});
    const std::vector<std::size_t> targets{2, 0, 3};
    check_grad([&] { return ops::cross_entropy(a, targets); }, {a});

    Tensor cos({3, 2}), sin({3, 2});
    for (std::size_t i = 0; i < cos.size(); ++i) {
        cos[i] = std::cos(0.4 * static_cast<double>(i) + 0.1);
        sin[i] = std::sin(0.4 * static_cast<double>(i) + 0.1);
    }
    check_grad([&] { return probe_loss(ops::rope_rotate(a, cos, sin, 1)); }, {a});

    Var q = param({5, 4}, 20), k = param({5, 4}, 21), v = param({5, 4}, 22);
    const std::vector<ops::AttentionBlock> blocks{{0, 2, 0, 2}, {2, 5, 0, 5}};
    check_grad([&] { return probe_loss(ops::attention(q, k, v, 2, blocks, 0.7)); }, {q, k, v});
}

TEST_CASE("attention equals a dense masked-softmax oracle") {
    const Tensor q = random_tensor({5, 4}, 30), k = random_tensor({5, 4}, 31), v = random_tensor({5, 4}, 32);
    const std::vector<ops::AttentionBlock> blocks{{0, 1, 0, 1}, {1, 5, 1, 5}};
    const Var out = ops::attention(Var(q), Var(k), Var(v), 2, blocks, 0.5);
    auto allowed = [](std::size_t r, std::size_t c) { return r == 0 ? c == 0 : c >= 1; };
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t r = 0; r < 5; ++r) {
            double logits[5], z = 0.0, m = -INFINITY;
            for (std::size_t c = 0; c < 5; ++c) {
                logits[c] = -INFINITY;
                if (!allowed(r, c)) continue;
                double s = 0.0;
                for (std::size_t d = 0; d < 2; ++d) s += q.at(r, h * 2 + d) * k.at(c, h * 2 + d);
                logits[c] = 0.5 * s;
                m = std::max(m, logits[c]);
            }
            for (double& l : logits) {
                l = std::exp(l - m);
                z += l;
            }
            for (std::size_t d = 0; d < 2; ++d) {
                double expect = 0.0;
                for (std::size_t c = 0; c < 5; ++c) expect += logits[c] / z * v.at(c, h * 2 + d);
                CHECK(out.value().at(r, h * 2 + d) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("attention rejects uncovered and fully masked rows") {
    const Var x(random_tensor({3, 2}, 40));
    const std::vector<ops::AttentionBlock> gap{{0, 2, 0, 2}};
    CHECK_THROWS_AS(ops::attention(x, x, x, 1, gap, 1.0), UsageError);
    const std::vector<ops::AttentionBlock> empty{{0, 1, 0, 0}, {1, 3, 0, 3}};
    CHECK_THROWS_AS(ops::attention(x, x, x, 1, empty, 1.0), UsageError);
}

TEST_CASE("identical seeds give bit-identical results") {
    auto run = [] {
        const Var a(random_tensor({4, 6}, 50)), w(random_tensor({6, 6}, 51));
        return ops::softmax_rows(ops::gelu(ops::matmul(a, w))).value();
    };
    CHECK(run().identical(run()));
}

TEST_CASE("flop counter counts 2MKN per matmul") {
    FlopCounter::reset();
    ops::matmul(Var(Tensor({3, 4})), Var(Tensor({4, 5})));
    CHECK(FlopCounter::value() == 2u * 3 * 4 * 5);
}

TEST_CASE("single-precision scope rounds op outputs to binary32") {
    const Var a(Tensor::vector({1.0 / 3.0}));
    const Var d = ops::scale(a, 1.0);
    Var s;
    {
        PrecisionScope single(Precision::Single);
        s = ops::scale(a, 1.0);
    }
    CHECK(d.value()[0] == 1.0 / 3.0);
    CHECK(s.value()[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST_CASE("rng streams are reproducible and roughly standard normal") {
    Rng a(9), b(9);
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / 20000) < 0.03);
    CHECK(std::abs(sq / 20000 - 1.0) < 0.05);
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
}
