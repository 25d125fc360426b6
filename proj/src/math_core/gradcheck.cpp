#include "swtt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "swtt/errors.hpp"

namespace swtt {

namespace {

double eval(const std::function<Var()>& f) {
    const Var loss = f();
    if (loss.value().size() != 1) throw UsageError("finite_diff_check: function must return a scalar");
    return loss.value()[0];
}

}  // namespace

GradCheckResult finite_diff_check(const std::function<Var()>& f, std::span<const Var> params, double h, double eps) {
    if (!(h > 0.0)) throw UsageError("finite_diff_check: step must be positive");

    std::vector<Var> ps(params.begin(), params.end());
    for (Var& p : ps) p.zero_grad();
    {
        Tape tape;
        const Var loss = f();
        if (loss.requires_grad()) tape.backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(ps.size());
    for (const Var& p : ps) analytic.push_back(p.has_grad() ? p.grad() : Tensor(p.shape(), 0.0));

    const double a = eval(f);
    const double b = eval(f);
    if (std::memcmp(&a, &b, sizeof a) != 0) {
        throw OracleError("finite_diff_check: function is not deterministic (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
    }

    GradCheckResult res;
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        Tensor& value = ps[pi].mutable_value();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            auto at = [&](double offset) {
                value[i] = saved + offset;
                return eval(f);
            };
            // Fourth-order central stencil.
            const double d1 = at(h) - at(-h), d2 = at(2.0 * h) - at(-2.0 * h);
            value[i] = saved;
            const double numeric = (8.0 * d1 - d2) / (12.0 * h);
            const double an = analytic[pi][i];
            const double denom = std::max({std::abs(an), std::abs(numeric), eps});
            const double rel = std::abs(an - numeric) / denom;
            ++res.checked;
            if (res.checked == 1 || rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_param = pi;
                res.worst_index = i;
                res.analytic = an;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace swtt
