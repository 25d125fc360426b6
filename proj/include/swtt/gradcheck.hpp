#pragma once

#include <functional>
#include <span>

#include "swtt/autodiff.hpp"

namespace swtt {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Location and values of the worst entry.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function against the
// fourth-order central difference
// (8(f(p+h) - f(p-h)) - (f(p+2h) - f(p-2h))) / 12h for every entry of every
// parameter.
// Relative error per entry: |a - n| / max(|a|, |n|, eps).
// Throws OracleError if two evaluations at the same point differ.
GradCheckResult finite_diff_check(const std::function<Var()>& f, std::span<const Var> params, double h,
                                  double eps = 1e-12);

}  // namespace swtt
