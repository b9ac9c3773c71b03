#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "breg/error.hpp"
#include "breg/tape.hpp"

namespace breg {

// A differentiable scalar-valued function: builds a scalar Var on the given
// tape from a leaf Var.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const ScalarFn& f, const Tensor& point, double epsilon) {
    if (!(epsilon > 0.0)) throw ContractError("grad_check: epsilon must be > 0");

    const auto eval = [&f](const Tensor& p) {
        Tape tape;
        Var y = f(tape, tape.leaf(p));
        if (y.numel() != 1) {
            throw ContractError("grad_check: f must return a scalar");
        }
        const double v = y.value()[0];
        if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite f value");
        return v;
    };

    // Analytic gradient via the tape.
    Tensor leaf_value = point;
    leaf_value.set_requires_grad(true);
    Tape tape;
    Var x = tape.leaf(std::move(leaf_value));
    Var y = f(tape, x);
    if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
    if (!std::isfinite(y.value()[0])) {
        throw NumericalError("grad_check: non-finite f value");
    }
    Tensor analytic = tape.backward(y).at(x.id);

    double max_err = 0.0;
    Tensor probe = point;
    probe.set_requires_grad(false);
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + epsilon;
        const double fp = eval(probe);
        probe[i] = saved - epsilon;
        const double fm = eval(probe);
        probe[i] = saved;
        const double fd = (fp - fm) / (2.0 * epsilon);
        const double err = std::abs(analytic[i] - fd) /
                           std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace breg
