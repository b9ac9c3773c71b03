#pragma once

#include <cmath>
#include <string>

#include "breg/error.hpp"
#include "breg/tape.hpp"

namespace breg {

// Shortcut functions for the residual bypass. Each has a closed-form
// derivative bounded everywhere, which is what keeps gradient flow through
// the shortcut from vanishing or exploding.
enum class BypassKind { Identity, H1, H2, H3 };

inline const char* bypass_name(BypassKind kind) {
    switch (kind) {
        case BypassKind::Identity: return "identity";
        case BypassKind::H1: return "h1";
        case BypassKind::H2: return "h2";
        case BypassKind::H3: return "h3";
    }
    return "?";
}

inline BypassKind parse_bypass(const std::string& name) {
    if (name == "identity") return BypassKind::Identity;
    if (name == "h1") return BypassKind::H1;
    if (name == "h2") return BypassKind::H2;
    if (name == "h3") return BypassKind::H3;
    throw ContractError("unknown bypass kind '" + name +
                        "' (expected identity, h1, h2 or h3)");
}

namespace detail {

inline void check_finite_input(const char* op, double x) {
    if (!std::isfinite(x)) {
        throw ContractError(std::string(op) + ": non-finite input");
    }
}

} // namespace detail

// H(x). H1 is evaluated in a branch-split form; the naive e^x overflows
// 64-bit floats near x = 709.
inline double bypass_eval(BypassKind kind, double x) {
    detail::check_finite_input("bypass_eval", x);
    switch (kind) {
        case BypassKind::Identity:
            return x;
        case BypassKind::H1: // x - log(e^x + 1)
            return x > 0.0 ? -std::log1p(std::exp(-x))
                           : x - std::log1p(std::exp(x));
        case BypassKind::H2: { // x*atan(x) - log(x^2 + 1)/2
            const double ax = std::abs(x);
            const double half_log = ax <= 1.0
                ? 0.5 * std::log1p(x * x)
                : std::log(ax) + 0.5 * std::log1p(1.0 / (x * x));
            return x * std::atan(x) - half_log;
        }
        case BypassKind::H3:
            return std::atan(x);
    }
    throw ContractError("bypass_eval: bad kind");
}

// H'(x). Bounds: H1' in (0,1), |H2'| < pi/2, H3' in (0,1], Identity' = 1.
inline double bypass_grad(BypassKind kind, double x) {
    detail::check_finite_input("bypass_grad", x);
    switch (kind) {
        case BypassKind::Identity:
            return 1.0;
        case BypassKind::H1: { // 1 / (1 + e^x)
            if (x > 0.0) {
                const double e = std::exp(-x);
                return e / (1.0 + e);
            }
            return 1.0 / (1.0 + std::exp(x));
        }
        case BypassKind::H2:
            return std::atan(x);
        case BypassKind::H3:
            return 1.0 / (1.0 + x * x);
    }
    throw ContractError("bypass_grad: bad kind");
}

// Elementwise, differentiable application on a tape. Backward multiplies the
// incoming gradient by H' elementwise.
inline Var bypass_apply(BypassKind kind, Var x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = bypass_eval(kind, out[i]);
    }
    const std::string op = std::string("bypass_") + bypass_name(kind);
    return x.tape->record(op, std::move(out), {x.id},
                          [x = x.id, kind](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              const Tensor& xv = t.value(x);
                              if (Tensor* gx = t.grad_sink(x)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) {
                                      (*gx)[i] += g[i] * bypass_grad(kind, xv[i]);
                                  }
                              }
                          });
}

} // namespace breg
