#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "breg/error.hpp"
#include "breg/tensor.hpp"

namespace breg {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const;
    std::size_t numel() const;
};

// Reverse-mode define-by-run tape. Operations append nodes in execution
// order, which is a topological order by construction. One tape per thread.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;
    using GradMap = std::unordered_map<std::size_t, Tensor>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value) {
        Node node;
        node.op = "leaf";
        node.requires_grad = value.requires_grad();
        node.is_leaf = true;
        node.value = std::move(value);
        nodes_.push_back(std::move(node));
        return Var{this, nodes_.size() - 1};
    }

    // Append an op node. The output is checked for NaN/Inf here so failures
    // name the op that produced them.
    Var record(std::string op, Tensor value, std::vector<std::size_t> inputs,
               BackwardFn backward) {
        if (!value.all_finite()) {
            throw NumericalError(op + ": non-finite value in output");
        }
        Node node;
        node.op = std::move(op);
        node.is_leaf = false;
        node.requires_grad = false;
        for (std::size_t in : inputs) {
            if (nodes_[in].requires_grad) node.requires_grad = true;
        }
        node.value = std::move(value);
        node.inputs = std::move(inputs);
        if (node.requires_grad) node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient of `loss` w.r.t. every requires_grad leaf on this tape.
    // Leaves that do not participate in the loss get zero gradients.
    GradMap backward(Var loss) {
        if (loss.tape != this) {
            throw ContractError("backward: loss lives on a different tape");
        }
        if (nodes_[loss.id].value.numel() != 1) {
            throw ContractError("backward: loss must be scalar, got shape " +
                                shape_str(nodes_[loss.id].value.shape()));
        }
        grads_.assign(nodes_.size(), std::nullopt);
        grads_[loss.id] = Tensor::full(nodes_[loss.id].value.shape(), 1.0);

        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!grads_[i].has_value() || !node.requires_grad) continue;
            if (!grads_[i]->all_finite()) {
                grads_.clear();
                throw NumericalError("backward of " + node.op +
                                     ": non-finite gradient");
            }
            if (node.backward) node.backward(*this, i);
        }

        GradMap result;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& node = nodes_[i];
            if (!node.is_leaf || !node.requires_grad) continue;
            if (grads_[i].has_value()) {
                if (!grads_[i]->all_finite()) {
                    grads_.clear();
                    throw NumericalError("backward of " + node.op +
                                         ": non-finite gradient");
                }
                result.emplace(i, std::move(*grads_[i]));
            } else {
                result.emplace(i, Tensor::zeros(node.value.shape()));
            }
        }
        grads_.clear();
        return result;
    }

    // --- hooks for BackwardFn implementations -------------------------------

    // Incoming gradient of a node (valid while its BackwardFn runs).
    const Tensor& grad_out(std::size_t id) const { return *grads_[id]; }

    // Zero-initialized gradient buffer for an input node, or nullptr when the
    // input does not require a gradient.
    Tensor* grad_sink(std::size_t id) {
        if (!nodes_[id].requires_grad) return nullptr;
        if (!grads_[id].has_value()) {
            grads_[id] = Tensor::zeros(nodes_[id].value.shape());
        }
        return &*grads_[id];
    }

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Shape& Var::shape() const { return tape->value(id).shape(); }
inline std::size_t Var::numel() const { return tape->value(id).numel(); }

namespace detail {

inline void check_same_tape(const char* op, Var a, Var b) {
    if (a.tape != b.tape) {
        throw ContractError(std::string(op) + ": operands on different tapes");
    }
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(op) + ": shape mismatch " +
                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

} // namespace detail

// --- elementwise arithmetic -------------------------------------------------

inline Var add(Var a, Var b) {
    detail::check_same_tape("add", a, b);
    detail::check_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return a.tape->record("add", std::move(out), {a.id, b.id},
                          [a = a.id, b = b.id](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
                              }
                              if (Tensor* gb = t.grad_sink(b)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
                              }
                          });
}

inline Var sub(Var a, Var b) {
    detail::check_same_tape("sub", a, b);
    detail::check_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return a.tape->record("sub", std::move(out), {a.id, b.id},
                          [a = a.id, b = b.id](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
                              }
                              if (Tensor* gb = t.grad_sink(b)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
                              }
                          });
}

// Hadamard product.
inline Var mul(Var a, Var b) {
    detail::check_same_tape("mul", a, b);
    detail::check_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return a.tape->record("mul", std::move(out), {a.id, b.id},
                          [a = a.id, b = b.id](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              const Tensor& av = t.value(a);
                              const Tensor& bv = t.value(b);
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
                              }
                              if (Tensor* gb = t.grad_sink(b)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
                              }
                          });
}

inline Var scale(Var a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return a.tape->record("scale", std::move(out), {a.id},
                          [a = a.id, s](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * s;
                              }
                          });
}

inline Var add_scalar(Var a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s;
    return a.tape->record("add_scalar", std::move(out), {a.id},
                          [a = a.id](Tape& t, std::size_t self) {
                              const Tensor& g = t.grad_out(self);
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
                              }
                          });
}

inline Var neg(Var a) { return scale(a, -1.0); }

// --- reductions ---------------------------------------------------------------

inline Var sum(Var a) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) total += a.value()[i];
    return a.tape->record("sum", Tensor::scalar(total), {a.id},
                          [a = a.id](Tape& t, std::size_t self) {
                              const double g = t.grad_out(self)[0];
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
                              }
                          });
}

inline Var mean(Var a) {
    if (a.numel() == 0) throw ContractError("mean: empty tensor");
    double total = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) total += a.value()[i];
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    return a.tape->record("mean", Tensor::scalar(total * inv_n), {a.id},
                          [a = a.id, inv_n](Tape& t, std::size_t self) {
                              const double g = t.grad_out(self)[0] * inv_n;
                              if (Tensor* ga = t.grad_sink(a)) {
                                  for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
                              }
                          });
}

// --- matrix multiply -----------------------------------------------------------

inline Var matmul(Var a, Var b) {
    detail::check_same_tape("matmul", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
        throw ContractError("matmul: incompatible shapes " +
                            shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double lhs = av.at(i, p);
            for (std::size_t j = 0; j < n; ++j) {
                out.at(i, j) += lhs * bv.at(p, j);
            }
        }
    }
    return a.tape->record(
        "matmul", std::move(out), {a.id, b.id},
        [a = a.id, b = b.id, m, k, n](Tape& t, std::size_t self) {
            const Tensor& g = t.grad_out(self);
            const Tensor& av = t.value(a);
            const Tensor& bv = t.value(b);
            if (Tensor* ga = t.grad_sink(a)) { // dA = g . B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g.at(i, j);
                        for (std::size_t p = 0; p < k; ++p)
                            ga->at(i, p) += gij * bv.at(p, j);
                    }
            }
            if (Tensor* gb = t.grad_sink(b)) { // dB = A^T . g
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av.at(i, p);
                        for (std::size_t j = 0; j < n; ++j)
                            gb->at(p, j) += aip * g.at(i, j);
                    }
            }
        });
}

} // namespace breg
