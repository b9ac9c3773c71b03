#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "breg/bypass.hpp"
#include "breg/gradcheck.hpp"
#include "breg/layers.hpp"
#include "breg/model.hpp"
#include "breg/rng.hpp"
#include "breg/training.hpp"

namespace breg {

struct CheckRow {
    std::string name;
    double max_rel_err = 0.0;
    // The end-to-end network row is allowed a wider margin than single ops.
    double tolerance_factor = 1.0;
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Keeps every coordinate away from the ReLU kink so central differences
// stay on one side.
inline Tensor random_tensor_off_kink(Shape shape, Rng& rng, double margin = 0.05) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (std::abs(t[i]) < margin) t[i] = t[i] < 0.0 ? -margin : margin;
    }
    return t;
}

// Finite differences over every trainable tensor of a network against one
// analytic backward pass. Used for the composed-network row, where
// grad_check's single-leaf shape does not fit.
inline double network_param_grad_check(Network& net, const Tensor& batch,
                                       const std::vector<int>& labels,
                                       double epsilon) {
    const PenaltyMatrix penalty = PenaltyMatrix::identity(net.config().classes);
    const auto loss_value = [&]() {
        Tape tape;
        Var out = net.forward(tape, batch, /*training=*/true).output;
        return weighted_cross_entropy(out, labels, penalty).value()[0];
    };

    Tape tape;
    Network::Binding bind = net.forward(tape, batch, /*training=*/true,
                                        /*params_require_grad=*/true);
    Var loss = weighted_cross_entropy(bind.output, labels, penalty);
    Tape::GradMap grads = tape.backward(loss);

    auto params = net.parameters();
    std::vector<Tensor*> trainable;
    for (const NamedParam& p : params) {
        if (p.trainable) trainable.push_back(p.tensor);
    }

    double max_err = 0.0;
    for (std::size_t t = 0; t < trainable.size(); ++t) {
        const Tensor& analytic = grads.at(bind.trainable_vars[t].id);
        Tensor& theta = *trainable[t];
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + epsilon;
            const double fp = loss_value();
            theta[i] = saved - epsilon;
            const double fm = loss_value();
            theta[i] = saved;
            const double fd = (fp - fm) / (2.0 * epsilon);
            const double err = std::abs(analytic[i] - fd) /
                               std::max(1.0, std::abs(analytic[i]));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

} // namespace detail

// The full derivative-verification suite: bypass functions, every layer,
// both losses, one composed block per bypass kind, and a two-block network
// checked over all of its parameters.
inline std::vector<CheckRow> run_gradient_checks(std::uint64_t seed,
                                                 double epsilon = 1e-5) {
    Rng rng(seed);
    std::vector<CheckRow> rows;
    const auto push = [&rows](std::string name, double err, double factor = 1.0) {
        rows.push_back({std::move(name), err, factor});
    };

    // Bypass functions, 128 coordinates each.
    for (BypassKind kind : {BypassKind::Identity, BypassKind::H1, BypassKind::H2,
                            BypassKind::H3}) {
        const Tensor x = detail::random_tensor({128}, rng, -10.0, 10.0);
        push(std::string("bypass_") + bypass_name(kind),
             grad_check([kind](Tape&, Var v) { return sum(bypass_apply(kind, v)); },
                        x, epsilon));
    }

    // Elementwise and reduction ops.
    {
        const Tensor x = detail::random_tensor({64}, rng);
        const Tensor other = detail::random_tensor({64}, rng);
        push("add", grad_check(
                        [&other](Tape& t, Var v) {
                            return sum(add(v, t.leaf(other)));
                        },
                        x, epsilon));
        push("mul", grad_check(
                        [&other](Tape& t, Var v) {
                            return sum(mul(v, t.leaf(other)));
                        },
                        x, epsilon));
        push("mul_self", grad_check([](Tape&, Var v) { return sum(mul(v, v)); }, x,
                                    epsilon));
        push("mean", grad_check([](Tape&, Var v) { return mean(v); }, x, epsilon));
    }
    {
        const Tensor x = detail::random_tensor_off_kink({128}, rng);
        push("relu", grad_check([](Tape&, Var v) { return sum(relu(v)); }, x, epsilon));
    }
    {
        const Tensor a = detail::random_tensor({5, 7}, rng);
        const Tensor b = detail::random_tensor({7, 4}, rng);
        push("matmul_lhs", grad_check(
                               [&b](Tape& t, Var v) { return sum(matmul(v, t.leaf(b))); },
                               a, epsilon));
        push("matmul_rhs", grad_check(
                               [&a](Tape& t, Var v) { return sum(matmul(t.leaf(a), v)); },
                               b, epsilon));
    }

    // Convolution w.r.t. input, kernel and bias.
    {
        const Tensor x = detail::random_tensor({2, 2, 5, 5}, rng);
        const Tensor k = detail::random_tensor({3, 2, 3, 3}, rng);
        const Tensor b = detail::random_tensor({3}, rng);
        const auto conv_sum = [](Var vx, Var vk, Var vb) {
            return sum(conv2d(vx, vk, vb, 1, 1));
        };
        push("conv2d_input",
             grad_check([&](Tape& t, Var v) { return conv_sum(v, t.leaf(k), t.leaf(b)); },
                        x, epsilon));
        push("conv2d_kernel",
             grad_check([&](Tape& t, Var v) { return conv_sum(t.leaf(x), v, t.leaf(b)); },
                        k, epsilon));
        push("conv2d_bias",
             grad_check([&](Tape& t, Var v) { return conv_sum(t.leaf(x), t.leaf(k), v); },
                        b, epsilon));
        push("conv2d_strided",
             grad_check([&](Tape& t, Var v) {
                 return sum(conv2d(v, t.leaf(k), t.leaf(b), 2, 1));
             }, x, epsilon));
    }

    // Batch norm in both modes.
    {
        const Tensor x = detail::random_tensor({4, 3, 4, 4}, rng);
        const Tensor gamma = detail::random_tensor({3}, rng, 0.5, 1.5);
        const Tensor beta = detail::random_tensor({3}, rng, -0.5, 0.5);
        const auto bn = [](Var vx, Var vg, Var vb, bool training) {
            Tensor rm = Tensor::zeros({3});
            Tensor rv = Tensor::full({3}, 1.0);
            for (std::size_t c = 0; c < 3; ++c) {
                rm[c] = 0.1 * static_cast<double>(c);
                rv[c] = 1.0 + 0.2 * static_cast<double>(c);
            }
            return sum(batch_norm(vx, vg, vb, rm, rv, training));
        };
        push("batch_norm_train_input",
             grad_check([&](Tape& t, Var v) {
                 return bn(v, t.leaf(gamma), t.leaf(beta), true);
             }, x, epsilon));
        push("batch_norm_train_gamma",
             grad_check([&](Tape& t, Var v) {
                 return bn(t.leaf(x), v, t.leaf(beta), true);
             }, gamma, epsilon));
        push("batch_norm_train_beta",
             grad_check([&](Tape& t, Var v) {
                 return bn(t.leaf(x), t.leaf(gamma), v, true);
             }, beta, epsilon));
        push("batch_norm_infer_input",
             grad_check([&](Tape& t, Var v) {
                 return bn(v, t.leaf(gamma), t.leaf(beta), false);
             }, x, epsilon));
    }

    {
        const Tensor x = detail::random_tensor({2, 3, 4, 4}, rng);
        push("global_avg_pool",
             grad_check([](Tape&, Var v) { return sum(global_avg_pool(v)); }, x, epsilon));
    }

    // Fully connected and softmax.
    {
        const Tensor x = detail::random_tensor({3, 6}, rng);
        const Tensor w = detail::random_tensor({4, 6}, rng);
        const Tensor b = detail::random_tensor({4}, rng);
        push("fully_connected_input",
             grad_check([&](Tape& t, Var v) {
                 return sum(fully_connected(v, t.leaf(w), t.leaf(b)));
             }, x, epsilon));
        push("fully_connected_weight",
             grad_check([&](Tape& t, Var v) {
                 return sum(fully_connected(t.leaf(x), v, t.leaf(b)));
             }, w, epsilon));
        push("fully_connected_bias",
             grad_check([&](Tape& t, Var v) {
                 return sum(fully_connected(t.leaf(x), t.leaf(w), v));
             }, b, epsilon));
        // Plain sum of softmax is constant; weight rows to expose the Jacobian.
        const Tensor coef = detail::random_tensor({3, 6}, rng);
        push("softmax", grad_check(
                            [&coef](Tape& t, Var v) {
                                return sum(mul(softmax(v), t.leaf(coef)));
                            },
                            x, epsilon));
    }

    // Losses.
    {
        const Tensor logits = detail::random_tensor({5, 4}, rng);
        const std::vector<int> labels = {0, 3, 1, 2, 1};
        const PenaltyMatrix penalty = penalty_matrix({40, 10, 25, 20});
        push("weighted_cross_entropy",
             grad_check([&](Tape&, Var v) {
                 return weighted_cross_entropy(v, labels, penalty);
             }, logits, epsilon));
        const Tensor pred = detail::random_tensor({6, 2}, rng);
        const Tensor target = detail::random_tensor({6, 2}, rng);
        push("mse_loss", grad_check(
                             [&target](Tape& t, Var v) {
                                 return mse_loss(v, t.leaf(target));
                             },
                             pred, epsilon));
    }

    // One composed block per bypass kind (BN off isolates the block algebra).
    for (BypassKind kind : {BypassKind::Identity, BypassKind::H1, BypassKind::H2,
                            BypassKind::H3}) {
        BlockConfig bc;
        bc.bypass = kind;
        bc.in_channels = 2;
        bc.out_channels = 2;
        bc.downsample = false;
        bc.use_batch_norm = false;
        Rng block_rng(derive_stream(seed, 100 + static_cast<std::uint64_t>(kind)));
        BlockParams block = BlockParams::init(bc, block_rng);
        const Tensor x = detail::random_tensor_off_kink({2, 2, 5, 5}, rng);
        push(std::string("breg_block_") + bypass_name(kind),
             grad_check([&block](Tape&, Var v) {
                 return sum(breg_block_forward(v, block, /*training=*/false));
             }, x, epsilon));
    }

    // Composed 2-block network, checked over the input and all parameters.
    {
        NetworkConfig cfg;
        cfg.stem_channels = 3;
        cfg.stages = {{1, 3}, {1, 4}};
        cfg.bypass = BypassKind::H3;
        cfg.head = HeadKind::Classification;
        cfg.classes = 2;
        cfg.in_channels = 1;
        cfg.in_height = 6;
        cfg.in_width = 6;
        cfg.use_batch_norm = false;
        cfg.seed = derive_stream(seed, 999);
        Network net(cfg);
        const Tensor batch = detail::random_tensor({2, 1, 6, 6}, rng, 0.1, 1.0);
        const std::vector<int> labels = {0, 1};
        const PenaltyMatrix penalty = PenaltyMatrix::identity(2);
        push("network_2block_input",
             grad_check([&](Tape&, Var v) {
                 Var out = net.forward_var(v, /*training=*/true).output;
                 return weighted_cross_entropy(out, labels, penalty);
             }, batch, epsilon),
             10.0);
        push("network_2block_params",
             detail::network_param_grad_check(net, batch, labels, epsilon), 10.0);
    }

    return rows;
}

} // namespace breg
