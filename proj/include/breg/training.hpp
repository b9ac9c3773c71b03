#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "breg/data.hpp"
#include "breg/error.hpp"
#include "breg/model.hpp"
#include "breg/rng.hpp"
#include "breg/tape.hpp"

namespace breg {

// Diagonal class-weight matrix: diag[i] = f_min / f_i, so the rarest class
// weighs 1 and everything else proportionally less.
struct PenaltyMatrix {
    std::vector<double> diag;
    std::vector<std::size_t> class_counts;

    std::size_t classes() const { return diag.size(); }

    static PenaltyMatrix identity(std::size_t k) {
        PenaltyMatrix p;
        p.diag.assign(k, 1.0);
        p.class_counts.assign(k, 1);
        return p;
    }
};

inline PenaltyMatrix penalty_matrix(const std::vector<std::size_t>& class_counts) {
    if (class_counts.empty()) throw ContractError("penalty_matrix: no classes");
    std::size_t min_count = class_counts[0];
    for (std::size_t i = 0; i < class_counts.size(); ++i) {
        if (class_counts[i] == 0) {
            throw ContractError("penalty_matrix: class " + std::to_string(i) +
                                " has no training samples");
        }
        min_count = std::min(min_count, class_counts[i]);
    }
    PenaltyMatrix p;
    p.class_counts = class_counts;
    p.diag.resize(class_counts.size());
    for (std::size_t i = 0; i < class_counts.size(); ++i) {
        p.diag[i] = static_cast<double>(min_count) / static_cast<double>(class_counts[i]);
    }
    return p;
}

// Mean over the batch of -H[l,l] * log softmax(logits)[l]. With diagonal H
// the full sum collapses to the true-label term. Computed via log-sum-exp.
inline Var weighted_cross_entropy(Var logits, const std::vector<int>& labels,
                                  const PenaltyMatrix& penalty) {
    const Tensor& zv = logits.value();
    if (zv.rank() != 2) throw ContractError("weighted_cross_entropy: logits must be [n,k]");
    const std::size_t n = zv.extent(0), k = zv.extent(1);
    if (labels.size() != n) {
        throw ContractError("weighted_cross_entropy: " + std::to_string(n) +
                            " rows but " + std::to_string(labels.size()) + " labels");
    }
    if (penalty.classes() != k) {
        throw ContractError("weighted_cross_entropy: penalty matrix has " +
                            std::to_string(penalty.classes()) + " classes, logits have " +
                            std::to_string(k));
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw ContractError("weighted_cross_entropy: label " + std::to_string(label) +
                                " outside [0," + std::to_string(k) + ")");
        }
    }

    Tensor probs = Tensor::zeros({n, k});
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = zv.at(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zv.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(zv.at(i, j) - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < k; ++j) probs.at(i, j) = std::exp(zv.at(i, j) - lse);
        const auto l = static_cast<std::size_t>(labels[i]);
        total += penalty.diag[l] * (lse - zv.at(i, l));
    }
    const double inv_n = 1.0 / static_cast<double>(n);

    return logits.tape->record(
        "weighted_cross_entropy", Tensor::scalar(total * inv_n), {logits.id},
        [z = logits.id, labels, weights = penalty.diag, probs = std::move(probs),
         n, k, inv_n](Tape& t, std::size_t self) {
            const double g = t.grad_out(self)[0];
            if (Tensor* gz = t.grad_sink(z)) {
                for (std::size_t i = 0; i < n; ++i) {
                    const auto l = static_cast<std::size_t>(labels[i]);
                    const double coef = g * weights[l] * inv_n;
                    for (std::size_t j = 0; j < k; ++j) {
                        gz->at(i, j) += coef * (probs.at(i, j) - (j == l ? 1.0 : 0.0));
                    }
                }
            }
        });
}

// Mean of squared elementwise differences.
inline Var mse_loss(Var pred, Var target) {
    detail::check_same_tape("mse_loss", pred, target);
    detail::check_same_shape("mse_loss", pred.value(), target.value());
    const std::size_t n = pred.numel();
    if (n == 0) throw ContractError("mse_loss: empty tensors");
    const Tensor& pv = pred.value();
    const Tensor& tv = target.value();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pv[i] - tv[i];
        total += d * d;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return pred.tape->record(
        "mse_loss", Tensor::scalar(total * inv_n), {pred.id, target.id},
        [p = pred.id, tg = target.id, inv_n](Tape& t, std::size_t self) {
            const double g = t.grad_out(self)[0];
            const Tensor& pv = t.value(p);
            const Tensor& tv = t.value(tg);
            Tensor* gp = t.grad_sink(p);
            Tensor* gt = t.grad_sink(tg);
            for (std::size_t i = 0; i < pv.numel(); ++i) {
                const double d = 2.0 * g * inv_n * (pv[i] - tv[i]);
                if (gp) (*gp)[i] += d;
                if (gt) (*gt)[i] -= d;
            }
        });
}

// Classical momentum with coupled weight decay:
//   v <- mu*v + (g + lambda*theta);  theta <- theta - lr*v
struct MomentumConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

class MomentumOptimizer {
public:
    explicit MomentumOptimizer(MomentumConfig cfg) : cfg_(cfg) {}

    const MomentumConfig& config() const { return cfg_; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size()) {
            throw ContractError("momentum_step: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(grads.size()) + " grads");
        }
        if (velocity_.empty()) {
            velocity_.reserve(params.size());
            for (const Tensor* p : params) velocity_.push_back(Tensor::zeros(p->shape()));
        }
        if (velocity_.size() != params.size()) {
            throw ContractError("momentum_step: parameter list changed size");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& theta = *params[i];
            const Tensor& g = grads[i];
            Tensor& v = velocity_[i];
            if (!theta.same_shape(g) || !theta.same_shape(v)) {
                throw ContractError("momentum_step: shape mismatch at parameter " +
                                    std::to_string(i));
            }
            if (!g.all_finite()) {
                throw NumericalError("momentum_step: non-finite gradient at parameter " +
                                     std::to_string(i));
            }
            for (std::size_t j = 0; j < theta.numel(); ++j) {
                v[j] = cfg_.momentum * v[j] + (g[j] + cfg_.weight_decay * theta[j]);
                theta[j] -= cfg_.lr * v[j];
            }
        }
    }

private:
    MomentumConfig cfg_;
    std::vector<Tensor> velocity_;
};

// --- evaluation helpers -------------------------------------------------------

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

inline int argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.extent(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    }
    return static_cast<int>(best);
}

struct EvalPass {
    double loss = 0.0;
    double metric = 0.0; // classification: accuracy; regression: RMSE over both outputs
    Predictions predictions;
};

// Full inference pass (chunked) with the evaluation-time [-1,1] clamp on
// regression outputs.
inline EvalPass evaluate(Network& net, const Dataset& data,
                         const PenaltyMatrix& penalty,
                         std::size_t chunk_size = 64) {
    if (data.empty()) throw ContractError("evaluate: empty dataset");
    const bool classification = net.config().head == HeadKind::Classification;
    if (classification != (data.task == Task::Categorical)) {
        throw ContractError("evaluate: network head does not match dataset task");
    }

    EvalPass pass;
    pass.predictions.task = data.task;
    double loss_sum = 0.0;
    double correct = 0.0;
    double sq_err = 0.0;

    for (std::size_t start = 0; start < data.size(); start += chunk_size) {
        const std::size_t count = std::min(chunk_size, data.size() - start);
        std::vector<std::size_t> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
        Tape tape;
        Var out = net.forward(tape, data.batch(idx), /*training=*/false).output;

        if (classification) {
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) labels[i] = data.labels[start + i];
            Var loss = weighted_cross_entropy(out, labels, penalty);
            loss_sum += loss.value()[0] * static_cast<double>(count);
            const Tensor& logits = out.value();
            for (std::size_t i = 0; i < count; ++i) {
                const int pred = argmax_row(logits, i);
                if (pred == labels[i]) correct += 1.0;
                pass.predictions.pred_labels.push_back(pred);
                pass.predictions.gt_labels.push_back(labels[i]);
            }
        } else {
            Tensor target = Tensor::zeros({count, 2});
            for (std::size_t i = 0; i < count; ++i) {
                target.at(i, 0) = data.targets[start + i][0];
                target.at(i, 1) = data.targets[start + i][1];
            }
            Var loss = mse_loss(out, tape.leaf(target));
            loss_sum += loss.value()[0] * static_cast<double>(count);
            const Tensor& raw = out.value();
            for (std::size_t i = 0; i < count; ++i) {
                const double pv = clamp_unit(raw.at(i, 0));
                const double pa = clamp_unit(raw.at(i, 1));
                pass.predictions.pred_valence.push_back(pv);
                pass.predictions.pred_arousal.push_back(pa);
                pass.predictions.gt_valence.push_back(data.targets[start + i][0]);
                pass.predictions.gt_arousal.push_back(data.targets[start + i][1]);
                const double dv = pv - data.targets[start + i][0];
                const double da = pa - data.targets[start + i][1];
                sq_err += dv * dv + da * da;
            }
        }
    }

    const double n = static_cast<double>(data.size());
    pass.loss = loss_sum / n;
    pass.metric = classification ? correct / n : std::sqrt(sq_err / (2.0 * n));
    return pass;
}

// --- the epoch loop --------------------------------------------------------------

struct TrainOptions {
    MomentumConfig optimizer;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    bool weighted_loss = false;
    // Optional early exits on the validation metric.
    std::optional<double> stop_when_val_at_least; // accuracy-style metrics
    std::optional<double> stop_when_val_at_most;  // error-style metrics
};

struct EpochTrace {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_metric = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;
};

struct TrainResult {
    std::vector<EpochTrace> trace;
    PenaltyMatrix penalty;
};

inline void write_trace_csv(const std::string& path,
                            const std::vector<EpochTrace>& trace) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "epoch,train_loss,train_metric,val_loss,val_metric\n";
    for (const EpochTrace& row : trace) {
        out << row.epoch << ',' << row.train_loss << ',' << row.train_metric << ','
            << row.val_loss << ',' << row.val_metric << '\n';
    }
    if (!out.good()) throw IoError("failed writing " + path);
}

// Minibatch SGD with momentum. Deterministic for a fixed seed; per-epoch
// train/val loss and metric are appended to the returned trace.
inline TrainResult train(Network& net, const Dataset& train_data,
                         const Dataset& val_data, const TrainOptions& opts) {
    if (train_data.empty()) throw ContractError("train: empty training set");
    if (opts.batch_size == 0) throw ContractError("train: batch size must be positive");
    const bool classification = net.config().head == HeadKind::Classification;
    if (classification != (train_data.task == Task::Categorical)) {
        throw ContractError("train: network head does not match dataset task");
    }
    if (opts.weighted_loss && !classification) {
        throw ContractError("train: weighted loss applies to the categorical task");
    }

    TrainResult result;
    result.penalty = PenaltyMatrix::identity(classification ? train_data.class_count : 2);
    if (classification && opts.weighted_loss) {
        result.penalty = penalty_matrix(class_frequencies(train_data));
    }

    MomentumOptimizer optimizer(opts.optimizer);
    auto named = net.parameters();
    std::vector<Tensor*> trainable;
    for (const NamedParam& p : named) {
        if (p.trainable) trainable.push_back(p.tensor);
    }

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        Rng shuffle_rng(derive_stream(opts.seed, epoch));
        std::vector<std::size_t> order(train_data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        double correct = 0.0;
        double sq_err = 0.0;
        std::size_t seen = 0;
        std::size_t step = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t count = std::min(opts.batch_size, order.size() - start);
            if (count < 2 && net.config().use_batch_norm) continue;
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + count));
            ++step;
            try {
                Tape tape;
                Network::Binding bind = net.forward(tape, train_data.batch(idx),
                                                    /*training=*/true,
                                                    /*params_require_grad=*/true);
                Var loss{};
                if (classification) {
                    std::vector<int> labels(count);
                    for (std::size_t i = 0; i < count; ++i) {
                        labels[i] = train_data.labels[idx[i]];
                    }
                    loss = weighted_cross_entropy(bind.output, labels, result.penalty);
                    for (std::size_t i = 0; i < count; ++i) {
                        if (argmax_row(bind.output.value(), i) == labels[i]) correct += 1.0;
                    }
                } else {
                    Tensor target = Tensor::zeros({count, 2});
                    for (std::size_t i = 0; i < count; ++i) {
                        target.at(i, 0) = train_data.targets[idx[i]][0];
                        target.at(i, 1) = train_data.targets[idx[i]][1];
                    }
                    loss = mse_loss(bind.output, tape.leaf(target));
                    for (std::size_t i = 0; i < count; ++i) {
                        const double dv = clamp_unit(bind.output.value().at(i, 0)) -
                                          train_data.targets[idx[i]][0];
                        const double da = clamp_unit(bind.output.value().at(i, 1)) -
                                          train_data.targets[idx[i]][1];
                        sq_err += dv * dv + da * da;
                    }
                }
                loss_sum += loss.value()[0] * static_cast<double>(count);
                seen += count;

                Tape::GradMap grads = tape.backward(loss);
                std::vector<Tensor> grad_list;
                grad_list.reserve(bind.trainable_vars.size());
                for (Var v : bind.trainable_vars) {
                    grad_list.push_back(std::move(grads.at(v.id)));
                }
                optimizer.step(trainable, grad_list);
            } catch (const NumericalError& e) {
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                                     ", step " + std::to_string(step) + ": " + e.what());
            }
        }

        EpochTrace row;
        row.epoch = epoch;
        const double seen_n = seen > 0 ? static_cast<double>(seen) : 1.0;
        row.train_loss = loss_sum / seen_n;
        row.train_metric = classification ? correct / seen_n
                                          : std::sqrt(sq_err / (2.0 * seen_n));
        if (!val_data.empty()) {
            const EvalPass val = evaluate(net, val_data, result.penalty);
            row.val_loss = val.loss;
            row.val_metric = val.metric;
        }
        result.trace.push_back(row);
        if (!val_data.empty()) {
            if (opts.stop_when_val_at_least && row.val_metric >= *opts.stop_when_val_at_least) break;
            if (opts.stop_when_val_at_most && row.val_metric <= *opts.stop_when_val_at_most) break;
        }
    }
    return result;
}

} // namespace breg
