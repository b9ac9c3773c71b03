#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "breg/error.hpp"
#include "breg/rng.hpp"

namespace breg {

// --- dimensional metrics --------------------------------------------------------

namespace detail {

inline void check_series(const char* op, std::span<const double> pred,
                         std::span<const double> gt) {
    if (pred.size() != gt.size()) {
        throw ContractError(std::string(op) + ": series length mismatch (" +
                            std::to_string(pred.size()) + " vs " +
                            std::to_string(gt.size()) + ")");
    }
    if (pred.empty()) throw ContractError(std::string(op) + ": empty series");
}

struct SeriesStats {
    double mean_p, mean_g, var_p, var_g, cov; // population (1/n) convention
};

inline SeriesStats series_stats(std::span<const double> pred,
                                std::span<const double> gt) {
    const double n = static_cast<double>(pred.size());
    SeriesStats s{0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        s.mean_p += pred[i];
        s.mean_g += gt[i];
    }
    s.mean_p /= n;
    s.mean_g /= n;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dp = pred[i] - s.mean_p;
        const double dg = gt[i] - s.mean_g;
        s.var_p += dp * dp;
        s.var_g += dg * dg;
        s.cov += dp * dg;
    }
    s.var_p /= n;
    s.var_g /= n;
    s.cov /= n;
    return s;
}

} // namespace detail

inline double rmse(std::span<const double> pred, std::span<const double> gt) {
    detail::check_series("rmse", pred, gt);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(pred.size()));
}

// Pearson correlation coefficient.
inline double cc(std::span<const double> pred, std::span<const double> gt) {
    detail::check_series("cc", pred, gt);
    if (pred.size() < 2) throw ContractError("cc: need at least 2 samples");
    const auto s = detail::series_stats(pred, gt);
    if (s.var_p == 0.0 || s.var_g == 0.0) {
        throw UndefinedMetricError("cc: a series has zero variance");
    }
    return s.cov / std::sqrt(s.var_p * s.var_g);
}

// Concordance correlation coefficient:
// 2*cov / (var_p + var_g + (mean_p - mean_g)^2), population convention.
inline double ccc(std::span<const double> pred, std::span<const double> gt) {
    detail::check_series("ccc", pred, gt);
    if (pred.size() < 2) throw ContractError("ccc: need at least 2 samples");
    const auto s = detail::series_stats(pred, gt);
    if (s.var_p == 0.0 && s.var_g == 0.0) {
        throw UndefinedMetricError("ccc: both series have zero variance");
    }
    const double mean_diff = s.mean_p - s.mean_g;
    return 2.0 * s.cov / (s.var_p + s.var_g + mean_diff * mean_diff);
}

// Fraction of samples whose signs agree; sign(0) = 0.
inline double sagr(std::span<const double> pred, std::span<const double> gt) {
    detail::check_series("sagr", pred, gt);
    const auto sign = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (sign(pred[i]) == sign(gt[i])) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(pred.size());
}

// --- categorical metrics ----------------------------------------------------------

// K x K counts; rows are ground truth, columns are prediction.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t k) : classes(k), counts(k * k, 0) {}

    static ConfusionMatrix from_labels(std::span<const int> pred,
                                       std::span<const int> gt, std::size_t k) {
        if (pred.size() != gt.size()) {
            throw ContractError("confusion matrix: series length mismatch");
        }
        ConfusionMatrix cm(k);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (gt[i] < 0 || static_cast<std::size_t>(gt[i]) >= k ||
                pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= k) {
                throw ContractError("confusion matrix: label outside [0," +
                                    std::to_string(k) + ")");
            }
            cm.at(static_cast<std::size_t>(gt[i]), static_cast<std::size_t>(pred[i]))++;
        }
        return cm;
    }

    std::size_t& at(std::size_t truth, std::size_t pred) {
        return counts[truth * classes + pred];
    }
    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * classes + pred];
    }

    std::size_t total() const {
        std::size_t t = 0;
        for (std::size_t c : counts) t += c;
        return t;
    }
    std::size_t row_sum(std::size_t r) const {
        std::size_t t = 0;
        for (std::size_t j = 0; j < classes; ++j) t += at(r, j);
        return t;
    }
    std::size_t col_sum(std::size_t c) const {
        std::size_t t = 0;
        for (std::size_t i = 0; i < classes; ++i) t += at(i, c);
        return t;
    }
};

struct CategoricalMetrics {
    double accuracy = 0.0;
    double f1 = 0.0;    // macro
    double ppv = 0.0;   // macro
    double kappa = 0.0;
    double alpha = 0.0; // Krippendorff, nominal, two raters
    double mcc = 0.0;   // generalized multiclass statistic
    std::vector<std::size_t> dropped_classes; // absent from truth and prediction
};

inline double accuracy(const ConfusionMatrix& cm) {
    const double total = static_cast<double>(cm.total());
    if (total == 0.0) throw ContractError("accuracy: empty confusion matrix");
    double diag = 0.0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
        diag += static_cast<double>(cm.at(k, k));
    }
    return diag / total;
}

// Macro-averaged F1 and precision. Classes absent from both truth and
// prediction are dropped and reported.
struct MacroAverages {
    double f1 = 0.0;
    double ppv = 0.0;
    std::vector<std::size_t> dropped_classes;
};

inline MacroAverages macro_averages(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ContractError("macro_averages: empty confusion matrix");
    MacroAverages m;
    double f1_sum = 0.0, ppv_sum = 0.0;
    std::size_t kept = 0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
        const double tp = static_cast<double>(cm.at(k, k));
        const double truth = static_cast<double>(cm.row_sum(k));
        const double predicted = static_cast<double>(cm.col_sum(k));
        if (truth == 0.0 && predicted == 0.0) {
            m.dropped_classes.push_back(k);
            continue;
        }
        ++kept;
        const double precision = predicted > 0.0 ? tp / predicted : 0.0;
        const double recall = truth > 0.0 ? tp / truth : 0.0;
        ppv_sum += precision;
        f1_sum += precision + recall > 0.0
                      ? 2.0 * precision * recall / (precision + recall)
                      : 0.0;
    }
    if (kept == 0) throw UndefinedMetricError("macro_averages: no scorable classes");
    m.f1 = f1_sum / static_cast<double>(kept);
    m.ppv = ppv_sum / static_cast<double>(kept);
    return m;
}

inline double cohen_kappa(const ConfusionMatrix& cm) {
    const double total = static_cast<double>(cm.total());
    if (total == 0.0) throw ContractError("kappa: empty confusion matrix");
    double po = 0.0, pe = 0.0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
        po += static_cast<double>(cm.at(k, k));
        pe += static_cast<double>(cm.row_sum(k)) * static_cast<double>(cm.col_sum(k));
    }
    po /= total;
    pe /= total * total;
    if (std::abs(1.0 - pe) < 1e-15) {
        throw UndefinedMetricError("kappa: chance agreement is 1 (single category)");
    }
    return (po - pe) / (1.0 - pe);
}

// Nominal-level Krippendorff alpha over two raters (prediction, ground
// truth), from the coincidence matrix cm + cm^T.
inline double krippendorff_alpha(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ContractError("alpha: empty confusion matrix");
    const std::size_t k = cm.classes;
    std::vector<double> marginal(k, 0.0);
    double disagree = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
            const double o = static_cast<double>(cm.at(c, j)) +
                             static_cast<double>(cm.at(j, c));
            marginal[c] += o;
            if (c != j) disagree += o;
        }
    }
    const double n = 2.0 * static_cast<double>(cm.total());
    double expected = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
            if (c != j) expected += marginal[c] * marginal[j];
        }
    }
    if (expected == 0.0) {
        throw UndefinedMetricError("alpha: all mass in a single category");
    }
    return 1.0 - (n - 1.0) * disagree / expected;
}

inline double multiclass_mcc(const ConfusionMatrix& cm) {
    const double s = static_cast<double>(cm.total());
    if (s == 0.0) throw ContractError("mcc: empty confusion matrix");
    double c = 0.0, pt = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
        c += static_cast<double>(cm.at(k, k));
        const double p_k = static_cast<double>(cm.col_sum(k));
        const double t_k = static_cast<double>(cm.row_sum(k));
        pt += p_k * t_k;
        pp += p_k * p_k;
        tt += t_k * t_k;
    }
    const double denom = std::sqrt((s * s - pp) * (s * s - tt));
    if (denom == 0.0) {
        throw UndefinedMetricError("mcc: a rater used a single category");
    }
    return (c * s - pt) / denom;
}

// All six categorical scores at once. Any degenerate metric raises its
// undefined-metric error; the report builders score metric-by-metric instead
// so one undefined value cannot blank the others.
inline CategoricalMetrics categorical_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ContractError("categorical_metrics: empty confusion matrix");
    CategoricalMetrics m;
    m.accuracy = accuracy(cm);
    const MacroAverages macro = macro_averages(cm);
    m.f1 = macro.f1;
    m.ppv = macro.ppv;
    m.dropped_classes = macro.dropped_classes;
    m.kappa = cohen_kappa(cm);
    m.alpha = krippendorff_alpha(cm);
    m.mcc = multiclass_mcc(cm);
    return m;
}

// --- skew normalization -------------------------------------------------------------

using CategoricalScorer =
    std::function<double(std::span<const int> pred, std::span<const int> gt)>;

struct SkewResult {
    double original = 0.0;
    double normalized = 0.0;
    std::vector<double> per_trial;
};

// Repeatedly under-sample every class in the test set to the minimum class
// count (without replacement), re-score, and average. Trial t draws from an
// RNG stream derived from (seed, t), so results are identical however the
// trials are scheduled.
inline SkewResult skew_normalize(const CategoricalScorer& scorer,
                                 std::span<const int> preds,
                                 std::span<const int> gts, std::size_t trials,
                                 std::uint64_t seed, std::size_t threads = 1) {
    if (trials < 1) throw ContractError("skew_normalize: trials must be >= 1");
    if (preds.size() != gts.size() || gts.empty()) {
        throw ContractError("skew_normalize: bad series");
    }
    int max_label = 0;
    for (int g : gts) {
        if (g < 0) throw ContractError("skew_normalize: negative label");
        max_label = std::max(max_label, g);
    }
    const std::size_t k = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < gts.size(); ++i) {
        by_class[static_cast<std::size_t>(gts[i])].push_back(i);
    }
    std::size_t min_count = gts.size();
    for (std::size_t c = 0; c < k; ++c) {
        if (by_class[c].empty()) {
            throw ContractError("skew_normalize: class " + std::to_string(c) +
                                " absent from the test set");
        }
        min_count = std::min(min_count, by_class[c].size());
    }

    SkewResult result;
    result.original = scorer(preds, gts);
    result.per_trial.assign(trials, 0.0);

    const auto run_trial = [&](std::size_t t) {
        Rng rng(derive_stream(seed, t));
        std::vector<int> sub_pred, sub_gt;
        sub_pred.reserve(k * min_count);
        sub_gt.reserve(k * min_count);
        for (std::size_t c = 0; c < k; ++c) {
            const auto picks = rng.sample_without_replacement(by_class[c].size(), min_count);
            for (std::size_t p : picks) {
                const std::size_t i = by_class[c][p];
                sub_pred.push_back(preds[i]);
                sub_gt.push_back(gts[i]);
            }
        }
        result.per_trial[t] = scorer(sub_pred, sub_gt);
    };

    if (threads <= 1 || trials == 1) {
        for (std::size_t t = 0; t < trials; ++t) run_trial(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(threads, trials);
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t t = next.fetch_add(1); t < trials;
                     t = next.fetch_add(1)) {
                    run_trial(t);
                }
            });
        }
        for (std::thread& th : pool) th.join();
    }

    double sum = 0.0;
    for (double v : result.per_trial) sum += v;
    result.normalized = sum / static_cast<double>(trials);
    return result;
}

// --- reports ---------------------------------------------------------------------

struct MetricValue {
    std::string name;
    std::optional<double> value;      // nullopt: undefined for these inputs
    std::optional<double> normalized; // nullopt: no skew normalization
};

struct MetricReport {
    std::string task;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    std::vector<MetricValue> metrics;
    std::vector<std::string> warnings;
};

// RMSE/CC/CCC/SAGR per output; undefined correlations become null values
// with a warning instead of fake zeros.
inline MetricReport dimensional_report(std::span<const double> pred_valence,
                                       std::span<const double> pred_arousal,
                                       std::span<const double> gt_valence,
                                       std::span<const double> gt_arousal) {
    MetricReport report;
    report.task = "dimensional";
    const auto push = [&report](const std::string& name, auto&& fn) {
        MetricValue mv;
        mv.name = name;
        try {
            mv.value = fn();
        } catch (const UndefinedMetricError& e) {
            report.warnings.push_back(name + ": " + e.what());
        }
        report.metrics.push_back(std::move(mv));
    };
    push("rmse_valence", [&] { return rmse(pred_valence, gt_valence); });
    push("rmse_arousal", [&] { return rmse(pred_arousal, gt_arousal); });
    push("cc_valence", [&] { return cc(pred_valence, gt_valence); });
    push("cc_arousal", [&] { return cc(pred_arousal, gt_arousal); });
    push("ccc_valence", [&] { return ccc(pred_valence, gt_valence); });
    push("ccc_arousal", [&] { return ccc(pred_arousal, gt_arousal); });
    push("sagr_valence", [&] { return sagr(pred_valence, gt_valence); });
    push("sagr_arousal", [&] { return sagr(pred_arousal, gt_arousal); });
    return report;
}

// Accuracy plus F1/PPV/kappa/alpha/MCC, each with its skew-normalized
// companion (default 200 trials).
inline MetricReport categorical_report(std::span<const int> preds,
                                       std::span<const int> gts, std::size_t classes,
                                       std::size_t trials, std::uint64_t seed,
                                       std::size_t threads = 1) {
    MetricReport report;
    report.task = "categorical";
    report.trials = trials;
    report.seed = seed;

    const auto cm_scorer = [classes](double (*fn)(const ConfusionMatrix&)) {
        return [classes, fn](std::span<const int> p, std::span<const int> g) {
            return fn(ConfusionMatrix::from_labels(p, g, classes));
        };
    };
    const std::pair<std::string, CategoricalScorer> entries[] = {
        {"accuracy", cm_scorer(&accuracy)},
        {"f1", cm_scorer(+[](const ConfusionMatrix& cm) { return macro_averages(cm).f1; })},
        {"ppv", cm_scorer(+[](const ConfusionMatrix& cm) { return macro_averages(cm).ppv; })},
        {"kappa", cm_scorer(&cohen_kappa)},
        {"alpha", cm_scorer(&krippendorff_alpha)},
        {"mcc", cm_scorer(&multiclass_mcc)},
    };
    for (const auto& [name, scorer] : entries) {
        MetricValue mv;
        mv.name = name;
        try {
            mv.value = scorer(preds, gts);
            try {
                mv.normalized =
                    skew_normalize(scorer, preds, gts, trials, seed, threads).normalized;
            } catch (const Error& e) { // a class may be absent or degenerate in trials
                report.warnings.push_back(name + "_norm: " + std::string(e.what()));
            }
        } catch (const UndefinedMetricError& e) {
            report.warnings.push_back(name + ": " + std::string(e.what()));
        }
        report.metrics.push_back(std::move(mv));
    }
    return report;
}

} // namespace breg
