#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "breg/breg.hpp"
#include "breg/verify.hpp"

namespace {

// Exit codes: 0 success, 1 verification failure, 2 usage/config error, 3 I/O.
constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kUsageError = 2;
constexpr int kIoFailure = 3;

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw breg::IoError("cannot write " + path.string());
    out << text;
    if (!out.good()) throw breg::IoError("failed writing " + path.string());
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
    const auto rows = breg::run_gradient_checks(seed);
    std::cout << std::left << std::setw(28) << "check" << std::right << std::setw(14)
              << "max-rel-err" << std::setw(12) << "limit" << "  status\n";
    bool all_ok = true;
    for (const breg::CheckRow& row : rows) {
        const double limit = tolerance * row.tolerance_factor;
        const bool ok = row.max_rel_err < limit;
        all_ok = all_ok && ok;
        std::cout << std::left << std::setw(28) << row.name << std::right
                  << std::setw(14) << std::scientific << std::setprecision(2)
                  << row.max_rel_err << std::setw(12) << limit << "  "
                  << (ok ? "PASS" : "FAIL") << '\n';
    }
    if (!all_ok) {
        std::cerr << "gradcheck: at least one derivative exceeded its limit\n";
        return kVerificationFailure;
    }
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out_dir) {
    breg::RunConfig cfg = breg::RunConfig::parse_file(config_path);
    if (!data_override.empty()) cfg.data = data_override;
    if (cfg.data.empty()) {
        throw breg::ContractError("no data source: set 'data = ...' in the config or "
                                  "pass --data");
    }

    const breg::DataSpec spec = breg::parse_data_spec(cfg.data, cfg.task);
    const breg::TrainValData data = breg::load_train_data(spec, cfg);
    std::cout << "train: " << data.train.size() << " samples, val: " << data.val.size()
              << " samples\n";

    breg::Network net(cfg.network_config());
    std::cout << "network: depth " << net.weighted_depth() << ", "
              << net.count_parameters() << " parameters\n";

    breg::TrainOptions opts;
    opts.optimizer = {cfg.lr, cfg.momentum, cfg.weight_decay};
    opts.epochs = cfg.epochs;
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.weighted_loss = cfg.weighted_loss;

    const breg::TrainResult result = breg::train(net, data.train, data.val, opts);
    for (const breg::EpochTrace& row : result.trace) {
        std::cout << "epoch " << row.epoch << ": train_loss " << row.train_loss
                  << " train_metric " << row.train_metric << " val_loss " << row.val_loss
                  << " val_metric " << row.val_metric << '\n';
    }

    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    breg::write_trace_csv((out / "trace.csv").string(), result.trace);
    breg::save_checkpoint((out / "checkpoint.breg").string(), net, cfg);
    write_text(out / "config.txt", cfg.echo());
    std::cout << "wrote " << (out / "checkpoint.breg").string() << '\n';
    return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_spec,
             const std::string& report_path, std::size_t skew_trials,
             std::uint64_t seed, std::size_t threads) {
    breg::LoadedCheckpoint loaded = breg::load_checkpoint(ckpt_path);
    breg::RunConfig& cfg = loaded.config;
    const breg::DataSpec spec =
        breg::parse_data_spec(data_spec.empty() ? cfg.data : data_spec, cfg.task);
    const breg::Dataset data = breg::load_eval_data(spec, cfg);
    if (data.empty()) throw breg::ContractError("evaluation dataset is empty");

    const breg::PenaltyMatrix penalty =
        breg::PenaltyMatrix::identity(cfg.task == breg::Task::Categorical ? cfg.classes : 2);
    const breg::EvalPass pass = breg::evaluate(loaded.network, data, penalty);

    breg::MetricReport report;
    if (cfg.task == breg::Task::Categorical) {
        report = breg::categorical_report(pass.predictions.pred_labels,
                                          pass.predictions.gt_labels, cfg.classes,
                                          skew_trials, seed, threads);
    } else {
        report = breg::dimensional_report(
            pass.predictions.pred_valence, pass.predictions.pred_arousal,
            pass.predictions.gt_valence, pass.predictions.gt_arousal);
    }
    for (const std::string& warning : report.warnings) {
        std::cerr << "warning: " << warning << '\n';
    }

    const std::string json = breg::report_to_json(report);
    std::cout << json;
    if (!report_path.empty()) {
        const std::filesystem::path out(report_path);
        if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
        write_text(out, json);
        std::ostringstream echo;
        echo << "command = eval\n"
             << "ckpt = " << ckpt_path << '\n'
             << "data = " << (data_spec.empty() ? cfg.data : data_spec) << '\n'
             << "skew_trials = " << skew_trials << '\n'
             << "seed = " << seed << '\n'
             << "threads = " << threads << '\n';
        write_text(report_path + ".config.txt", echo.str());
    }
    return kOk;
}

int cmd_metrics(const std::string& pred_path, const std::string& task_name,
                std::size_t skew_trials, std::uint64_t seed,
                const std::string& report_path, std::size_t threads) {
    const breg::Task task = breg::parse_task(task_name);
    const breg::Predictions preds = breg::load_predictions(pred_path, task);
    if (preds.size() == 0) throw breg::ContractError("prediction file is empty");

    breg::MetricReport report;
    if (task == breg::Task::Categorical) {
        int max_label = 0;
        for (int v : preds.pred_labels) max_label = std::max(max_label, v);
        for (int v : preds.gt_labels) max_label = std::max(max_label, v);
        const auto classes = static_cast<std::size_t>(max_label) + 1;
        report = breg::categorical_report(preds.pred_labels, preds.gt_labels, classes,
                                          skew_trials, seed, threads);
    } else {
        report = breg::dimensional_report(preds.pred_valence, preds.pred_arousal,
                                          preds.gt_valence, preds.gt_arousal);
    }
    for (const std::string& warning : report.warnings) {
        std::cerr << "warning: " << warning << '\n';
    }

    const std::string json = breg::report_to_json(report);
    std::cout << json;
    if (!report_path.empty()) {
        const std::filesystem::path out(report_path);
        if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
        write_text(out, json);
        std::ostringstream echo;
        echo << "command = metrics\n"
             << "pred = " << pred_path << '\n'
             << "task = " << task_name << '\n'
             << "skew_trials = " << skew_trials << '\n'
             << "seed = " << seed << '\n'
             << "threads = " << threads << '\n';
        write_text(report_path + ".config.txt", echo.str());
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"BReG-Net: bounded-gradient residual networks at desk scale"};
    app.require_subcommand(1);

    auto* gradcheck = app.add_subcommand(
        "gradcheck", "Verify analytic derivatives against central finite differences");
    std::uint64_t gc_seed = 0;
    double gc_tolerance = 1e-5;
    gradcheck->add_option("--seed", gc_seed, "RNG seed for the check points");
    gradcheck->add_option("--tolerance", gc_tolerance,
                          "max relative error per op (the end-to-end network row is "
                          "allowed 10x)");

    auto* train = app.add_subcommand("train", "Train a network from a config file");
    std::string tr_config, tr_data, tr_out;
    train->add_option("--config", tr_config, "plain-text key = value config file")
        ->required();
    train->add_option("--data", tr_data,
                      "data spec (fer2013:PATH, manifest:DIR, synth:blobs,...); "
                      "overrides the config's data key");
    train->add_option("--out", tr_out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write a report");
    std::string ev_ckpt, ev_data, ev_report;
    std::size_t ev_trials = 200, ev_threads = 1;
    std::uint64_t ev_seed = 0;
    eval->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    eval->add_option("--data", ev_data, "data spec; defaults to the checkpoint's");
    eval->add_option("--report", ev_report, "report JSON output path");
    eval->add_option("--skew-trials", ev_trials, "under-sampling trials");
    eval->add_option("--seed", ev_seed, "seed for the under-sampling trials");
    eval->add_option("--threads", ev_threads, "worker threads for the trials");

    auto* metrics = app.add_subcommand(
        "metrics", "Compute metrics straight from a prediction file");
    std::string mt_pred, mt_task = "categorical", mt_report;
    std::size_t mt_trials = 200, mt_threads = 1;
    std::uint64_t mt_seed = 0;
    metrics->add_option("--pred", mt_pred, "prediction CSV")->required();
    metrics->add_option("--task", mt_task, "categorical or dimensional");
    metrics->add_option("--skew-trials", mt_trials, "under-sampling trials");
    metrics->add_option("--seed", mt_seed, "seed for the under-sampling trials");
    metrics->add_option("--report", mt_report, "report JSON output path");
    metrics->add_option("--threads", mt_threads, "worker threads for the trials");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return kUsageError;
    }

    try {
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_tolerance);
        if (train->parsed()) return cmd_train(tr_config, tr_data, tr_out);
        if (eval->parsed()) {
            return cmd_eval(ev_ckpt, ev_data, ev_report, ev_trials, ev_seed, ev_threads);
        }
        if (metrics->parsed()) {
            return cmd_metrics(mt_pred, mt_task, mt_trials, mt_seed, mt_report, mt_threads);
        }
    } catch (const breg::ContractError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const breg::ParseError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const breg::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const breg::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kVerificationFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kVerificationFailure;
    }
    return kUsageError;
}
