#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "breg/error.hpp"
#include "breg/metrics.hpp"

namespace breg {

// Flat JSON with stable key order: task, (trials, seed for categorical),
// then each metric and its optional "_norm" companion. Undefined metrics
// serialize as null.
inline std::string report_to_json(const MetricReport& report) {
    nlohmann::ordered_json j;
    j["task"] = report.task;
    if (report.task == "categorical") {
        j["trials"] = report.trials;
        j["seed"] = report.seed;
    }
    for (const MetricValue& mv : report.metrics) {
        if (mv.value.has_value()) {
            j[mv.name] = *mv.value;
        } else {
            j[mv.name] = nullptr;
        }
        if (report.task == "categorical") {
            if (mv.normalized.has_value()) {
                j[mv.name + "_norm"] = *mv.normalized;
            } else {
                j[mv.name + "_norm"] = nullptr;
            }
        }
    }
    if (!report.warnings.empty()) j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

inline void write_report(const std::string& path, const MetricReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << report_to_json(report);
    if (!out.good()) throw IoError("failed writing " + path);
}

} // namespace breg
