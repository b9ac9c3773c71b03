#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "breg/data.hpp"
#include "breg/error.hpp"
#include "breg/model.hpp"

namespace breg {

// Plain-text `key = value` run configuration. Unknown keys are rejected and
// every run echoes the fully resolved form next to its outputs.
struct RunConfig {
    Task task = Task::Categorical;
    std::size_t classes = 2;
    std::size_t input_channels = 1;
    std::size_t input_height = 16;
    std::size_t input_width = 16;
    std::size_t stem_channels = 8;
    std::vector<StageConfig> stages = {{1, 8}, {1, 16}, {1, 32}};
    BypassKind bypass = BypassKind::H3;
    bool batch_norm = true;
    bool weighted_loss = false;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    bool standardize = false;
    std::size_t threads = 1;
    std::string data; // data spec string; may be overridden on the command line

    static RunConfig parse_text(const std::string& text);
    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str());
    }

    std::string echo() const;

    NetworkConfig network_config() const {
        NetworkConfig cfg;
        cfg.stem_channels = stem_channels;
        cfg.stages = stages;
        cfg.bypass = bypass;
        cfg.head = task == Task::Categorical ? HeadKind::Classification
                                             : HeadKind::Regression;
        cfg.classes = classes;
        cfg.in_channels = input_channels;
        cfg.in_height = input_height;
        cfg.in_width = input_width;
        cfg.use_batch_norm = batch_norm;
        cfg.seed = seed;
        return cfg;
    }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ContractError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ContractError("config key '" + key + "': expected a non-negative integer, got '" +
                            v + "'");
    }
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ContractError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

// "3x16,3x32,3x64" -> [(3,16),(3,32),(3,64)]
inline std::vector<StageConfig> parse_stages(const std::string& v) {
    std::vector<StageConfig> stages;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::size_t x = item.find('x');
        if (x == std::string::npos) {
            throw ContractError("config key 'stages': expected BLOCKSxCHANNELS items, got '" +
                                item + "'");
        }
        StageConfig s;
        s.blocks = parse_size(item.substr(0, x), "stages");
        s.channels = parse_size(item.substr(x + 1), "stages");
        stages.push_back(s);
    }
    if (stages.empty()) throw ContractError("config key 'stages': empty");
    return stages;
}

} // namespace detail

inline RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed.front() == '#') continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string_view::npos) {
            throw ContractError("config line " + std::to_string(line_no) +
                                ": expected 'key = value'");
        }
        const std::string key{detail::trim(trimmed.substr(0, eq))};
        const std::string value{detail::trim(trimmed.substr(eq + 1))};

        if (key == "task") cfg.task = parse_task(value);
        else if (key == "classes") cfg.classes = detail::parse_size(value, key);
        else if (key == "input_channels") cfg.input_channels = detail::parse_size(value, key);
        else if (key == "input_height") cfg.input_height = detail::parse_size(value, key);
        else if (key == "input_width") cfg.input_width = detail::parse_size(value, key);
        else if (key == "stem_channels") cfg.stem_channels = detail::parse_size(value, key);
        else if (key == "stages") cfg.stages = detail::parse_stages(value);
        else if (key == "bypass") cfg.bypass = parse_bypass(value);
        else if (key == "batch_norm") cfg.batch_norm = detail::parse_bool(value, key);
        else if (key == "loss") {
            if (value == "regular") cfg.weighted_loss = false;
            else if (value == "weighted") cfg.weighted_loss = true;
            else throw ContractError("config key 'loss': expected regular or weighted, got '" +
                                     value + "'");
        }
        else if (key == "lr") cfg.lr = detail::parse_real(value, key);
        else if (key == "momentum") cfg.momentum = detail::parse_real(value, key);
        else if (key == "weight_decay") cfg.weight_decay = detail::parse_real(value, key);
        else if (key == "epochs") cfg.epochs = detail::parse_size(value, key);
        else if (key == "batch_size") cfg.batch_size = detail::parse_size(value, key);
        else if (key == "seed") cfg.seed = detail::parse_size(value, key);
        else if (key == "standardize") cfg.standardize = detail::parse_bool(value, key);
        else if (key == "threads") cfg.threads = detail::parse_size(value, key);
        else if (key == "data") cfg.data = value;
        else throw ContractError("unknown config key '" + key + "'");
    }
    return cfg;
}

inline std::string RunConfig::echo() const {
    std::ostringstream out;
    out.precision(17);
    out << "task = " << task_name(task) << '\n';
    out << "classes = " << classes << '\n';
    out << "input_channels = " << input_channels << '\n';
    out << "input_height = " << input_height << '\n';
    out << "input_width = " << input_width << '\n';
    out << "stem_channels = " << stem_channels << '\n';
    out << "stages = ";
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) out << ',';
        out << stages[i].blocks << 'x' << stages[i].channels;
    }
    out << '\n';
    out << "bypass = " << bypass_name(bypass) << '\n';
    out << "batch_norm = " << (batch_norm ? "true" : "false") << '\n';
    out << "loss = " << (weighted_loss ? "weighted" : "regular") << '\n';
    out << "lr = " << lr << '\n';
    out << "momentum = " << momentum << '\n';
    out << "weight_decay = " << weight_decay << '\n';
    out << "epochs = " << epochs << '\n';
    out << "batch_size = " << batch_size << '\n';
    out << "seed = " << seed << '\n';
    out << "standardize = " << (standardize ? "true" : "false") << '\n';
    out << "threads = " << threads << '\n';
    if (!data.empty()) out << "data = " << data << '\n';
    return out.str();
}

// --- data specs -------------------------------------------------------------------
//
//   fer2013:PATH[:train|val|test]   official CSV; split selector for eval
//   manifest:PATH                   directory (train.csv/val.csv) or one .csv
//   synth:blobs,... / synth:rings,...  keys: classes,n,nval,size,noise,seed,spread

struct DataSpec {
    enum class Kind { Fer2013, Manifest, Synth };
    Kind kind = Kind::Synth;
    std::string path;
    std::string split = "val";
    SynthSpec synth;
    std::size_t n_val = 0; // synth validation samples per class (0: n/5)
};

inline DataSpec parse_data_spec(const std::string& text, Task task) {
    DataSpec spec;
    const std::size_t colon = text.find(':');
    const std::string head = text.substr(0, colon);
    if (colon == std::string::npos || colon + 1 >= text.size()) {
        throw ContractError("data spec '" + text + "': expected KIND:DETAILS");
    }
    const std::string rest = text.substr(colon + 1);

    if (head == "fer2013") {
        spec.kind = DataSpec::Kind::Fer2013;
        const std::size_t sel = rest.rfind(':');
        if (sel != std::string::npos &&
            (rest.substr(sel + 1) == "train" || rest.substr(sel + 1) == "val" ||
             rest.substr(sel + 1) == "test")) {
            spec.path = rest.substr(0, sel);
            spec.split = rest.substr(sel + 1);
        } else {
            spec.path = rest;
        }
        return spec;
    }
    if (head == "manifest") {
        spec.kind = DataSpec::Kind::Manifest;
        spec.path = rest;
        return spec;
    }
    if (head != "synth") {
        throw ContractError("data spec '" + text +
                            "': unknown kind (expected fer2013, manifest or synth)");
    }

    spec.kind = DataSpec::Kind::Synth;
    spec.synth.task = task;
    std::stringstream ss(rest);
    std::string item;
    bool first = true;
    while (std::getline(ss, item, ',')) {
        if (first) {
            spec.synth.kind = parse_synth_kind(item);
            first = false;
            continue;
        }
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos) {
            throw ContractError("data spec: expected key=value, got '" + item + "'");
        }
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        if (key == "classes") spec.synth.classes = detail::parse_size(value, key);
        else if (key == "n") spec.synth.n_per_class = detail::parse_size(value, key);
        else if (key == "nval") spec.n_val = detail::parse_size(value, key);
        else if (key == "size") spec.synth.image_size = detail::parse_size(value, key);
        else if (key == "noise") spec.synth.noise = detail::parse_real(value, key);
        else if (key == "seed") spec.synth.seed = detail::parse_size(value, key);
        else if (key == "spread") spec.synth.spread = detail::parse_real(value, key);
        else if (key == "counts") {
            spec.synth.class_counts.clear();
            std::stringstream cs(value);
            std::string part;
            while (std::getline(cs, part, ':')) {
                spec.synth.class_counts.push_back(detail::parse_size(part, key));
            }
        }
        else throw ContractError("data spec: unknown key '" + key + "'");
    }
    if (first) throw ContractError("data spec: missing synthetic kind");
    return spec;
}

namespace detail {

inline void check_fer_config(const RunConfig& cfg) {
    if (cfg.task != Task::Categorical || cfg.classes != 7 || cfg.input_channels != 1 ||
        cfg.input_height != 48 || cfg.input_width != 48) {
        throw ContractError("fer2013 data needs task=categorical, classes=7 and a "
                            "1x48x48 input");
    }
}

inline void check_synth_config(const RunConfig& cfg, const SynthSpec& synth) {
    if (cfg.input_channels != 1 || cfg.input_height != synth.image_size ||
        cfg.input_width != synth.image_size) {
        throw ContractError("synthetic data is 1x" + std::to_string(synth.image_size) +
                            "x" + std::to_string(synth.image_size) +
                            "; the config input shape must match");
    }
    if (synth.task == Task::Categorical && cfg.classes != synth.classes) {
        throw ContractError("config classes and synthetic classes differ");
    }
}

} // namespace detail

struct TrainValData {
    Dataset train, val;
};

inline TrainValData load_train_data(const DataSpec& spec, const RunConfig& cfg) {
    TrainValData out;
    switch (spec.kind) {
        case DataSpec::Kind::Fer2013: {
            detail::check_fer_config(cfg);
            Fer2013Splits splits = load_fer2013_csv(spec.path);
            out.train = std::move(splits.train);
            out.val = std::move(splits.val);
            break;
        }
        case DataSpec::Kind::Manifest: {
            const Shape shape = {cfg.input_channels, cfg.input_height, cfg.input_width};
            const std::filesystem::path dir(spec.path);
            out.train = load_manifest((dir / "train.csv").string(), shape, cfg.task,
                                      cfg.task == Task::Categorical ? cfg.classes : 0,
                                      "train");
            out.val = load_manifest((dir / "val.csv").string(), shape, cfg.task,
                                    cfg.task == Task::Categorical ? cfg.classes : 0, "val");
            break;
        }
        case DataSpec::Kind::Synth: {
            detail::check_synth_config(cfg, spec.synth);
            SynthSpec train_spec = spec.synth;
            train_spec.split = "train";
            out.train = synth_generate(train_spec);
            SynthSpec val_spec = spec.synth;
            val_spec.split = "val";
            val_spec.seed = derive_stream(spec.synth.seed, 0x5eed);
            val_spec.n_per_class =
                spec.n_val > 0 ? spec.n_val : std::max<std::size_t>(spec.synth.n_per_class / 5, 8);
            val_spec.class_counts.clear(); // validation stays balanced
            out.val = synth_generate(val_spec);
            break;
        }
    }
    if (cfg.standardize) {
        standardize_per_channel(out.train);
        standardize_per_channel(out.val);
    }
    return out;
}

inline Dataset load_eval_data(const DataSpec& spec, const RunConfig& cfg) {
    Dataset data;
    switch (spec.kind) {
        case DataSpec::Kind::Fer2013: {
            detail::check_fer_config(cfg);
            Fer2013Splits splits = load_fer2013_csv(spec.path);
            if (spec.split == "train") data = std::move(splits.train);
            else if (spec.split == "test") data = std::move(splits.test);
            else data = std::move(splits.val);
            break;
        }
        case DataSpec::Kind::Manifest: {
            const Shape shape = {cfg.input_channels, cfg.input_height, cfg.input_width};
            std::filesystem::path path(spec.path);
            if (std::filesystem::is_directory(path)) path /= "val.csv";
            data = load_manifest(path.string(), shape, cfg.task,
                                 cfg.task == Task::Categorical ? cfg.classes : 0, "eval");
            break;
        }
        case DataSpec::Kind::Synth: {
            detail::check_synth_config(cfg, spec.synth);
            SynthSpec eval_spec = spec.synth;
            eval_spec.split = "eval";
            data = synth_generate(eval_spec);
            break;
        }
    }
    if (cfg.standardize) standardize_per_channel(data);
    return data;
}

} // namespace breg
