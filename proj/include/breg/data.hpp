#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "breg/error.hpp"
#include "breg/io.hpp"
#include "breg/rng.hpp"
#include "breg/tensor.hpp"

namespace breg {

enum class Task { Categorical, Dimensional };

inline const char* task_name(Task t) {
    return t == Task::Categorical ? "categorical" : "dimensional";
}

inline Task parse_task(const std::string& name) {
    if (name == "categorical") return Task::Categorical;
    if (name == "dimensional") return Task::Dimensional;
    throw ContractError("unknown task '" + name +
                        "' (expected categorical or dimensional)");
}

// A labeled image collection. Categorical samples carry a class id in
// [0, class_count); dimensional samples carry (valence, arousal) in [-1,1].
struct Dataset {
    Task task = Task::Categorical;
    std::string split = "train";
    std::size_t class_count = 0;
    Shape image_shape; // [c,h,w], shared by every sample
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<std::array<double, 2>> targets;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }

    // Stack a subset into one [n,c,h,w] batch.
    Tensor batch(const std::vector<std::size_t>& indices) const {
        const std::size_t per = shape_numel(image_shape);
        Tensor out = Tensor::zeros({indices.size(), image_shape[0], image_shape[1],
                                    image_shape[2]});
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const Tensor& img = images[indices[i]];
            for (std::size_t j = 0; j < per; ++j) out[i * per + j] = img[j];
        }
        return out;
    }
};

inline std::vector<std::size_t> class_frequencies(const Dataset& data) {
    if (data.task != Task::Categorical) {
        throw ContractError("class_frequencies: dataset is not categorical");
    }
    std::vector<std::size_t> counts(data.class_count, 0);
    for (int label : data.labels) counts[static_cast<std::size_t>(label)]++;
    return counts;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string> split_csv_row(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    bool quoted = false;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i < line.size() && line[i] == '"') quoted = !quoted;
        if (i == line.size() || (line[i] == ',' && !quoted)) {
            std::string_view f = trim(line.substr(start, i - start));
            if (f.size() >= 2 && f.front() == '"' && f.back() == '"') {
                f = f.substr(1, f.size() - 2);
            }
            fields.emplace_back(f);
            start = i + 1;
        }
    }
    return fields;
}

inline double parse_double_field(const std::string& s, std::size_t line_no,
                                 const char* what) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                         " '" + s + "'");
    }
    return v;
}

inline long parse_int_field(const std::string& s, std::size_t line_no,
                            const char* what) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                         " '" + s + "'");
    }
    return v;
}

} // namespace detail

// --- FER2013 ------------------------------------------------------------------

struct Fer2013Splits {
    Dataset train, val, test;
};

// Official CSV layout: header "emotion,pixels,Usage", then rows of a 0-6
// label, 2304 space-separated pixel values (48x48 row-major) and a split tag.
// Pixels are scaled to [0,1].
inline Fer2013Splits load_fer2013_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    Fer2013Splits splits;
    for (Dataset* d : {&splits.train, &splits.val, &splits.test}) {
        d->task = Task::Categorical;
        d->class_count = 7;
        d->image_shape = {1, 48, 48};
    }
    splits.train.split = "train";
    splits.val.split = "val";
    splits.test.split = "test";

    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty file");
    if (detail::trim(line) != "emotion,pixels,Usage") {
        throw ParseError("line 1: expected header 'emotion,pixels,Usage'");
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_row(line);
        if (fields.size() != 3) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 3 columns, got " + std::to_string(fields.size()));
        }
        const long label = detail::parse_int_field(fields[0], line_no, "emotion label");
        if (label < 0 || label > 6) {
            throw ParseError("line " + std::to_string(line_no) + ": emotion label " +
                             std::to_string(label) + " out of range 0-6");
        }

        std::vector<double> pixels;
        pixels.reserve(2304);
        const std::string& raw = fields[1];
        const char* p = raw.data();
        const char* end = raw.data() + raw.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p >= end) break;
            long v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) {
                throw ParseError("line " + std::to_string(line_no) + ": bad pixel value");
            }
            pixels.push_back(static_cast<double>(v) / 255.0);
            p = next;
        }
        if (pixels.size() != 2304) {
            throw ParseError("line " + std::to_string(line_no) + ": expected 2304 pixels, got " +
                             std::to_string(pixels.size()));
        }

        Dataset* dst = nullptr;
        if (fields[2] == "Training") dst = &splits.train;
        else if (fields[2] == "PublicTest") dst = &splits.val;
        else if (fields[2] == "PrivateTest") dst = &splits.test;
        else {
            throw ParseError("line " + std::to_string(line_no) + ": unknown Usage tag '" +
                             fields[2] + "'");
        }
        dst->images.push_back(tensor_of({1, 48, 48}, std::move(pixels)));
        dst->labels.push_back(static_cast<int>(label));
    }
    return splits;
}

// --- synthetic data -------------------------------------------------------------

enum class SynthKind { Blobs, Rings };

inline SynthKind parse_synth_kind(const std::string& name) {
    if (name == "blobs") return SynthKind::Blobs;
    if (name == "rings") return SynthKind::Rings;
    throw ContractError("unknown synthetic kind '" + name + "' (expected blobs or rings)");
}

struct SynthSpec {
    SynthKind kind = SynthKind::Blobs;
    std::size_t n_per_class = 100; // dimensional: total sample count
    std::size_t image_size = 16;
    double noise = 0.1;
    Task task = Task::Categorical;
    std::size_t classes = 2;
    std::uint64_t seed = 0;
    std::string split = "train";
    // Categorical geometry: centers sit on a circle of this relative radius;
    // smaller values overlap the classes more.
    double spread = 0.28;
    // Optional per-class sample counts (imbalanced sets); empty means
    // n_per_class everywhere.
    std::vector<std::size_t> class_counts;
};

namespace detail {

inline void render_pattern(Tensor& img, SynthKind kind, double cx, double cy,
                           double radius, std::size_t size) {
    const double sigma = static_cast<double>(size) / 8.0;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double dist = std::sqrt(dx * dx + dy * dy);
            const double arg = kind == SynthKind::Blobs ? dist : dist - radius;
            img[y * size + x] += std::exp(-(arg * arg) / (2.0 * sigma * sigma));
        }
    }
}

} // namespace detail

// Seeded synthetic datasets. Categorical classes render class-dependent
// patterns; the dimensional task renders a pattern whose position encodes
// (valence, arousal), drawn on a fixed intensity ramp.
inline Dataset synth_generate(const SynthSpec& spec) {
    if (spec.n_per_class < 1) throw ContractError("synth_generate: n must be >= 1");
    if (spec.image_size < 4) throw ContractError("synth_generate: image size too small");
    if (spec.task == Task::Categorical && spec.classes < 2) {
        throw ContractError("synth_generate: need >= 2 classes");
    }
    if (spec.noise < 0.0) throw ContractError("synth_generate: negative noise");

    const std::size_t size = spec.image_size;
    Rng rng(spec.seed);
    Dataset data;
    data.task = spec.task;
    data.split = spec.split;
    data.image_shape = {1, size, size};

    const double half = (static_cast<double>(size) - 1.0) / 2.0;
    const auto blank = [&]() {
        Tensor img = Tensor::zeros({1, size, size});
        // Fixed ramp canvas: channel averages downstream keep a trace of
        // where the pattern sits relative to it.
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                img[y * size + x] = 0.15 * (static_cast<double>(x) / (size - 1)) +
                                    0.15 * (static_cast<double>(y) / (size - 1));
        return img;
    };
    const auto add_noise = [&](Tensor& img) {
        if (spec.noise == 0.0) return;
        for (std::size_t i = 0; i < img.numel(); ++i) {
            img[i] += spec.noise * rng.normal();
        }
    };

    if (spec.task == Task::Categorical) {
        if (!spec.class_counts.empty() && spec.class_counts.size() != spec.classes) {
            throw ContractError("synth_generate: counts list must have one entry per class");
        }
        data.class_count = spec.classes;
        const double two_pi = 2.0 * std::numbers::pi;
        for (std::size_t k = 0; k < spec.classes; ++k) {
            const double angle = two_pi * static_cast<double>(k) /
                                 static_cast<double>(spec.classes);
            const double cx = half + spec.spread * size * std::cos(angle);
            const double cy = half + spec.spread * size * std::sin(angle);
            const double ring_r = size * (0.12 + 0.25 * static_cast<double>(k) /
                                                     static_cast<double>(spec.classes));
            const std::size_t count =
                spec.class_counts.empty() ? spec.n_per_class : spec.class_counts[k];
            for (std::size_t i = 0; i < count; ++i) {
                Tensor img = blank();
                if (spec.kind == SynthKind::Blobs) {
                    detail::render_pattern(img, SynthKind::Blobs, cx, cy, 0.0, size);
                } else {
                    detail::render_pattern(img, SynthKind::Rings, half, half, ring_r, size);
                }
                add_noise(img);
                data.images.push_back(std::move(img));
                data.labels.push_back(static_cast<int>(k));
            }
        }
        return data;
    }

    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
        const double valence = rng.uniform(-1.0, 1.0);
        const double arousal = rng.uniform(-1.0, 1.0);
        const double cx = (valence + 1.0) / 2.0 * (size - 1);
        const double cy = (arousal + 1.0) / 2.0 * (size - 1);
        Tensor img = blank();
        detail::render_pattern(img, spec.kind, cx, cy, size * 0.2, size);
        add_noise(img);
        data.images.push_back(std::move(img));
        data.targets.push_back({valence, arousal});
    }
    return data;
}

// Per-channel standardization (opt-in; the default pipeline keeps raw [0,1]).
inline void standardize_per_channel(Dataset& data) {
    if (data.empty()) return;
    const std::size_t c = data.image_shape[0];
    const std::size_t per = data.image_shape[1] * data.image_shape[2];
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    const double m = static_cast<double>(per * data.size());
    for (const Tensor& img : data.images)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < per; ++i) mean[ch] += img[ch * per + i];
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= m;
    for (const Tensor& img : data.images)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < per; ++i) {
                const double d = img[ch * per + i] - mean[ch];
                var[ch] += d * d;
            }
    for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= m;
    for (Tensor& img : data.images)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double inv = 1.0 / std::sqrt(var[ch] + 1e-8);
            for (std::size_t i = 0; i < per; ++i) {
                img[ch * per + i] = (img[ch * per + i] - mean[ch]) * inv;
            }
        }
}

// --- prediction files ------------------------------------------------------------

// Categorical: header "pred,gt". Dimensional: header
// "pred_valence,pred_arousal,gt_valence,gt_arousal", all values in [-1,1].
struct Predictions {
    Task task = Task::Categorical;
    std::vector<int> pred_labels, gt_labels;
    std::vector<double> pred_valence, pred_arousal, gt_valence, gt_arousal;

    std::size_t size() const {
        return task == Task::Categorical ? pred_labels.size() : pred_valence.size();
    }
};

inline Predictions load_predictions(const std::string& path, Task task) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    Predictions out;
    out.task = task;

    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty file");
    const std::string want_header = task == Task::Categorical
        ? "pred,gt"
        : "pred_valence,pred_arousal,gt_valence,gt_arousal";
    if (detail::trim(line) != want_header) {
        throw ParseError("line 1: expected header '" + want_header + "'");
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_row(line);
        if (task == Task::Categorical) {
            if (fields.size() != 2) {
                throw ParseError("line " + std::to_string(line_no) + ": expected 2 columns");
            }
            const long p = detail::parse_int_field(fields[0], line_no, "prediction");
            const long g = detail::parse_int_field(fields[1], line_no, "ground truth");
            if (p < 0 || g < 0) {
                throw ParseError("line " + std::to_string(line_no) + ": negative label");
            }
            out.pred_labels.push_back(static_cast<int>(p));
            out.gt_labels.push_back(static_cast<int>(g));
        } else {
            if (fields.size() != 4) {
                throw ParseError("line " + std::to_string(line_no) + ": expected 4 columns");
            }
            double v[4];
            static constexpr const char* names[4] = {"pred_valence", "pred_arousal",
                                                     "gt_valence", "gt_arousal"};
            for (int i = 0; i < 4; ++i) {
                v[i] = detail::parse_double_field(fields[i], line_no, names[i]);
                if (v[i] < -1.0 || v[i] > 1.0) {
                    throw ParseError("line " + std::to_string(line_no) + ": " + names[i] +
                                     " " + fields[i] + " outside [-1,1]");
                }
            }
            out.pred_valence.push_back(v[0]);
            out.pred_arousal.push_back(v[1]);
            out.gt_valence.push_back(v[2]);
            out.gt_arousal.push_back(v[3]);
        }
    }
    return out;
}

inline void write_predictions(const std::string& path, const Predictions& preds) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    if (preds.task == Task::Categorical) {
        out << "pred,gt\n";
        for (std::size_t i = 0; i < preds.pred_labels.size(); ++i) {
            out << preds.pred_labels[i] << ',' << preds.gt_labels[i] << '\n';
        }
    } else {
        out << "pred_valence,pred_arousal,gt_valence,gt_arousal\n";
        for (std::size_t i = 0; i < preds.pred_valence.size(); ++i) {
            out << preds.pred_valence[i] << ',' << preds.pred_arousal[i] << ','
                << preds.gt_valence[i] << ',' << preds.gt_arousal[i] << '\n';
        }
    }
    if (!out.good()) throw IoError("failed writing " + path);
}

// --- generic manifest format ------------------------------------------------------

// manifest CSV: header "path,label" (categorical) or "path,valence,arousal"
// (dimensional); each path names a raw little-endian float64 file, relative
// to the manifest, holding exactly prod(image_shape) values.
inline Dataset load_manifest(const std::string& manifest_path, Shape image_shape,
                             Task task, std::size_t class_count = 0,
                             const std::string& split = "eval") {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    const std::size_t numel = shape_numel(image_shape);

    Dataset data;
    data.task = task;
    data.split = split;
    data.image_shape = image_shape;
    data.class_count = class_count;

    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty manifest");
    const std::string want_header =
        task == Task::Categorical ? "path,label" : "path,valence,arousal";
    if (detail::trim(line) != want_header) {
        throw ParseError("line 1: expected header '" + want_header + "'");
    }

    std::size_t line_no = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_row(line);
        const std::size_t want = task == Task::Categorical ? 2 : 3;
        if (fields.size() != want) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(want) + " columns");
        }

        const std::filesystem::path file = base / fields[0];
        std::ifstream tensor_in(file, std::ios::binary);
        if (!tensor_in) {
            throw IoError("line " + std::to_string(line_no) + ": cannot open " +
                          file.string());
        }
        std::vector<double> values(numel);
        try {
            for (std::size_t i = 0; i < numel; ++i) {
                values[i] = read_f64_le(tensor_in, "tensor data");
            }
        } catch (const ParseError&) {
            throw ParseError("line " + std::to_string(line_no) + ": " + file.string() +
                             " does not hold exactly " + std::to_string(numel) +
                             " float64 values");
        }
        if (tensor_in.peek() != EOF) {
            throw ParseError("line " + std::to_string(line_no) + ": " + file.string() +
                             " does not hold exactly " + std::to_string(numel) +
                             " float64 values");
        }
        data.images.push_back(tensor_of(image_shape, std::move(values)));

        if (task == Task::Categorical) {
            const long label = detail::parse_int_field(fields[1], line_no, "label");
            if (label < 0) {
                throw ParseError("line " + std::to_string(line_no) + ": negative label");
            }
            if (class_count > 0 && label >= static_cast<long>(class_count)) {
                throw ParseError("line " + std::to_string(line_no) + ": label " +
                                 std::to_string(label) + " outside 0-" +
                                 std::to_string(class_count - 1));
            }
            max_label = std::max(max_label, static_cast<int>(label));
            data.labels.push_back(static_cast<int>(label));
        } else {
            const double v = detail::parse_double_field(fields[1], line_no, "valence");
            const double a = detail::parse_double_field(fields[2], line_no, "arousal");
            if (v < -1.0 || v > 1.0 || a < -1.0 || a > 1.0) {
                throw ParseError("line " + std::to_string(line_no) +
                                 ": label outside [-1,1]");
            }
            data.targets.push_back({v, a});
        }
    }
    if (task == Task::Categorical && class_count == 0) {
        data.class_count = static_cast<std::size_t>(max_label + 1);
    }
    return data;
}

inline void write_manifest_sample(const std::filesystem::path& file, const Tensor& img) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    for (std::size_t i = 0; i < img.numel(); ++i) {
        write_f64_le(out, img[i]);
    }
    if (!out.good()) throw IoError("failed writing " + file.string());
}

} // namespace breg
