#pragma once

#include <fstream>
#include <map>
#include <string>

#include "breg/config.hpp"
#include "breg/error.hpp"
#include "breg/io.hpp"
#include "breg/model.hpp"

namespace breg {

// Checkpoint layout (all integers little-endian):
//   "BREG" magic, u32 format version,
//   u32 config length + that many UTF-8 bytes (the resolved config echo),
//   u32 record count, then per tensor:
//     u32 name length + name bytes, u32 rank, u64 extents..., f64 values...
// Round-trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, Network& net,
                            const RunConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write("BREG", 4);
    write_u32_le(out, kCheckpointVersion);
    const std::string echo = cfg.echo();
    write_u32_le(out, static_cast<std::uint32_t>(echo.size()));
    out.write(echo.data(), static_cast<std::streamsize>(echo.size()));

    const auto params = net.parameters();
    write_u32_le(out, static_cast<std::uint32_t>(params.size()));
    for (const NamedParam& p : params) {
        write_u32_le(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32_le(out, static_cast<std::uint32_t>(p.tensor->rank()));
        for (std::size_t d = 0; d < p.tensor->rank(); ++d) {
            write_u64_le(out, p.tensor->extent(d));
        }
        for (std::size_t i = 0; i < p.tensor->numel(); ++i) {
            write_f64_le(out, (*p.tensor)[i]);
        }
    }
    if (!out.good()) throw IoError("failed writing " + path);
}

struct LoadedCheckpoint {
    RunConfig config;
    Network network;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    read_exact(in, magic, 4, "magic");
    if (std::string_view(magic, 4) != "BREG") {
        throw ParseError(path + ": not a BREG checkpoint");
    }
    const std::uint32_t version = read_u32_le(in, "version");
    if (version != kCheckpointVersion) {
        throw ParseError(path + ": unsupported checkpoint version " +
                         std::to_string(version));
    }
    const std::uint32_t config_len = read_u32_le(in, "config length");
    std::string echo(config_len, '\0');
    read_exact(in, echo.data(), config_len, "config echo");

    RunConfig cfg = RunConfig::parse_text(echo);
    LoadedCheckpoint loaded{cfg, Network(cfg.network_config())};

    const std::uint32_t record_count = read_u32_le(in, "record count");
    std::map<std::string, Tensor> records;
    for (std::uint32_t r = 0; r < record_count; ++r) {
        const std::uint32_t name_len = read_u32_le(in, "name length");
        std::string name(name_len, '\0');
        read_exact(in, name.data(), name_len, "name");
        const std::uint32_t rank = read_u32_le(in, "rank");
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::size_t>(read_u64_le(in, "extent"));
        }
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = read_f64_le(in, "tensor value");
        records.emplace(std::move(name), tensor_of(std::move(shape), std::move(values)));
    }

    const auto params = loaded.network.parameters();
    if (params.size() != records.size()) {
        throw ParseError(path + ": checkpoint holds " + std::to_string(records.size()) +
                         " tensors but the config builds " + std::to_string(params.size()));
    }
    for (const NamedParam& p : params) {
        const auto it = records.find(p.name);
        if (it == records.end()) {
            throw ParseError(path + ": missing tensor '" + p.name + "'");
        }
        if (it->second.shape() != p.tensor->shape()) {
            throw ParseError(path + ": tensor '" + p.name + "' has shape " +
                             shape_str(it->second.shape()) + ", expected " +
                             shape_str(p.tensor->shape()));
        }
        *p.tensor = it->second;
    }
    return loaded;
}

} // namespace breg
