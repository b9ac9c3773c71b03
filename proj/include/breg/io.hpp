#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "breg/error.hpp"

namespace breg {

// Little-endian primitives for the binary file formats.

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 4);
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}

inline void write_f64_le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_u64_le(out, bits);
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
        throw ParseError(std::string("truncated file while reading ") + what);
    }
}

inline std::uint32_t read_u32_le(std::istream& in, const char* what) {
    char bytes[4];
    read_exact(in, bytes, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    return v;
}

inline std::uint64_t read_u64_le(std::istream& in, const char* what) {
    char bytes[8];
    read_exact(in, bytes, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    return v;
}

inline double read_f64_le(std::istream& in, const char* what) {
    const std::uint64_t bits = read_u64_le(in, what);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

} // namespace breg
