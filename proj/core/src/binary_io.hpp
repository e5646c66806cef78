#pragma once

// Little-endian binary readers/writers shared by the MDL1 / EMB1 / ACW1
// codecs. Byte-level composition keeps the formats portable regardless
// of host endianness.

#include "depthforge/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace depthforge::detail {

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void write_u32_le(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {
        (unsigned char)(v & 0xff),
        (unsigned char)((v >> 8) & 0xff),
        (unsigned char)((v >> 16) & 0xff),
        (unsigned char)((v >> 24) & 0xff),
    };
    write_bytes(out, b, 4);
}

inline void write_u64_le(std::ostream& out, uint64_t v) {
    write_u32_le(out, uint32_t(v & 0xffffffffull));
    write_u32_le(out, uint32_t(v >> 32));
}

inline void write_f64_le(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64_le(out, bits);
}

inline void write_f32_le(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32_le(out, bits);
}

inline void read_bytes(std::istream& in, void* p, size_t n, const std::string& what) {
    in.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(in.gcount()) != n)
        throw FormatError("truncated payload while reading " + what);
}

inline uint32_t read_u32_le(std::istream& in, const std::string& what) {
    unsigned char b[4];
    read_bytes(in, b, 4, what);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
           uint32_t(b[3]) << 24;
}

inline uint64_t read_u64_le(std::istream& in, const std::string& what) {
    const uint64_t lo = read_u32_le(in, what);
    const uint64_t hi = read_u32_le(in, what);
    return lo | hi << 32;
}

inline double read_f64_le(std::istream& in, const std::string& what) {
    const uint64_t bits = read_u64_le(in, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline float read_f32_le(std::istream& in, const std::string& what) {
    const uint32_t bits = read_u32_le(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// True when the stream has no bytes left; used to reject trailing junk.
inline bool at_eof(std::istream& in) {
    return in.peek() == std::char_traits<char>::eof();
}

} // namespace depthforge::detail
