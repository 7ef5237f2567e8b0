#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "stylecl/errors.hpp"

namespace stylecl {

// Little-endian binary file helpers with byte-offset error reporting.
struct ByteReader {
    std::ifstream in;
    size_t offset = 0;
    std::string path;

    explicit ByteReader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p);
    }

    void read(void* dst, size_t n, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw FormatError("truncated file " + path + " while reading " + what +
                              " at byte offset " + std::to_string(offset));
        offset += n;
    }

    uint32_t read_u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    uint64_t read_u64(const char* what) {
        unsigned char b[8];
        read(b, 8, what);
        uint64_t u = 0;
        for (int i = 7; i >= 0; --i) u = (u << 8) | b[i];
        return u;
    }

    double read_f64(const char* what) {
        uint64_t u = read_u64(what);
        double d;
        std::memcpy(&d, &u, 8);
        return d;
    }

    float read_f32(const char* what) {
        uint32_t u = read_u32(what);
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
};

struct ByteWriter {
    std::ofstream out;
    std::string path;

    explicit ByteWriter(const std::string& p) : out(p, std::ios::binary), path(p) {
        if (!out) throw IoError("cannot open " + p + " for writing");
    }

    void write(const void* src, size_t n) {
        out.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
    }

    void write_u32(uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        write(b, 4);
    }

    void write_u64(uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        write(b, 8);
    }

    void write_f64(double d) {
        uint64_t u;
        std::memcpy(&u, &d, 8);
        write_u64(u);
    }

    void write_f32(float f) {
        uint32_t u;
        std::memcpy(&u, &f, 4);
        write_u32(u);
    }

    void close_checked() {
        out.flush();
        if (!out) throw IoError("failed writing " + path);
    }
};

}  // namespace stylecl
