#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "segkit/error.hpp"
#include "segkit/tensor.hpp"

// `.t4` tensor container:
//   magic   "T4v1"            4 bytes
//   dtype   u8                0 = f32, 1 = f64
//   dims    4 x u32 LE        n, c, h, w
//   data    raw LE scalars    n*c*h*w elements, row-major (n,c,h,w)

namespace segkit {

namespace detail {

inline void write_u32le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw TruncatedError("t4: stream ended inside header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
void write_scalars_le(std::ostream& out, const T* p, std::size_t count) {
    static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * sizeof(T)));
    } else {
        for (std::size_t k = 0; k < count; ++k) {
            unsigned char b[sizeof(T)];
            std::memcpy(b, &p[k], sizeof(T));
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
            out.write(reinterpret_cast<const char*>(b), sizeof(T));
        }
    }
}

template <typename T>
void read_scalars_le(std::istream& in, T* p, std::size_t count, const char* what) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * sizeof(T)));
        if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T))
            throw TruncatedError(std::string(what) + ": stream ended inside tensor data");
    } else {
        for (std::size_t k = 0; k < count; ++k) {
            unsigned char b[sizeof(T)];
            in.read(reinterpret_cast<char*>(b), sizeof(T));
            if (!in) throw TruncatedError(std::string(what) + ": stream ended inside tensor data");
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
            std::memcpy(&p[k], b, sizeof(T));
        }
    }
}

}  // namespace detail

template <typename T>
inline constexpr std::uint8_t t4_dtype_code = std::is_same_v<T, float> ? 0 : 1;

template <typename T>
void write_t4(std::ostream& out, const Tensor4<T>& t) {
    out.write("T4v1", 4);
    const std::uint8_t dtype = t4_dtype_code<T>;
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    detail::write_u32le(out, static_cast<std::uint32_t>(t.n()));
    detail::write_u32le(out, static_cast<std::uint32_t>(t.c()));
    detail::write_u32le(out, static_cast<std::uint32_t>(t.h()));
    detail::write_u32le(out, static_cast<std::uint32_t>(t.w()));
    detail::write_scalars_le(out, t.data(), t.size());
    if (!out) throw IoError("t4: write failed");
}

template <typename T>
Tensor4<T> read_t4(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "T4v1", 4) != 0)
        throw FormatError("t4: bad magic bytes, not a .t4 file");
    std::uint8_t dtype = 0xff;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    if (!in) throw TruncatedError("t4: stream ended inside header");
    if (dtype != t4_dtype_code<T>)
        throw FormatError("t4: dtype code " + std::to_string(dtype) +
                          " does not match requested precision");
    Shape4 s;
    s.n = static_cast<int>(detail::read_u32le(in));
    s.c = static_cast<int>(detail::read_u32le(in));
    s.h = static_cast<int>(detail::read_u32le(in));
    s.w = static_cast<int>(detail::read_u32le(in));
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
        throw FormatError("t4: invalid dims " + s.str());
    Tensor4<T> t(s);
    detail::read_scalars_le(in, t.data(), t.size(), "t4");
    return t;
}

template <typename T>
void save_t4(const std::string& path, const Tensor4<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("t4: cannot open for writing: " + path);
    write_t4(f, t);
}

template <typename T>
Tensor4<T> load_t4(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("t4: cannot open: " + path);
    return read_t4<T>(f);
}

}  // namespace segkit
