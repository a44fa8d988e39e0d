#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "segkit/arch.hpp"
#include "segkit/error.hpp"
#include "segkit/network.hpp"
#include "segkit/tensor_io.hpp"

namespace segkit {

// .mck model checkpoint, format version 1. All integers little-endian:
//
//   offset 0: magic "MCK1"
//   offset 4: format version, u16
//   then one record per parameter tensor, in network parameter order:
//     name_len u16 | name (UTF-8) | dtype u8 (0 = f32) | ndim u8 (always 4)
//     | dims u32 x 4 | payload (f32 LE, prod(dims) scalars)
//   The stream ends after the last record.
//
// Parameters are stored in single precision regardless of compute precision,
// so the byte length is exactly 6 + sum(record headers) + 4 * total_params.

namespace detail {

inline void write_u16le(std::ostream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t read_u16le(std::istream& in, const char* what) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw TruncatedError(std::string(what) + ": stream ended inside header");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace detail

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
std::string save_checkpoint(Network<T>& net) {
    std::ostringstream out(std::ios::binary);
    out.write("MCK1", 4);
    detail::write_u16le(out, kCheckpointVersion);
    for (const ParamRef<T>& p : net.parameters()) {
        if (p.name.size() > 0xffff) throw ContractError("checkpoint: name too long");
        detail::write_u16le(out, static_cast<std::uint16_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        out.put(0);  // dtype 0 = f32
        out.put(4);  // ndim
        const Shape4 s = p.value->shape();
        detail::write_u32le(out, static_cast<std::uint32_t>(s.n));
        detail::write_u32le(out, static_cast<std::uint32_t>(s.c));
        detail::write_u32le(out, static_cast<std::uint32_t>(s.h));
        detail::write_u32le(out, static_cast<std::uint32_t>(s.w));
        if constexpr (std::is_same_v<T, float>) {
            detail::write_scalars_le(out, p.value->data(), p.value->size());
        } else {
            for (std::size_t i = 0; i < p.value->size(); ++i) {
                const float f = static_cast<float>((*p.value)[i]);
                detail::write_scalars_le(out, &f, 1);
            }
        }
    }
    return std::move(out).str();
}

// Overwrites every parameter tensor of `net` from `bytes`, validating the
// record names and shapes against the network's own parameter list.
template <typename T>
void load_checkpoint_into(const std::string& bytes, Network<T>& net) {
    std::istringstream in(bytes, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    if (!in) throw TruncatedError("checkpoint: stream shorter than magic");
    if (std::string(magic, 4) != "MCK1")
        throw FormatError("checkpoint: bad magic (not an .mck stream)");
    const std::uint16_t version = detail::read_u16le(in, "checkpoint");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));

    for (const ParamRef<T>& p : net.parameters()) {
        const std::uint16_t name_len = detail::read_u16le(in, "checkpoint");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw TruncatedError("checkpoint: stream ended inside name");
        if (name != p.name)
            throw ShapeError("checkpoint: expected parameter '" + p.name + "', found '" +
                             name + "' (different architecture?)");
        const int dtype = in.get();
        const int ndim = in.get();
        if (dtype == EOF || ndim == EOF)
            throw TruncatedError("checkpoint: stream ended inside record header");
        if (dtype != 0) throw FormatError("checkpoint: unsupported dtype code");
        if (ndim != 4) throw FormatError("checkpoint: expected 4 dims");
        Shape4 s;
        s.n = static_cast<int>(detail::read_u32le(in));
        s.c = static_cast<int>(detail::read_u32le(in));
        s.h = static_cast<int>(detail::read_u32le(in));
        s.w = static_cast<int>(detail::read_u32le(in));
        if (s != p.value->shape())
            throw ShapeError("checkpoint: shape mismatch for '" + p.name + "': stored " +
                             s.str() + ", network has " + p.value->shape().str());
        if constexpr (std::is_same_v<T, float>) {
            detail::read_scalars_le(in, p.value->data(), p.value->size(), "checkpoint");
        } else {
            for (std::size_t i = 0; i < p.value->size(); ++i) {
                float f;
                detail::read_scalars_le(in, &f, 1, "checkpoint");
                (*p.value)[i] = static_cast<T>(f);
            }
        }
    }
    if (in.peek() != EOF) throw FormatError("checkpoint: trailing bytes after last record");
}

template <typename T>
Network<T> load_checkpoint(const std::string& bytes, const ArchSpec& spec) {
    Prng rng(0);  // build-time init is overwritten below
    Network<T> net = build<T>(spec, rng);
    load_checkpoint_into(bytes, net);
    return net;
}

// Exact serialized byte length, computed from the parameter plan alone.
inline std::size_t payload_size(const ArchSpec& spec) {
    std::size_t bytes = 6;  // magic + version
    for (const ParamEntry& e : param_plan(spec))
        bytes += 2 + e.name.size() + 1 + 1 + 16 + 4 * e.shape.count();
    return bytes;
}

template <typename T>
void save_checkpoint_file(Network<T>& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    const std::string bytes = save_checkpoint(net);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return std::move(ss).str();
}

template <typename T>
Network<T> load_checkpoint_file(const std::string& path, const ArchSpec& spec) {
    return load_checkpoint<T>(read_file_bytes(path), spec);
}

}  // namespace segkit
