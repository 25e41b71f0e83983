#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vsal/tensor.hpp"

namespace vsal {

// STNS tensor container: magic "STNS", version u8=1, u8 ndim, ndim x u32
// little-endian dims, then a float32 little-endian row-major payload.
// Used for parameters, frames, predictions and ground-truth maps.

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string stns_encode(const Tensor& t) {
    std::string out;
    out.reserve(6 + 4 * t.shape().size() + 4 * t.numel());
    out += "STNS";
    out.push_back(static_cast<char>(1));  // version
    out.push_back(static_cast<char>(t.shape().size()));
    for (int d : t.shape()) detail::put_u32le(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32le(out, bits);
    }
    return out;
}

inline Tensor stns_decode(const std::string& bytes, const std::string& origin = "<memory>") {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 6 || std::memcmp(p, "STNS", 4) != 0)
        throw DataError(origin + ": not an STNS file");
    if (p[4] != 1)
        throw DataError(origin + ": unsupported STNS version " + std::to_string(p[4]));
    const int ndim = p[5];
    std::size_t off = 6;
    if (bytes.size() < off + 4 * static_cast<std::size_t>(ndim))
        throw DataError(origin + ": truncated STNS header");
    Shape shape(ndim);
    std::size_t n = 1;
    for (int i = 0; i < ndim; ++i) {
        shape[i] = static_cast<int>(detail::get_u32le(p + off));
        if (shape[i] <= 0) throw DataError(origin + ": non-positive STNS dimension");
        n *= static_cast<std::size_t>(shape[i]);
        off += 4;
    }
    if (bytes.size() != off + 4 * n)
        throw DataError(origin + ": STNS payload size mismatch");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = detail::get_u32le(p + off + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = static_cast<double>(f);
    }
    return Tensor(std::move(shape), std::move(values));
}

inline void save_stns(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    const std::string bytes = stns_encode(t);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

inline Tensor load_stns(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return stns_decode(bytes, path.string());
}

}  // namespace vsal
