#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <variant>

#include "kronmri/tensor.hpp"

// KTEN container:
//   "KTEN" | version u8 (0x01) | dtype u8 (0x01 f32, 0x02 f64) | rank u8
//   | rank x u64 LE dims | row-major LE payload

namespace kronmri {

namespace kten {

inline constexpr std::array<char, 4> magic{'K', 'T', 'E', 'N'};
inline constexpr std::uint8_t version = 0x01;
inline constexpr std::uint8_t dtype_f32 = 0x01;
inline constexpr std::uint8_t dtype_f64 = 0x02;

static_assert(std::endian::native == std::endian::little, "KTEN I/O assumes a little-endian host");

template <Scalar T>
constexpr std::uint8_t dtype_code() {
    return std::is_same_v<T, float> ? dtype_f32 : dtype_f64;
}

template <Scalar T>
std::string encode(const Tensor<T>& t) {
    if (t.rank() > 255) throw ShapeError("KTEN supports rank <= 255");
    std::string out(magic.begin(), magic.end());
    out.push_back(static_cast<char>(version));
    out.push_back(static_cast<char>(dtype_code<T>()));
    out.push_back(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape()) {
        const std::uint64_t v = d;
        out.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    out.append(reinterpret_cast<const char*>(t.ptr()), t.numel() * sizeof(T));
    return out;
}

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

inline AnyTensor decode(const std::string& bytes, const std::string& origin = "<memory>") {
    auto fail = [&](const std::string& why) -> IoError { return IoError("KTEN " + origin + ": " + why); };
    if (bytes.size() < 7 || std::memcmp(bytes.data(), magic.data(), 4) != 0) throw fail("bad magic");
    if (static_cast<std::uint8_t>(bytes[4]) != version) throw fail("unsupported version");
    const auto dtype = static_cast<std::uint8_t>(bytes[5]);
    const std::size_t rank = static_cast<std::uint8_t>(bytes[6]);
    std::size_t pos = 7;
    if (bytes.size() < pos + rank * 8) throw fail("truncated header");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t v;
        std::memcpy(&v, bytes.data() + pos, 8);
        pos += 8;
        if (v == 0) throw fail("zero dimension");
        shape[i] = static_cast<std::size_t>(v);
    }
    auto payload = [&]<Scalar T>() -> Tensor<T> {
        const std::size_t n = shape_numel(shape);
        if (bytes.size() != pos + n * sizeof(T)) throw fail("payload size mismatch");
        std::vector<T> data(n);
        std::memcpy(data.data(), bytes.data() + pos, n * sizeof(T));
        return Tensor<T>(shape, std::move(data));
    };
    if (dtype == dtype_f32) return payload.template operator()<float>();
    if (dtype == dtype_f64) return payload.template operator()<double>();
    throw fail("unknown dtype byte");
}

}  // namespace kten

template <Scalar T>
void save_kten(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const std::string bytes = kten::encode(t);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

inline kten::AnyTensor load_kten_any(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return kten::decode(bytes, path.string());
}

/// Loads a KTEN file as T, converting the payload if it was stored in the other precision.
template <Scalar T>
Tensor<T> load_kten(const std::filesystem::path& path) {
    return std::visit(
        [](auto&& t) -> Tensor<T> {
            using Stored = typename std::decay_t<decltype(t)>::value_type;
            if constexpr (std::is_same_v<Stored, T>) {
                return std::move(t);
            } else {
                return t.template cast<T>();
            }
        },
        load_kten_any(path));
}

}  // namespace kronmri
