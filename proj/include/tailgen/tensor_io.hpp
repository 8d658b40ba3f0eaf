#pragma once

// Binary-in-JSON tensor blocks shared by every persisted artifact.
//
//   {"dtype": "f64le", "shape": [rows, cols], "data": "<base64 of row-major IEEE754 doubles>"}
//
// Round trips are bit-exact: no decimal conversion ever touches the payload.

#include "tailgen/common.hpp"
#include "tailgen/rng.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace tailgen {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64Alphabet[(n >> 18) & 63];
        out += kB64Alphabet[(n >> 12) & 63];
        out += kB64Alphabet[(n >> 6) & 63];
        out += kB64Alphabet[n & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t n = bytes[i] << 16;
        out += kB64Alphabet[(n >> 18) & 63];
        out += kB64Alphabet[(n >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kB64Alphabet[(n >> 18) & 63];
        out += kB64Alphabet[(n >> 12) & 63];
        out += kB64Alphabet[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> lookup{};
    lookup.fill(-1);
    for (int k = 0; k < 64; ++k) lookup[static_cast<unsigned char>(kB64Alphabet[k])] = k;

    if (text.size() % 4 != 0) throw ConfigError("base64 payload length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=') {
                if (i + 4 != text.size() || k < 2) throw ConfigError("misplaced base64 padding");
                v[k] = 0;
                ++pad;
            } else {
                if (pad) throw ConfigError("misplaced base64 padding");
                v[k] = lookup[static_cast<unsigned char>(c)];
                if (v[k] < 0) throw ConfigError("invalid base64 character");
            }
        }
        const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out.push_back(static_cast<std::uint8_t>((n >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n & 0xff));
    }
    return out;
}

inline void put_f64le(std::vector<std::uint8_t>& out, double x) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff));
}

inline double get_f64le(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline Json tensor_to_json(const Matrix& m) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<std::size_t>(m.size()) * 8);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_f64le(bytes, m(i, j));
    return Json{{"dtype", "f64le"},
                {"shape", {m.rows(), m.cols()}},
                {"data", detail::base64_encode(bytes)}};
}

inline Json tensor_to_json(const Vector& v) {
    return tensor_to_json(Matrix(v));
}

inline Matrix tensor_from_json(const Json& j) {
    if (!j.is_object() || j.value("dtype", "") != "f64le" || !j.contains("shape") ||
        !j.contains("data")) {
        throw ConfigError("malformed tensor block");
    }
    const auto& shape = j.at("shape");
    if (!shape.is_array() || shape.size() != 2) throw ConfigError("tensor shape must be [rows, cols]");
    const auto rows = shape[0].get<Eigen::Index>();
    const auto cols = shape[1].get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw ConfigError("negative tensor shape");
    const auto bytes = detail::base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * 8) {
        throw ConfigError("tensor payload size does not match its shape");
    }
    Matrix m(rows, cols);
    std::size_t off = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j2 = 0; j2 < cols; ++j2, off += 8) m(i, j2) = detail::get_f64le(&bytes[off]);
    return m;
}

inline Vector vector_from_json(const Json& j) {
    Matrix m = tensor_from_json(j);
    if (m.cols() != 1) throw ConfigError("expected a column tensor");
    return m.col(0);
}

/// Stable 64-bit digest of a document (canonical dump: nlohmann sorts object keys).
inline std::uint64_t json_digest(const Json& j) {
    return fnv1a(j.dump());
}

inline std::string hex64(std::uint64_t x) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, x >>= 4) s[i] = digits[x & 15];
    return s;
}

}  // namespace tailgen
