#pragma once

// Little-endian scalar I/O for the checkpoint and embedding formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "pfission/errors.hpp"

namespace pf::io {

template <class T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_arithmetic_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const std::string& what) {
    static_assert(std::is_arithmetic_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw TruncatedFile(what + ": unexpected end of file");
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
    char buf[4] = {};
    is.read(buf, 4);
    if (is.gcount() != 4) throw TruncatedFile(what + ": file too short for header");
    if (std::memcmp(buf, magic, 4) != 0) {
        throw BadMagic(what + ": expected magic '" + std::string(magic, 4) + "'");
    }
}

}  // namespace pf::io
