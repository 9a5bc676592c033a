#pragma once

#include "cliperase/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

namespace cliperase {

/// Lowercase hex SHA-256 of a byte string.
inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

}  // namespace cliperase
