#pragma once
// Little-endian binary helpers and SHA-256 content hashing.

#include "eitfer/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <type_traits>

namespace eitfer {

using Sha256Digest = std::array<unsigned char, 32>;

// Incremental SHA-256 over byte strings.
class Sha256 {
public:
    Sha256() : m_ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!m_ctx || EVP_DigestInit_ex(m_ctx.get(), EVP_sha256(), nullptr) != 1)
            throw ComputeError("SHA-256 initialisation failed");
    }
    Sha256 &update(std::string_view bytes) {
        if (EVP_DigestUpdate(m_ctx.get(), bytes.data(), bytes.size()) != 1)
            throw ComputeError("SHA-256 update failed");
        return *this;
    }
    Sha256Digest digest() {
        Sha256Digest out{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(m_ctx.get(), out.data(), &len) != 1 || len != out.size())
            throw ComputeError("SHA-256 finalisation failed");
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> m_ctx;
};

inline Sha256Digest sha256(std::string_view bytes) { return Sha256().update(bytes).digest(); }

inline std::string to_hex(const Sha256Digest &d) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (unsigned char c : d) {
        s += digits[c >> 4];
        s += digits[c & 15];
    }
    return s;
}

namespace binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::string &out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    out.append(reinterpret_cast<const char *>(bytes), sizeof(T));
}

// Sequential reader over an in-memory byte string; throws IoError on
// truncation.
class Reader {
public:
    explicit Reader(std::string_view bytes) : m_bytes(bytes) {}

    template <class T>
    T get() {
        if (m_pos + sizeof(T) > m_bytes.size()) throw IoError("binary record is truncated");
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, m_bytes.data() + m_pos, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
        m_pos += sizeof(T);
        T value;
        std::memcpy(&value, bytes, sizeof(T));
        return value;
    }

    std::string_view take(std::size_t n) {
        if (m_pos + n > m_bytes.size()) throw IoError("binary record is truncated");
        auto s = m_bytes.substr(m_pos, n);
        m_pos += n;
        return s;
    }

    std::size_t remaining() const { return m_bytes.size() - m_pos; }
    std::size_t position() const { return m_pos; }

private:
    std::string_view m_bytes;
    std::size_t m_pos = 0;
};

} // namespace binary

inline std::string read_file(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_file(const std::string &path, std::string_view bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path);
}

} // namespace eitfer
