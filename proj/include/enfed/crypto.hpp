#pragma once

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "enfed/errors.hpp"

namespace enfed::crypto {

inline void ensure_init() {
    static const int rc = sodium_init();
    if (rc < 0) throw Error(Errc::io_error, "libsodium initialization failed");
}

using Digest16 = std::array<std::uint8_t, 16>;
using PublicKey = std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES>;
using SecretKey = std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES>;
using Signature = std::array<std::uint8_t, crypto_sign_BYTES>;
using Seed = std::array<std::uint8_t, crypto_sign_SEEDBYTES>;

// Keyed BLAKE2b truncated to 16 bytes. Key must be exactly 16 bytes.
inline Digest16 keyed_hash16(const std::uint8_t* key16, const std::uint8_t* msg, std::size_t len) {
    ensure_init();
    Digest16 out{};
    crypto_generichash(out.data(), out.size(), msg, len, key16, 16);
    return out;
}

// Unkeyed BLAKE2b truncated to 16 bytes.
inline Digest16 hash16(const std::uint8_t* msg, std::size_t len) {
    ensure_init();
    Digest16 out{};
    crypto_generichash(out.data(), out.size(), msg, len, nullptr, 0);
    return out;
}

// Ed25519 key pair used for batch signing, certificates and request identities.
struct SigningKey {
    PublicKey pub{};
    SecretKey sec{};

    static SigningKey generate() {
        ensure_init();
        SigningKey k;
        crypto_sign_keypair(k.pub.data(), k.sec.data());
        return k;
    }

    static SigningKey from_seed(const Seed& seed) {
        ensure_init();
        SigningKey k;
        crypto_sign_seed_keypair(k.pub.data(), k.sec.data(), seed.data());
        return k;
    }

    // Deterministic derivation from an arbitrary label, for reproducible fixtures.
    static SigningKey from_label(std::string_view label) {
        ensure_init();
        Seed seed{};
        crypto_generichash(seed.data(), seed.size(),
                           reinterpret_cast<const std::uint8_t*>(label.data()), label.size(),
                           nullptr, 0);
        return from_seed(seed);
    }

    Signature sign(const std::uint8_t* msg, std::size_t len) const {
        ensure_init();
        Signature sig{};
        if (crypto_sign_detached(sig.data(), nullptr, msg, len, sec.data()) != 0)
            throw Error(Errc::signing_failure, "detached signature failed");
        return sig;
    }

    Signature sign(const std::vector<std::uint8_t>& msg) const { return sign(msg.data(), msg.size()); }
};

inline bool verify(const PublicKey& pub, const std::uint8_t* msg, std::size_t len, const Signature& sig) {
    ensure_init();
    return crypto_sign_verify_detached(sig.data(), msg, len, pub.data()) == 0;
}

inline bool verify(const PublicKey& pub, const std::vector<std::uint8_t>& msg, const Signature& sig) {
    return verify(pub, msg.data(), msg.size(), sig);
}

inline std::string to_hex(const std::uint8_t* data, std::size_t len) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (std::size_t i = 0; i < len; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xf]);
    }
    return out;
}

template <std::size_t N>
std::string to_hex(const std::array<std::uint8_t, N>& a) {
    return to_hex(a.data(), N);
}

inline std::string to_hex(const std::vector<std::uint8_t>& v) { return to_hex(v.data(), v.size()); }

inline int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

inline std::optional<std::vector<std::uint8_t>> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) return std::nullopt;
    std::vector<std::uint8_t> out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_nibble(hex[i]);
        int lo = hex_nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> array_from_hex(std::string_view hex) {
    auto v = from_hex(hex);
    if (!v || v->size() != N) return std::nullopt;
    std::array<std::uint8_t, N> a{};
    std::memcpy(a.data(), v->data(), N);
    return a;
}

}  // namespace enfed::crypto
