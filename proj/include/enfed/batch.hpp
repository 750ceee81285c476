#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "enfed/crypto.hpp"
#include "enfed/domain.hpp"
#include "enfed/errors.hpp"

namespace enfed {

// Which feed a batch belongs to. Batches never encode a region: per-region
// feeds are identified by the request path alone, so served bytes carry no
// regional information.
enum class FeedKind : std::uint8_t { Public = 0, A2A = 1, PerRegion = 2 };

inline const char* feed_kind_name(FeedKind k) {
    switch (k) {
        case FeedKind::Public: return "public";
        case FeedKind::A2A: return "a2a";
        case FeedKind::PerRegion: return "per-region";
    }
    return "?";
}

// Signed, deterministically encoded feed chunk. batch_id is monotonically
// increasing per feed, starting at 1.
struct Batch {
    FeedKind feed_kind = FeedKind::Public;
    std::uint64_t batch_id = 0;
    Timestamp produced_at = 0;
    std::vector<DiagnosisKey> keys;
    std::optional<crypto::Signature> signature;

    friend bool operator==(const Batch& a, const Batch& b) {
        return a.feed_kind == b.feed_kind && a.batch_id == b.batch_id &&
               a.produced_at == b.produced_at && a.keys == b.keys;
    }
};

namespace wire {

constexpr char kBatchMagic[4] = {'E', 'N', 'B', '1'};
constexpr std::uint8_t kBatchVersion = 1;
constexpr std::size_t kBatchHeaderSize = 4 + 1 + 1 + 8 + 8 + 4;
constexpr std::size_t kKeyRecordSize = 16 + 4;

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_i64(std::vector<std::uint8_t>& out, std::int64_t v) {
    put_u64(out, static_cast<std::uint64_t>(v));
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    bool need(std::size_t n) const { return pos_ + n <= size_; }
    std::size_t remaining() const { return size_ - pos_; }

    const std::uint8_t* take(std::size_t n) {
        if (!need(n)) throw Error(Errc::malformed_batch, "truncated payload");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return static_cast<std::uint16_t>(p[0] | p[1] << 8);
    }
    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const std::uint8_t* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline void check_day_encodable(DayIndex day) {
    if (day < 0 || day > 0xffffffffLL)
        throw Error(Errc::malformed_batch, "valid_day out of wire range");
}

}  // namespace wire

// Canonical signed region: header plus key records, no signature.
inline std::vector<std::uint8_t> batch_signed_region(const Batch& b) {
    std::vector<std::uint8_t> out;
    out.reserve(wire::kBatchHeaderSize + b.keys.size() * wire::kKeyRecordSize);
    out.insert(out.end(), wire::kBatchMagic, wire::kBatchMagic + 4);
    out.push_back(wire::kBatchVersion);
    out.push_back(static_cast<std::uint8_t>(b.feed_kind));
    wire::put_u64(out, b.batch_id);
    wire::put_i64(out, b.produced_at);
    wire::put_u32(out, static_cast<std::uint32_t>(b.keys.size()));
    for (const auto& k : b.keys) {
        wire::check_day_encodable(k.tek.valid_day);
        out.insert(out.end(), k.tek.bytes.begin(), k.tek.bytes.end());
        wire::put_u32(out, static_cast<std::uint32_t>(k.tek.valid_day));
    }
    return out;
}

inline Batch sign_batch(Batch b, const crypto::SigningKey& key) {
    b.signature = key.sign(batch_signed_region(b));
    return b;
}

// Byte-deterministic: signed region followed by a length-prefixed signature.
inline std::vector<std::uint8_t> encode_batch(const Batch& b) {
    auto out = batch_signed_region(b);
    if (b.signature) {
        wire::put_u16(out, static_cast<std::uint16_t>(b.signature->size()));
        out.insert(out.end(), b.signature->begin(), b.signature->end());
    } else {
        wire::put_u16(out, 0);
    }
    return out;
}

inline Batch decode_batch(const std::uint8_t* data, std::size_t size) {
    wire::Reader r(data, size);
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, wire::kBatchMagic, 4) != 0)
        throw Error(Errc::malformed_batch, "bad magic");
    if (r.u8() != wire::kBatchVersion) throw Error(Errc::malformed_batch, "unsupported version");
    std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(FeedKind::PerRegion))
        throw Error(Errc::malformed_batch, "unknown feed kind");
    Batch b;
    b.feed_kind = static_cast<FeedKind>(kind);
    b.batch_id = r.u64();
    b.produced_at = r.i64();
    std::uint32_t count = r.u32();
    if (!r.need(static_cast<std::size_t>(count) * wire::kKeyRecordSize))
        throw Error(Errc::malformed_batch, "key count exceeds payload");
    b.keys.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        DiagnosisKey k;
        std::memcpy(k.tek.bytes.data(), r.take(16), 16);
        k.tek.valid_day = r.u32();
        b.keys.push_back(k);
    }
    std::uint16_t sig_len = r.u16();
    if (sig_len != 0) {
        if (sig_len != crypto_sign_BYTES) throw Error(Errc::malformed_batch, "bad signature length");
        crypto::Signature sig{};
        std::memcpy(sig.data(), r.take(sig_len), sig_len);
        b.signature = sig;
    }
    if (r.remaining() != 0) throw Error(Errc::malformed_batch, "trailing bytes");
    return b;
}

inline Batch decode_batch(const std::vector<std::uint8_t>& bytes) {
    return decode_batch(bytes.data(), bytes.size());
}

inline Batch decode_batch(const std::string& bytes) {
    return decode_batch(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
}

inline bool verify_batch(const Batch& b, const crypto::PublicKey& pub) {
    if (!b.signature) return false;
    return crypto::verify(pub, batch_signed_region(b), *b.signature);
}

// The information content of an encoded batch: header and key records. The
// trailing signature is a fixed function of exactly these bytes, so a scan of
// this region covers everything the encoding can convey.
inline std::string_view batch_information_bytes(std::string_view encoded) {
    if (encoded.size() < wire::kBatchHeaderSize)
        throw Error(Errc::malformed_batch, "truncated payload");
    std::uint32_t count = 0;
    for (int i = 0; i < 4; ++i)
        count |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(encoded[22 + i])) << (8 * i);
    std::size_t len = wire::kBatchHeaderSize + static_cast<std::size_t>(count) * wire::kKeyRecordSize;
    if (len > encoded.size()) throw Error(Errc::malformed_batch, "truncated payload");
    return encoded.substr(0, len);
}

}  // namespace enfed
