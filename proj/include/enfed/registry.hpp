#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "enfed/batch.hpp"
#include "enfed/crypto.hpp"
#include "enfed/domain.hpp"
#include "enfed/errors.hpp"
#include "enfed/journal.hpp"
#include "enfed/producer.hpp"

namespace enfed {

// Self-contained canonical certificate records instead of X.509: subject,
// public key and an issuer signature are all the trust logic needs. A
// production deployment would map this hierarchy onto standard PKI.
enum class CertKind : std::uint8_t { Root = 0, Cluster = 1, Region = 2 };

struct CertRecord {
    CertKind kind = CertKind::Root;
    std::string subject;
    crypto::PublicKey public_key{};
    std::string issuer;
    crypto::Signature signature{};

    friend bool operator==(const CertRecord&, const CertRecord&) = default;
};

// root -> optional cluster -> region
struct CertChain {
    CertRecord root;
    std::optional<CertRecord> cluster;
    CertRecord region;

    friend bool operator==(const CertChain&, const CertChain&) = default;
};

struct ChainVerdict {
    bool valid = false;
    std::string broken_link;  // "root" | "cluster" | "region" when invalid
    std::string reason;

    explicit operator bool() const { return valid; }
};

struct BackendRecord {
    RegionId region;
    std::string cluster;  // empty when unclustered
    VendorId vendor;
    std::string base_url;
    crypto::PublicKey feed_verification_key{};
    bool offers_a2a = false;
    bool offers_partial = false;
    crypto::Signature signature{};  // by the region certificate key

    friend bool operator==(const BackendRecord&, const BackendRecord&) = default;
};

// The authenticated peer on a request, produced by whichever transport
// binding verified its certificate chain.
struct ClientIdentity {
    std::string subject;
    std::vector<std::string> issuers;  // CA subjects up the chain
};

namespace wire {

inline void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    if (s.size() > 0xffff) throw Error(Errc::io_error, "string too long for wire");
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

inline std::string get_str(Reader& r) {
    std::uint16_t n = r.u16();
    const std::uint8_t* p = r.take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
}

}  // namespace wire

inline std::vector<std::uint8_t> cert_signed_region(const CertRecord& c) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'E', 'N', 'C', '1'});
    out.push_back(1);
    out.push_back(static_cast<std::uint8_t>(c.kind));
    wire::put_str(out, c.subject);
    out.insert(out.end(), c.public_key.begin(), c.public_key.end());
    wire::put_str(out, c.issuer);
    return out;
}

inline std::vector<std::uint8_t> encode_cert(const CertRecord& c) {
    auto out = cert_signed_region(c);
    out.insert(out.end(), c.signature.begin(), c.signature.end());
    return out;
}

inline CertRecord decode_cert(wire::Reader& r) {
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "ENC1", 4) != 0) throw Error(Errc::io_error, "bad certificate magic");
    if (r.u8() != 1) throw Error(Errc::io_error, "unsupported certificate version");
    CertRecord c;
    std::uint8_t kind = r.u8();
    if (kind > 2) throw Error(Errc::io_error, "unknown certificate kind");
    c.kind = static_cast<CertKind>(kind);
    c.subject = wire::get_str(r);
    std::memcpy(c.public_key.data(), r.take(c.public_key.size()), c.public_key.size());
    c.issuer = wire::get_str(r);
    std::memcpy(c.signature.data(), r.take(c.signature.size()), c.signature.size());
    return c;
}

inline std::vector<std::uint8_t> encode_chain(const CertChain& chain) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'E', 'N', 'H', '1'});
    out.push_back(1);
    out.push_back(chain.cluster ? 3 : 2);
    auto append = [&](const CertRecord& c) {
        auto bytes = encode_cert(c);
        wire::put_u32(out, static_cast<std::uint32_t>(bytes.size()));
        out.insert(out.end(), bytes.begin(), bytes.end());
    };
    append(chain.root);
    if (chain.cluster) append(*chain.cluster);
    append(chain.region);
    return out;
}

inline CertChain decode_chain(const std::vector<std::uint8_t>& bytes) {
    wire::Reader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "ENH1", 4) != 0) throw Error(Errc::io_error, "bad chain magic");
    if (r.u8() != 1) throw Error(Errc::io_error, "unsupported chain version");
    std::uint8_t count = r.u8();
    if (count != 2 && count != 3) throw Error(Errc::io_error, "chain must hold 2 or 3 certificates");
    std::vector<CertRecord> certs;
    for (std::uint8_t i = 0; i < count; ++i) {
        std::uint32_t len = r.u32();
        const std::uint8_t* p = r.take(len);
        wire::Reader cr(p, len);
        certs.push_back(decode_cert(cr));
    }
    CertChain chain;
    chain.root = certs[0];
    if (count == 3) chain.cluster = certs[1];
    chain.region = certs.back();
    return chain;
}

inline std::vector<std::uint8_t> record_signed_region(const BackendRecord& rec) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'E', 'N', 'R', '1'});
    out.push_back(1);
    out.insert(out.end(), rec.region.code().begin(), rec.region.code().end());
    wire::put_str(out, rec.cluster);
    wire::put_str(out, rec.vendor.name);
    wire::put_str(out, rec.base_url);
    out.insert(out.end(), rec.feed_verification_key.begin(), rec.feed_verification_key.end());
    out.push_back(static_cast<std::uint8_t>((rec.offers_a2a ? 1 : 0) | (rec.offers_partial ?  2 : 0)));
    return out;
}

inline std::vector<std::uint8_t> encode_record(const BackendRecord& rec) {
    auto out = record_signed_region(rec);
    out.insert(out.end(), rec.signature.begin(), rec.signature.end());
    return out;
}

inline BackendRecord decode_record(const std::vector<std::uint8_t>& bytes) {
    wire::Reader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "ENR1", 4) != 0) throw Error(Errc::io_error, "bad record magic");
    if (r.u8() != 1) throw Error(Errc::io_error, "unsupported record version");
    BackendRecord rec;
    const std::uint8_t* code = r.take(2);
    rec.region = validate_region_id(std::string(reinterpret_cast<const char*>(code), 2));
    rec.cluster = wire::get_str(r);
    rec.vendor.name = wire::get_str(r);
    rec.base_url = wire::get_str(r);
    std::memcpy(rec.feed_verification_key.data(), r.take(rec.feed_verification_key.size()),
                rec.feed_verification_key.size());
    std::uint8_t mask = r.u8();
    rec.offers_a2a = mask & 1;
    rec.offers_partial = mask & 2;
    std::memcpy(rec.signature.data(), r.take(rec.signature.size()), rec.signature.size());
    return rec;
}

// Issuing helpers used by the CLI and fixtures.

inline CertRecord make_root_cert(const crypto::SigningKey& root_key, const std::string& subject) {
    CertRecord c{CertKind::Root, subject, root_key.pub, subject, {}};
    c.signature = root_key.sign(cert_signed_region(c));
    return c;
}

inline CertRecord issue_cert(CertKind kind, const std::string& subject, const crypto::PublicKey& subject_key,
                             const std::string& issuer_subject, const crypto::SigningKey& issuer_key) {
    CertRecord c{kind, subject, subject_key, issuer_subject, {}};
    c.signature = issuer_key.sign(cert_signed_region(c));
    return c;
}

inline BackendRecord sign_record(BackendRecord rec, const crypto::SigningKey& region_key) {
    rec.signature = region_key.sign(record_signed_region(rec));
    return rec;
}

// Valid iff every link's signature verifies under its issuer and subjects
// line up; reports the first broken link otherwise.
inline ChainVerdict verify_chain(const CertChain& chain, const crypto::PublicKey& trusted_root) {
    if (chain.root.kind != CertKind::Root)
        return {false, "root", "root certificate has wrong kind"};
    if (chain.root.public_key != trusted_root)
        return {false, "root", "root key is not the trusted root"};
    if (chain.root.issuer != chain.root.subject)
        return {false, "root", "root certificate is not self-issued"};
    if (!crypto::verify(chain.root.public_key, cert_signed_region(chain.root), chain.root.signature))
        return {false, "root", "root self-signature does not verify"};

    const CertRecord* parent = &chain.root;
    if (chain.cluster) {
        if (chain.cluster->kind != CertKind::Cluster)
            return {false, "cluster", "cluster certificate has wrong kind"};
        if (chain.cluster->issuer != parent->subject)
            return {false, "cluster", "cluster issuer does not match root subject"};
        if (!crypto::verify(parent->public_key, cert_signed_region(*chain.cluster), chain.cluster->signature))
            return {false, "cluster", "cluster signature does not verify under root"};
        parent = &*chain.cluster;
    }
    if (chain.region.kind != CertKind::Region)
        return {false, "region", "region certificate has wrong kind"};
    if (chain.region.issuer != parent->subject)
        return {false, "region", "region issuer does not match parent subject"};
    if (!crypto::verify(parent->public_key, cert_signed_region(chain.region), chain.region.signature))
        return {false, "region", "region signature does not verify under " + parent->subject};
    return {true, "", ""};
}

inline ClientIdentity identity_from_chain(const CertChain& chain) {
    ClientIdentity id;
    id.subject = chain.region.subject;
    if (chain.cluster) id.issuers.push_back(chain.cluster->subject);
    id.issuers.push_back(chain.root.subject);
    return id;
}

struct RegisterResult {
    bool accepted = false;
    std::string reason;

    explicit operator bool() const { return accepted; }
};

// Per-feed allow list of consumer identities (certificate subjects or their
// issuing CAs). Per-region feeds fall back to admitting exactly the backend
// whose certificate subject is that region.
class AccessControlList {
public:
    void allow(const FeedId& feed, const std::string& identity) { allow_[feed].insert(identity); }

    bool authorize(const FeedId& feed, const ClientIdentity& id) const {
        auto it = allow_.find(feed);
        if (it != allow_.end()) {
            if (it->second.count(id.subject)) return true;
            for (const auto& issuer : id.issuers)
                if (it->second.count(issuer)) return true;
        }
        if (feed.kind == FeedKind::PerRegion && id.subject == feed.region->code()) return true;
        return false;
    }

    const std::map<FeedId, std::set<std::string>>& entries() const { return allow_; }

private:
    std::map<FeedId, std::set<std::string>> allow_;
};

// Directory of backend records keyed by region. A record is visible through
// lookup only if it was accepted with a chain that verified against the
// trusted root at registration time. Distribution/consensus across replicas
// is out of scope; the store is a signed flat file.
class Registry {
public:
    Registry() = default;
    explicit Registry(crypto::PublicKey trusted_root) : trusted_root_(trusted_root) {}

    Registry(Registry&& other) noexcept
        : trusted_root_(other.trusted_root_), entries_(std::move(other.entries_)) {}

    const crypto::PublicKey& trusted_root() const { return trusted_root_; }

    RegisterResult register_backend(const BackendRecord& record, const CertChain& chain) {
        auto verdict = verify_chain(chain, trusted_root_);
        if (!verdict) return {false, verdict.broken_link + " link invalid: " + verdict.reason};
        if (chain.region.subject != record.region.code())
            return {false, "region certificate subject does not match record region"};
        if (!crypto::verify(chain.region.public_key, record_signed_region(record), record.signature))
            return {false, "record signature does not verify under region certificate"};
        std::unique_lock lock(mu_);
        entries_[record.region] = Entry{record, chain};
        return {true, ""};
    }

    BackendRecord lookup(const RegionId& region) const {
        std::shared_lock lock(mu_);
        auto it = entries_.find(region);
        if (it == entries_.end()) throw Error(Errc::not_found, "no backend registered for " + region.code());
        return it->second.record;
    }

    std::optional<CertChain> chain_of(const RegionId& region) const {
        std::shared_lock lock(mu_);
        auto it = entries_.find(region);
        if (it == entries_.end()) return std::nullopt;
        return it->second.chain;
    }

    std::vector<BackendRecord> all_records() const {
        std::shared_lock lock(mu_);
        std::vector<BackendRecord> out;
        for (const auto& [region, e] : entries_) out.push_back(e.record);
        return out;
    }

    void save(const std::string& path) const {
        std::shared_lock lock(mu_);
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot write registry file " + path);
        out << "ENREG1|" << crypto::to_hex(trusted_root_) << '\n';
        for (const auto& [region, e] : entries_)
            out << "ENTRY|" << crypto::to_hex(encode_record(e.record)) << '|'
                << crypto::to_hex(encode_chain(e.chain)) << '\n';
    }

    // Loads and re-verifies every entry; invalid entries are rejected and
    // reported, never exposed through lookup.
    static Registry load(const std::string& path, std::vector<std::string>* rejected = nullptr) {
        auto lines = Journal::read_lines(path);
        if (lines.empty()) throw Error(Errc::io_error, "registry file missing or empty: " + path);
        auto header = Journal::split(lines[0]);
        if (header.size() != 2 || header[0] != "ENREG1")
            throw Error(Errc::io_error, "bad registry header");
        auto root = crypto::array_from_hex<crypto_sign_PUBLICKEYBYTES>(header[1]);
        if (!root) throw Error(Errc::io_error, "bad registry root key");
        Registry reg(*root);
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto f = Journal::split(lines[i]);
            if (f.size() != 3 || f[0] != "ENTRY") throw Error(Errc::io_error, "bad registry entry line");
            auto rec_bytes = crypto::from_hex(f[1]);
            auto chain_bytes = crypto::from_hex(f[2]);
            if (!rec_bytes || !chain_bytes) throw Error(Errc::io_error, "bad registry entry hex");
            auto record = decode_record(*rec_bytes);
            auto chain = decode_chain(*chain_bytes);
            auto result = reg.register_backend(record, chain);
            if (!result && rejected)
                rejected->push_back(record.region.code() + ": " + result.reason);
        }
        return reg;
    }

private:
    struct Entry {
        BackendRecord record;
        CertChain chain;
    };

    crypto::PublicKey trusted_root_{};
    mutable std::shared_mutex mu_;
    std::map<RegionId, Entry> entries_;
};

inline bool authorize_feed(const AccessControlList& acl, const FeedId& feed, const ClientIdentity& id) {
    return acl.authorize(feed, id);
}

}  // namespace enfed
