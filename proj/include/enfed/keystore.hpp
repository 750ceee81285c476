#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "enfed/crypto.hpp"
#include "enfed/domain.hpp"
#include "enfed/errors.hpp"
#include "enfed/journal.hpp"

namespace enfed {

// An infected user's upload: the only place regional declarations live.
struct DiagnosisKeyUpload {
    std::vector<DiagnosisKey> keys;          // 1..14
    std::set<RegionId> declared_regions;     // S; must contain testing_region
    RegionId testing_region;                 // B
    Timestamp upload_time = 0;
    std::string authorization_code;

    void validate() const {
        if (keys.empty() || keys.size() > kMaxKeysPerUpload)
            throw Error(Errc::malformed_upload, "upload must carry 1..14 keys");
        if (!declared_regions.count(testing_region))
            throw Error(Errc::malformed_upload, "testing region missing from declared set");
    }
};

enum class KeyOrigin { Local, Remote };

// Declared regions are attached to Local entries only; a Remote entry knows
// just the peer region it was pulled from.
struct StoredKey {
    DiagnosisKey key;
    KeyOrigin origin = KeyOrigin::Local;
    std::set<RegionId> declared_regions;   // Local only
    std::optional<RegionId> source_region; // Remote only
    Timestamp stored_at = 0;
    std::uint64_t seq = 0;                 // insertion order; doubles as cursor
};

struct RetentionPolicy {
    int t_days = 30;

    Timestamp cutoff(Timestamp now) const { return now - static_cast<Timestamp>(t_days) * kSecondsPerDay; }
};

using UploadCursor = std::uint64_t;

// Accepts or rejects one-time authorization codes presented with uploads.
using CodeVerifier = std::function<bool(const std::string& code)>;

inline CodeVerifier static_code_verifier(std::set<std::string> accepted) {
    return [accepted = std::move(accepted)](const std::string& code) { return accepted.count(code) > 0; };
}

// Per-backend Diagnosis Keys datastore, partitioned into 'local' (ingested
// via upload) and 'remote' (ingested via interoperability feeds). Entries are
// deduplicated by key bytes across both partitions; the first origin wins.
class KeyStore {
public:
    KeyStore() = default;

    explicit KeyStore(CodeVerifier verifier, std::shared_ptr<Journal> journal = nullptr)
        : verifier_(std::move(verifier)), journal_(std::move(journal)) {}

    void attach_journal(std::shared_ptr<Journal> journal) { journal_ = std::move(journal); }
    void set_verifier(CodeVerifier verifier) { verifier_ = std::move(verifier); }

    std::size_t ingest_local(const DiagnosisKeyUpload& upload, Timestamp now) {
        upload.validate();
        if (verifier_ && !verifier_(upload.authorization_code))
            throw Error(Errc::unauthorized_upload, "authorization code rejected");
        std::unique_lock lock(mu_);
        std::size_t stored = 0;
        for (const auto& k : upload.keys) {
            if (!insert_locked(k, KeyOrigin::Local, upload.declared_regions, std::nullopt, now)) continue;
            ++stored;
            testing_regions_[k.tek.bytes] = upload.testing_region;
            if (journal_) journal_->append(local_line(entries_.back(), upload.testing_region));
        }
        return stored;
    }

    std::size_t ingest_remote(const std::vector<DiagnosisKey>& keys, const RegionId& source, Timestamp now) {
        std::unique_lock lock(mu_);
        std::size_t stored = 0;
        for (const auto& k : keys) {
            if (!insert_locked(k, KeyOrigin::Remote, {}, source, now)) continue;
            ++stored;
            if (journal_) journal_->append(remote_line(entries_.back()));
        }
        return stored;
    }

    // Local entries with seq > cursor, in storage order. Never returns Remote entries.
    std::vector<StoredKey> read_local_since(UploadCursor cursor) const {
        std::shared_lock lock(mu_);
        check_cursor_locked(cursor);
        std::vector<StoredKey> out;
        for (const auto& e : entries_)
            if (e.seq > cursor && e.origin == KeyOrigin::Local) out.push_back(e);
        return out;
    }

    // Subset of read_local_since whose declared set contains `region`.
    std::vector<StoredKey> read_local_for_region(const RegionId& region, UploadCursor cursor) const {
        std::shared_lock lock(mu_);
        check_cursor_locked(cursor);
        std::vector<StoredKey> out;
        for (const auto& e : entries_)
            if (e.seq > cursor && e.origin == KeyOrigin::Local && e.declared_regions.count(region))
                out.push_back(e);
        return out;
    }

    // Both partitions, for the public feed builder.
    std::vector<StoredKey> read_all_since(UploadCursor cursor) const {
        std::shared_lock lock(mu_);
        check_cursor_locked(cursor);
        std::vector<StoredKey> out;
        for (const auto& e : entries_)
            if (e.seq > cursor) out.push_back(e);
        return out;
    }

    std::size_t purge_expired(const RetentionPolicy& policy, Timestamp now) {
        std::unique_lock lock(mu_);
        Timestamp cutoff = policy.cutoff(now);
        std::size_t before = entries_.size();
        std::erase_if(entries_, [&](const StoredKey& e) {
            if (e.stored_at > cutoff) return false;
            by_bytes_.erase(e.key.tek.bytes);
            testing_regions_.erase(e.key.tek.bytes);
            return true;
        });
        std::size_t removed = before - entries_.size();
        if (removed > 0 && journal_) rewrite_journal_locked();
        return removed;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return entries_.size();
    }

    std::size_t count(KeyOrigin origin) const {
        std::shared_lock lock(mu_);
        return static_cast<std::size_t>(std::count_if(
            entries_.begin(), entries_.end(), [&](const StoredKey& e) { return e.origin == origin; }));
    }

    std::optional<StoredKey> find(const KeyBytes& bytes) const {
        std::shared_lock lock(mu_);
        auto it = by_bytes_.find(bytes);
        if (it == by_bytes_.end()) return std::nullopt;
        for (const auto& e : entries_)
            if (e.seq == it->second) return e;
        return std::nullopt;
    }

    UploadCursor max_cursor() const {
        std::shared_lock lock(mu_);
        return next_seq_ - 1;
    }

    // Rebuilds the store from journal LOCAL/REMOTE lines (other tags are ignored).
    std::size_t replay(const std::vector<std::string>& lines) {
        std::size_t applied = 0;
        for (const auto& line : lines) {
            auto f = Journal::split(line);
            if (f.empty()) continue;
            if (f[0] == "LOCAL" && f.size() == 6) {
                auto bytes = crypto::array_from_hex<16>(f[1]);
                if (!bytes) throw Error(Errc::io_error, "corrupt journal line: " + line);
                DiagnosisKey k{TemporaryExposureKey{*bytes, std::stoll(f[2])}};
                std::set<RegionId> regions;
                for (const auto& code : Journal::split(f[3], ','))
                    if (!code.empty()) regions.insert(validate_region_id(code));
                RegionId b = validate_region_id(f[4]);
                DiagnosisKeyUpload u{{k}, regions, b, std::stoll(f[5]), ""};
                std::unique_lock lock(mu_);
                applied += insert_locked(k, KeyOrigin::Local, u.declared_regions, std::nullopt, u.upload_time) ? 1 : 0;
                testing_regions_[k.tek.bytes] = b;
            } else if (f[0] == "REMOTE" && f.size() == 5) {
                auto bytes = crypto::array_from_hex<16>(f[1]);
                if (!bytes) throw Error(Errc::io_error, "corrupt journal line: " + line);
                DiagnosisKey k{TemporaryExposureKey{*bytes, std::stoll(f[2])}};
                std::unique_lock lock(mu_);
                applied += insert_locked(k, KeyOrigin::Remote, {}, validate_region_id(f[3]), std::stoll(f[4])) ? 1 : 0;
            }
        }
        return applied;
    }

private:
    bool insert_locked(const DiagnosisKey& k, KeyOrigin origin, const std::set<RegionId>& regions,
                       std::optional<RegionId> source, Timestamp now) {
        if (by_bytes_.count(k.tek.bytes)) return false;
        StoredKey e;
        e.key = k;
        e.origin = origin;
        if (origin == KeyOrigin::Local)
            e.declared_regions = regions;
        else
            e.source_region = source;
        e.stored_at = now;
        e.seq = next_seq_++;
        by_bytes_[k.tek.bytes] = e.seq;
        entries_.push_back(std::move(e));
        return true;
    }

    void check_cursor_locked(UploadCursor cursor) const {
        if (cursor >= next_seq_)
            throw Error(Errc::invalid_cursor, "cursor " + std::to_string(cursor) + " beyond store");
    }

    std::string local_line(const StoredKey& e, const RegionId& testing_region) const {
        std::string regions;
        for (const auto& r : e.declared_regions) {
            if (!regions.empty()) regions += ',';
            regions += r.code();
        }
        return "LOCAL|" + crypto::to_hex(e.key.tek.bytes) + "|" + std::to_string(e.key.tek.valid_day) +
               "|" + regions + "|" + testing_region.code() + "|" + std::to_string(e.stored_at);
    }

    std::string remote_line(const StoredKey& e) const {
        return "REMOTE|" + crypto::to_hex(e.key.tek.bytes) + "|" + std::to_string(e.key.tek.valid_day) +
               "|" + e.source_region->code() + "|" + std::to_string(e.stored_at);
    }

    void rewrite_journal_locked() {
        std::vector<std::string> keep;
        // Preserve non-keystore records (peer cursors) verbatim.
        for (const auto& line : Journal::read_lines(journal_->path())) {
            auto f = Journal::split(line);
            if (!f.empty() && f[0] != "LOCAL" && f[0] != "REMOTE") keep.push_back(line);
        }
        for (const auto& e : entries_) {
            if (e.origin == KeyOrigin::Local) {
                auto it = testing_regions_.find(e.key.tek.bytes);
                RegionId b = it != testing_regions_.end() ? it->second
                                                          : *e.declared_regions.begin();
                keep.push_back(local_line(e, b));
            } else {
                keep.push_back(remote_line(e));
            }
        }
        journal_->rewrite(keep);
    }

    mutable std::shared_mutex mu_;
    std::vector<StoredKey> entries_;
    std::map<KeyBytes, std::uint64_t> by_bytes_;
    std::map<KeyBytes, RegionId> testing_regions_;
    std::uint64_t next_seq_ = 1;
    CodeVerifier verifier_;
    std::shared_ptr<Journal> journal_;
};

}  // namespace enfed
