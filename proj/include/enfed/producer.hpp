#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "enfed/batch.hpp"
#include "enfed/keystore.hpp"

namespace enfed {

// A concrete feed: the public feed, the all-to-all feed, or one per-region
// feed. The region is producer-side bookkeeping only; it never reaches the
// wire (see Batch).
struct FeedId {
    FeedKind kind = FeedKind::Public;
    std::optional<RegionId> region;  // PerRegion only

    static FeedId public_feed() { return {FeedKind::Public, std::nullopt}; }
    static FeedId a2a() { return {FeedKind::A2A, std::nullopt}; }
    static FeedId per_region(RegionId r) { return {FeedKind::PerRegion, std::move(r)}; }

    std::string label() const {
        if (kind == FeedKind::PerRegion) return "per-region/" + region->code();
        return feed_kind_name(kind);
    }

    friend bool operator==(const FeedId&, const FeedId&) = default;
    friend auto operator<=>(const FeedId&, const FeedId&) = default;
};

enum class ServeStatus { Served, End, Gone };

struct ServeResult {
    ServeStatus status = ServeStatus::End;
    std::vector<std::uint8_t> bytes;  // Served only
    // End: the id to request once new data exists. Gone: oldest retained id.
    std::uint64_t next_hint = 1;
};

struct BuildResult {
    std::map<FeedId, std::size_t> new_batches;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [feed, count] : new_batches) n += count;
        return n;
    }
};

// The data-prep engine: drains new keys out of the keystore into signed,
// chunked batches per feed and serves them by chunk number.
//
// Feed contents:
//   public     — local and remote keys (everything this backend knows)
//   a2a        — local keys only; remote keys are never re-exported
//   per-region — local keys whose upload declared that region, only
class Producer {
public:
    Producer(KeyStore& store, RegionId own_region, crypto::SigningKey signing_key,
             std::size_t max_chunk_size = 1000)
        : store_(store), own_region_(std::move(own_region)), signing_key_(std::move(signing_key)),
          max_chunk_size_(max_chunk_size) {
        feeds_[FeedId::public_feed()];
        feeds_[FeedId::a2a()];
    }

    const crypto::PublicKey& feed_public_key() const { return signing_key_.pub; }
    const RegionId& own_region() const { return own_region_; }

    // Pre-materializes a per-region feed for a known peer so its consumer
    // sees END rather than an unknown feed before the first declaring upload.
    void ensure_per_region_feed(const RegionId& r) {
        std::unique_lock lock(mu_);
        ensure_per_region_feed_locked(r);
    }

    bool has_feed(const FeedId& id) const {
        std::shared_lock lock(mu_);
        return feeds_.count(id) > 0;
    }

    BuildResult build_chunks(Timestamp now) {
        std::unique_lock lock(mu_);
        // Ingest may run concurrently; everything past the snapshot belongs
        // to the next build.
        const UploadCursor snapshot = store_.max_cursor();
        auto up_to_snapshot = [&](std::vector<StoredKey> v) {
            std::erase_if(v, [&](const StoredKey& e) { return e.seq > snapshot; });
            return v;
        };

        // Materialize per-region feeds for regions newly seen in uploads.
        for (const auto& e : up_to_snapshot(store_.read_local_since(discovery_cursor_)))
            for (const auto& r : e.declared_regions) ensure_per_region_feed_locked(r);
        discovery_cursor_ = snapshot;

        BuildResult result;
        for (auto& [id, feed] : feeds_) {
            std::vector<StoredKey> fresh;
            switch (id.kind) {
                case FeedKind::Public: fresh = up_to_snapshot(store_.read_all_since(feed.cursor)); break;
                case FeedKind::A2A: fresh = up_to_snapshot(store_.read_local_since(feed.cursor)); break;
                case FeedKind::PerRegion:
                    fresh = up_to_snapshot(store_.read_local_for_region(*id.region, feed.cursor));
                    break;
            }
            // The cursor advances past everything scanned, not only past
            // matches, or filtered feeds would rescan forever.
            feed.cursor = snapshot;
            std::size_t built = 0;
            for (std::size_t i = 0; i < fresh.size(); i += max_chunk_size_) {
                Batch b;
                b.feed_kind = id.kind;
                b.batch_id = feed.next_batch_id++;
                b.produced_at = now;
                Timestamp newest_stored = 0;
                for (std::size_t j = i; j < std::min(fresh.size(), i + max_chunk_size_); ++j) {
                    b.keys.push_back(fresh[j].key);
                    newest_stored = std::max(newest_stored, fresh[j].stored_at);
                }
                b = sign_batch(b, signing_key_);
                feed.batches.push_back({b.batch_id, newest_stored, encode_batch(b)});
                ++built;
            }
            if (built > 0) result.new_batches[id] = built;
        }
        return result;
    }

    ServeResult serve_chunk(const FeedId& id, std::optional<std::uint64_t> chunk_num) const {
        std::shared_lock lock(mu_);
        auto it = feeds_.find(id);
        if (it == feeds_.end())
            throw Error(Errc::unknown_feed, "no such feed: " + id.label());
        const FeedState& feed = it->second;

        if (feed.batches.empty()) {
            if (chunk_num && *chunk_num < feed.next_batch_id)
                return {ServeStatus::Gone, {}, feed.next_batch_id};
            return {ServeStatus::End, {}, feed.next_batch_id};
        }
        std::uint64_t oldest = feed.batches.front().batch_id;
        std::uint64_t newest = feed.batches.back().batch_id;
        std::uint64_t requested = chunk_num.value_or(oldest);
        if (requested < oldest) return {ServeStatus::Gone, {}, oldest};
        if (requested > newest) return {ServeStatus::End, {}, feed.next_batch_id};
        return {ServeStatus::Served, feed.batches[requested - oldest].bytes, requested + 1};
    }

    // Drops batches whose newest key fell out of the retention window, so the
    // feed replicas honor the same deletion deadline as the store.
    std::size_t purge_feeds(const RetentionPolicy& policy, Timestamp now) {
        std::unique_lock lock(mu_);
        Timestamp cutoff = policy.cutoff(now);
        std::size_t dropped = 0;
        for (auto& [id, feed] : feeds_) {
            while (!feed.batches.empty() && feed.batches.front().newest_stored_at <= cutoff) {
                feed.batches.pop_front();
                ++dropped;
            }
        }
        return dropped;
    }

    std::vector<FeedId> feed_ids() const {
        std::shared_lock lock(mu_);
        std::vector<FeedId> ids;
        for (const auto& [id, feed] : feeds_) ids.push_back(id);
        return ids;
    }

    std::uint64_t newest_batch_id(const FeedId& id) const {
        std::shared_lock lock(mu_);
        auto it = feeds_.find(id);
        if (it == feeds_.end() || it->second.next_batch_id == 1) return 0;
        return it->second.next_batch_id - 1;
    }

    // Restart support: batches are derived data and not persisted, but batch
    // numbering must survive so peers can detect the gap and resync. The feed
    // resumes numbering at the restored id; the next build repacks the whole
    // retained store into fresh batches (consumers dedup on ingest).
    void restore_feed_numbering(const FeedId& id, std::uint64_t next_batch_id) {
        std::unique_lock lock(mu_);
        auto& feed = feeds_[id];
        feed.next_batch_id = std::max(feed.next_batch_id, next_batch_id);
    }

private:
    void ensure_per_region_feed_locked(const RegionId& r) {
        if (r != own_region_) feeds_[FeedId::per_region(r)];
    }

    struct StoredBatch {
        std::uint64_t batch_id;
        Timestamp newest_stored_at;
        std::vector<std::uint8_t> bytes;
    };

    struct FeedState {
        UploadCursor cursor = 0;
        std::uint64_t next_batch_id = 1;
        std::deque<StoredBatch> batches;  // contiguous ids, oldest first
    };

    mutable std::shared_mutex mu_;
    KeyStore& store_;
    RegionId own_region_;
    crypto::SigningKey signing_key_;
    std::size_t max_chunk_size_;
    UploadCursor discovery_cursor_ = 0;
    std::map<FeedId, FeedState> feeds_;
};

}  // namespace enfed
