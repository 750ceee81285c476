#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "enfed/consumer.hpp"
#include "enfed/keystore.hpp"
#include "enfed/producer.hpp"
#include "enfed/registry.hpp"
#include "enfed/transport.hpp"

namespace enfed {

// Canonical upload body for POST /v1/keys. This is the only encoding that
// carries regional declarations; it exists between app and testing backend
// only and is never replicated.
inline std::vector<std::uint8_t> encode_upload(const DiagnosisKeyUpload& u) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'E', 'N', 'U', '1'});
    out.push_back(1);
    out.push_back(static_cast<std::uint8_t>(u.keys.size()));
    for (const auto& k : u.keys) {
        wire::check_day_encodable(k.tek.valid_day);
        out.insert(out.end(), k.tek.bytes.begin(), k.tek.bytes.end());
        wire::put_u32(out, static_cast<std::uint32_t>(k.tek.valid_day));
    }
    out.push_back(static_cast<std::uint8_t>(u.declared_regions.size()));
    for (const auto& r : u.declared_regions) out.insert(out.end(), r.code().begin(), r.code().end());
    out.insert(out.end(), u.testing_region.code().begin(), u.testing_region.code().end());
    wire::put_i64(out, u.upload_time);
    wire::put_str(out, u.authorization_code);
    return out;
}

inline DiagnosisKeyUpload decode_upload(const std::string& body) {
    try {
        wire::Reader r(reinterpret_cast<const std::uint8_t*>(body.data()), body.size());
        const std::uint8_t* magic = r.take(4);
        if (std::memcmp(magic, "ENU1", 4) != 0) throw Error(Errc::malformed_upload, "bad magic");
        if (r.u8() != 1) throw Error(Errc::malformed_upload, "unsupported version");
        DiagnosisKeyUpload u;
        std::uint8_t count = r.u8();
        for (std::uint8_t i = 0; i < count; ++i) {
            DiagnosisKey k;
            std::memcpy(k.tek.bytes.data(), r.take(16), 16);
            k.tek.valid_day = r.u32();
            u.keys.push_back(k);
        }
        std::uint8_t regions = r.u8();
        for (std::uint8_t i = 0; i < regions; ++i) {
            const std::uint8_t* p = r.take(2);
            u.declared_regions.insert(validate_region_id(std::string(reinterpret_cast<const char*>(p), 2)));
        }
        const std::uint8_t* b = r.take(2);
        u.testing_region = validate_region_id(std::string(reinterpret_cast<const char*>(b), 2));
        u.upload_time = r.i64();
        u.authorization_code = wire::get_str(r);
        if (r.remaining() != 0) throw Error(Errc::malformed_upload, "trailing bytes");
        return u;
    } catch (const Error& e) {
        if (e.code() == Errc::malformed_upload) throw;
        throw Error(Errc::malformed_upload, e.what());
    }
}

struct BackendNodeConfig {
    RegionId region;
    std::string base_url;  // address peers and apps use to reach this node
    std::optional<std::string> cluster;
    RetentionPolicy retention;
    std::size_t chunk_size = 1000;
    Timestamp poll_interval = 300;
    Timestamp build_interval = 900;
    Timestamp purge_interval = kSecondsPerDay;
    std::set<std::string> upload_codes;
    crypto::SigningKey feed_signing_key;
    ClientCredential credential;  // presented when pulling from peers
    std::vector<PeerConfig> peers;
    AccessControlList acl;
    std::optional<std::string> journal_path;
    std::function<Timestamp()> clock;  // required; all cadences read from it
};

struct PeerActivity {
    RegionId peer;
    PollResult poll;
    std::optional<ResyncResult> resync;
};

struct TickReport {
    std::map<FeedId, std::size_t> new_batches;
    std::size_t purged_keys = 0;
    std::size_t purged_batches = 0;
    std::vector<PeerActivity> polls;
};

// A runnable backend: keystore + producer + one consumer per peer behind the
// upload and feed endpoints, with ACL enforcement ahead of any datastore
// access. Every behavior is a composition of the module operations; the node
// adds routing and cadence only.
class BackendNode : public RequestHandler {
public:
    BackendNode(BackendNodeConfig config, Transport& transport)
        : config_(std::move(config)),
          store_(static_code_verifier(config_.upload_codes)),
          producer_(store_, config_.region, config_.feed_signing_key, config_.chunk_size) {
        if (!config_.clock) throw Error(Errc::bad_config, "node requires a clock");
        if (config_.journal_path) {
            auto lines = Journal::read_lines(*config_.journal_path);
            store_.replay(lines);
            restore_feed_numbering(lines);
            journal_ = std::make_shared<Journal>(*config_.journal_path);
            store_.attach_journal(journal_);
            for (const auto& peer : config_.peers)
                restored_states_[peer.region_id] = Consumer::state_from_journal(lines, peer.region_id);
        }
        for (const auto& peer : config_.peers) {
            consumers_.push_back(std::make_unique<Consumer>(config_.region, peer, store_, transport,
                                                            config_.poll_interval, journal_));
            auto it = restored_states_.find(peer.region_id);
            if (it != restored_states_.end()) consumers_.back()->restore_state(it->second);
        }
    }

    const BackendNodeConfig& config() const { return config_; }
    KeyStore& store() { return store_; }
    Producer& producer() { return producer_; }
    std::vector<std::unique_ptr<Consumer>>& consumers() { return consumers_; }

    // Peers named in the ACL get their per-region feeds ahead of the first
    // declaring upload, so early polls see END instead of 404.
    void materialize_acl_feeds() {
        for (const auto& [feed, identities] : config_.acl.entries())
            if (feed.kind == FeedKind::PerRegion) producer_.ensure_per_region_feed(*feed.region);
    }

    // Same, for consumers admitted by the default per-region rule alone.
    void allow_peer_region(const RegionId& r) { producer_.ensure_per_region_feed(r); }

    Response handle(const std::string& method, const std::string& path, const std::string& body,
                    const std::optional<ClientIdentity>& identity) override {
        auto segments = split_path(path);
        if (segments.size() >= 2 && segments[0] == "v1") {
            if (method == "POST" && segments.size() == 2 && segments[1] == "keys")
                return handle_upload(body);
            if (method == "GET") return handle_feed(segments, identity);
        }
        return {status::not_found, "no such endpoint", std::nullopt};
    }

    Response handle_upload(const std::string& body) {
        DiagnosisKeyUpload upload;
        try {
            upload = decode_upload(body);
            std::size_t stored = store_.ingest_local(upload, config_.clock());
            return {status::ok, "{\"stored\":" + std::to_string(stored) + "}", std::nullopt};
        } catch (const Error& e) {
            if (e.code() == Errc::unauthorized_upload) return {status::unauthorized, e.what(), std::nullopt};
            return {status::bad_request, e.what(), std::nullopt};
        }
    }

    Response handle_feed(const std::vector<std::string>& segments,
                         const std::optional<ClientIdentity>& identity) {
        FeedId feed;
        std::size_t chunk_pos;
        if (segments[1] == "keys") {
            feed = FeedId::public_feed();
            chunk_pos = 2;
        } else if (segments[1] == "a2a" && segments.size() >= 3 && segments[2] == "keys") {
            feed = FeedId::a2a();
            chunk_pos = 3;
        } else if (RegionId::well_formed(segments[1]) && segments.size() >= 3 && segments[2] == "keys") {
            feed = FeedId::per_region(validate_region_id(segments[1]));
            chunk_pos = 3;
        } else {
            return {status::not_found, "no such feed", std::nullopt};
        }
        std::optional<std::uint64_t> chunk;
        if (segments.size() == chunk_pos + 1) {
            chunk = parse_chunk(segments[chunk_pos]);
            if (!chunk) return {status::bad_request, "bad chunk number", std::nullopt};
        } else if (segments.size() != chunk_pos) {
            return {status::not_found, "no such endpoint", std::nullopt};
        }

        // Backend feeds require an authenticated, authorized peer before any
        // datastore access; the public feed is open.
        if (feed.kind != FeedKind::Public) {
            if (!identity) return {status::unauthorized, "authentication required", std::nullopt};
            if (!authorize_feed(config_.acl, feed, *identity))
                return {status::forbidden, "not allowed for this feed", std::nullopt};
        }
        try {
            ServeResult served = producer_.serve_chunk(feed, chunk);
            switch (served.status) {
                case ServeStatus::Served:
                    return {status::ok,
                            std::string(reinterpret_cast<const char*>(served.bytes.data()), served.bytes.size()),
                            served.next_hint};
                case ServeStatus::End: return {status::no_content, "", served.next_hint};
                case ServeStatus::Gone: return {status::gone, "", served.next_hint};
            }
        } catch (const Error& e) {
            if (e.code() == Errc::unknown_feed) return {status::not_found, e.what(), std::nullopt};
            return {status::server_error, e.what(), std::nullopt};
        }
        return {status::server_error, "unreachable", std::nullopt};
    }

    TickReport tick_produce(Timestamp now) {
        TickReport report;
        if (!next_purge_ || now >= *next_purge_) {
            report.purged_keys = store_.purge_expired(config_.retention, now);
            report.purged_batches = producer_.purge_feeds(config_.retention, now);
            next_purge_ = now + config_.purge_interval;
        }
        if (!next_build_ || now >= *next_build_) {
            report.new_batches = producer_.build_chunks(now).new_batches;
            next_build_ = now + config_.build_interval;
            if (journal_) {
                for (const auto& [feed, count] : report.new_batches)
                    journal_->append("FEED|" + std::string(feed_kind_name(feed.kind)) + "|" +
                                     (feed.region ? feed.region->code() : std::string("-")) + "|" +
                                     std::to_string(producer_.newest_batch_id(feed) + 1));
            }
        }
        return report;
    }

    TickReport tick_consume(Timestamp now) {
        TickReport report;
        for (auto& consumer : consumers_) {
            if (!consumer->due(now)) continue;
            PeerActivity activity{consumer->config().region_id, {}, std::nullopt};
            activity.poll = consumer->poll(now);
            if (activity.poll.status == PollStatus::Gone) {
                activity.resync = consumer->resync_after_gone();
                PollResult retry = consumer->poll(now);
                activity.poll.batches += retry.batches;
                activity.poll.keys_ingested += retry.keys_ingested;
                activity.poll.bytes_received += retry.bytes_received;
                activity.poll.status = retry.status;
                activity.poll.state = retry.state;
            }
            report.polls.push_back(std::move(activity));
        }
        return report;
    }

    TickReport tick(Timestamp now) {
        TickReport report = tick_produce(now);
        TickReport consume = tick_consume(now);
        report.polls = std::move(consume.polls);
        return report;
    }

private:
    void restore_feed_numbering(const std::vector<std::string>& lines) {
        for (const auto& line : lines) {
            auto f = Journal::split(line);
            if (f.size() != 4 || f[0] != "FEED") continue;
            FeedId feed;
            if (f[1] == "public") {
                feed = FeedId::public_feed();
            } else if (f[1] == "a2a") {
                feed = FeedId::a2a();
            } else if (f[1] == "per-region" && RegionId::well_formed(f[2])) {
                feed = FeedId::per_region(validate_region_id(f[2]));
            } else {
                continue;
            }
            producer_.restore_feed_numbering(feed, std::stoull(f[3]));
        }
    }

    static std::vector<std::string> split_path(const std::string& path) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : path) {
            if (c == '/') {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) out.push_back(cur);
        return out;
    }

    static std::optional<std::uint64_t> parse_chunk(const std::string& s) {
        if (s.empty() || s.size() > 19) return std::nullopt;
        std::uint64_t v = 0;
        for (char c : s) {
            if (c < '0' || c > '9') return std::nullopt;
            v = v * 10 + static_cast<std::uint64_t>(c - '0');
        }
        return v;
    }

    BackendNodeConfig config_;
    KeyStore store_;
    Producer producer_;
    std::shared_ptr<Journal> journal_;
    std::vector<std::unique_ptr<Consumer>> consumers_;
    std::map<RegionId, PeerState> restored_states_;
    std::optional<Timestamp> next_build_;
    std::optional<Timestamp> next_purge_;
};

}  // namespace enfed
