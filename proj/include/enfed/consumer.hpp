#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "enfed/batch.hpp"
#include "enfed/journal.hpp"
#include "enfed/keystore.hpp"
#include "enfed/transport.hpp"

namespace enfed {

enum class ReplicationType { AllToAll, Partial };

inline const char* replication_name(ReplicationType t) {
    return t == ReplicationType::AllToAll ? "a2a" : "partial";
}

// Native chunk encoding tag; the only format this build decodes. The field
// exists so a consumer can dispatch decoders for other vendors' feeds.
inline constexpr const char* kNativeFormat = "enfb/1";

// Per-producer configuration of a consumer.
struct PeerConfig {
    RegionId region_id;                 // the remote (producer) region
    std::string remote_region_url;
    ReplicationType replication_type = ReplicationType::Partial;
    std::string format = kNativeFormat;
    std::optional<std::set<crypto::PublicKey>> verification_keys;
    ClientCredential client_certificate;  // presented to the producer
};

// Mutable poll state, persisted after every successful batch.
struct PeerState {
    std::uint64_t last_batch_id = 0;
    std::optional<Timestamp> recommended_next_poll_time;
};

enum class PollStatus { UpToDate, Paused, BadSignature, FormatError, Gone, Unreachable };

inline const char* poll_status_name(PollStatus s) {
    switch (s) {
        case PollStatus::UpToDate: return "up-to-date";
        case PollStatus::Paused: return "paused";
        case PollStatus::BadSignature: return "bad-signature";
        case PollStatus::FormatError: return "format-error";
        case PollStatus::Gone: return "gone";
        case PollStatus::Unreachable: return "unreachable";
    }
    return "?";
}

struct PollResult {
    PollStatus status = PollStatus::UpToDate;
    std::size_t batches = 0;
    std::size_t keys_ingested = 0;
    std::size_t bytes_received = 0;
    PeerState state;
};

struct ResyncResult {
    PeerState state;
    std::uint64_t skipped_batches = 0;  // lost to producer retention
};

// The per-peer poller: walks a producer feed by chunk number, verifies and
// decodes each batch, and hands keys to the keystore's remote partition.
class Consumer {
public:
    Consumer(RegionId own_region, PeerConfig config, KeyStore& store, Transport& transport,
             Timestamp poll_interval = 300, std::shared_ptr<Journal> journal = nullptr)
        : own_region_(std::move(own_region)), config_(std::move(config)), store_(store),
          transport_(transport), poll_interval_(poll_interval), journal_(std::move(journal)) {}

    const PeerConfig& config() const { return config_; }
    const PeerState& state() const { return state_; }
    void restore_state(PeerState state) { state_ = std::move(state); }

    bool due(Timestamp now) const {
        return !state_.recommended_next_poll_time || now >= *state_.recommended_next_poll_time;
    }

    // AllToAll pulls the producer's a2a feed; Partial pulls the per-region
    // feed dedicated to this consumer's own region.
    std::string select_feed_path() const {
        if (config_.replication_type == ReplicationType::AllToAll) return "/v1/a2a/keys";
        return "/v1/" + own_region_.code() + "/keys";
    }

    // Requests chunk last_batch_id+1 repeatedly until END (or max_batches).
    // Partial progress survives any failure: the cursor stops just before the
    // offending batch and everything ingested so far stays ingested.
    PollResult poll(Timestamp now, std::size_t max_batches = std::numeric_limits<std::size_t>::max()) {
        PollResult result;
        while (result.batches < max_batches) {
            std::uint64_t next = state_.last_batch_id + 1;
            Response resp =
                transport_.get(config_.remote_region_url, select_feed_path() + "/" + std::to_string(next),
                               &config_.client_certificate);
            if (resp.status == status::no_content) {
                state_.recommended_next_poll_time = now + poll_interval_;
                persist();
                break;
            }
            if (resp.status == status::gone) {
                result.status = PollStatus::Gone;
                break;
            }
            if (resp.status != status::ok) {
                result.status = PollStatus::Unreachable;
                break;
            }
            result.bytes_received += resp.body.size();

            if (config_.format != kNativeFormat) {
                result.status = PollStatus::FormatError;
                break;
            }
            Batch batch;
            try {
                batch = decode_batch(resp.body);
            } catch (const Error&) {
                result.status = PollStatus::FormatError;
                break;
            }
            if (batch.batch_id != next) {
                result.status = PollStatus::FormatError;
                break;
            }
            if (config_.verification_keys && !verified_by_any(batch)) {
                result.status = PollStatus::BadSignature;
                break;
            }
            result.keys_ingested += store_.ingest_remote(batch.keys, config_.region_id, now);
            result.batches += 1;
            state_.last_batch_id = next;
            persist();
        }
        if (result.status == PollStatus::UpToDate && result.batches == max_batches &&
            max_batches != std::numeric_limits<std::size_t>::max())
            result.status = PollStatus::Paused;
        result.state = state_;
        return result;
    }

    // After GONE: discover the oldest retained chunk with the no-chunk-number
    // request and resume just before it. Never rewinds the cursor; batches
    // that fell out of retention are counted as skipped.
    ResyncResult resync_after_gone() {
        Response resp =
            transport_.get(config_.remote_region_url, select_feed_path(), &config_.client_certificate);
        std::uint64_t oldest = 0;
        if (resp.status == status::ok) {
            Batch batch;
            try {
                batch = decode_batch(resp.body);
            } catch (const Error& e) {
                throw Error(Errc::format_error, std::string("resync probe: ") + e.what());
            }
            oldest = batch.batch_id;
        } else if (resp.status == status::no_content) {
            oldest = resp.next_hint.value_or(state_.last_batch_id + 1);
        } else {
            throw Error(Errc::peer_unreachable,
                        "resync probe failed with status " + std::to_string(resp.status));
        }
        ResyncResult result;
        if (oldest >= 1 && oldest - 1 > state_.last_batch_id) {
            result.skipped_batches = oldest - 1 - state_.last_batch_id;
            state_.last_batch_id = oldest - 1;
            persist();
        }
        result.state = state_;
        return result;
    }

    static PeerState state_from_journal(const std::vector<std::string>& lines, const RegionId& peer) {
        PeerState state;
        for (const auto& line : lines) {
            auto f = Journal::split(line);
            if (f.size() == 4 && f[0] == "PEER" && f[1] == peer.code()) {
                state.last_batch_id = std::stoull(f[2]);
                if (f[3] == "-")
                    state.recommended_next_poll_time.reset();
                else
                    state.recommended_next_poll_time = std::stoll(f[3]);
            }
        }
        return state;
    }

private:
    bool verified_by_any(const Batch& batch) const {
        for (const auto& pub : *config_.verification_keys)
            if (verify_batch(batch, pub)) return true;
        return false;
    }

    void persist() {
        if (!journal_) return;
        journal_->append("PEER|" + config_.region_id.code() + "|" + std::to_string(state_.last_batch_id) +
                         "|" +
                         (state_.recommended_next_poll_time
                              ? std::to_string(*state_.recommended_next_poll_time)
                              : std::string("-")));
    }

    RegionId own_region_;
    PeerConfig config_;
    KeyStore& store_;
    Transport& transport_;
    Timestamp poll_interval_;
    std::shared_ptr<Journal> journal_;
    PeerState state_;
};

}  // namespace enfed
