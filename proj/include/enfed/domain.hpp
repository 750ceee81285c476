#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "enfed/crypto.hpp"
#include "enfed/errors.hpp"

namespace enfed {

// Simulated time: seconds since a fixed epoch. One day = 86400 s, one
// rolling-identifier interval = 900 s; day k owns intervals [96k, 96k+95].
using Timestamp = std::int64_t;
using DayIndex = std::int64_t;
using IntervalIndex = std::int64_t;

constexpr Timestamp kSecondsPerInterval = 900;
constexpr int kIntervalsPerDay = 96;
constexpr Timestamp kSecondsPerDay = kSecondsPerInterval * kIntervalsPerDay;
constexpr DayIndex kBaseRegionWindowDays = 14;
constexpr int kMaxKeysPerUpload = 14;

constexpr DayIndex day_of(Timestamp t) {
    return t >= 0 ? t / kSecondsPerDay : (t - kSecondsPerDay + 1) / kSecondsPerDay;
}
constexpr IntervalIndex interval_of(Timestamp t) {
    return t >= 0 ? t / kSecondsPerInterval : (t - kSecondsPerInterval + 1) / kSecondsPerInterval;
}
constexpr Timestamp interval_start(IntervalIndex i) { return i * kSecondsPerInterval; }
constexpr Timestamp day_start(DayIndex d) { return d * kSecondsPerDay; }

// Two uppercase ASCII letters, e.g. "CH". Constructed only through
// validate_region_id so every instance is well-formed.
class RegionId {
public:
    RegionId() = default;

    static bool well_formed(std::string_view raw) {
        return raw.size() == 2 && raw[0] >= 'A' && raw[0] <= 'Z' && raw[1] >= 'A' && raw[1] <= 'Z';
    }

    const std::string& code() const { return code_; }

    friend bool operator==(const RegionId&, const RegionId&) = default;
    friend auto operator<=>(const RegionId&, const RegionId&) = default;

private:
    friend RegionId validate_region_id(std::string_view raw);
    explicit RegionId(std::string_view raw) : code_(raw) {}
    std::string code_;
};

inline RegionId validate_region_id(std::string_view raw) {
    if (!RegionId::well_formed(raw))
        throw Error(Errc::malformed_region_id, "'" + std::string(raw) + "' is not a two-letter uppercase region id");
    return RegionId(raw);
}

struct VendorId {
    std::string name;

    friend bool operator==(const VendorId&, const VendorId&) = default;
};

struct ClusterId {
    std::string name;
    std::vector<RegionId> members;

    bool contains(const RegionId& r) const {
        return std::find(members.begin(), members.end(), r) != members.end();
    }

    friend bool operator==(const ClusterId&, const ClusterId&) = default;
};

using KeyBytes = std::array<std::uint8_t, 16>;

// One per device per day; rolling identifiers are derived from it.
struct TemporaryExposureKey {
    KeyBytes bytes{};
    DayIndex valid_day = 0;

    friend bool operator==(const TemporaryExposureKey&, const TemporaryExposureKey&) = default;
    friend auto operator<=>(const TemporaryExposureKey&, const TemporaryExposureKey&) = default;
};

struct RollingProximityId {
    KeyBytes bytes{};
    IntervalIndex interval = 0;

    friend bool operator==(const RollingProximityId&, const RollingProximityId&) = default;
    friend auto operator<=>(const RollingProximityId&, const RollingProximityId&) = default;
};

struct ContactEvent {
    RollingProximityId observed_id;
    std::array<std::uint8_t, 4> metadata{};  // first byte: transmit power level
    Timestamp observed_at = 0;

    friend bool operator==(const ContactEvent&, const ContactEvent&) = default;
};

// A temporary exposure key uploaded after a positive test.
struct DiagnosisKey {
    TemporaryExposureKey tek;

    friend bool operator==(const DiagnosisKey&, const DiagnosisKey&) = default;
    friend auto operator<=>(const DiagnosisKey&, const DiagnosisKey&) = default;
};

enum class RegionKind { None, Base, Roaming };

struct RegionClassification {
    RegionKind kind = RegionKind::None;
    std::optional<Timestamp> expires_at;  // Roaming only: last exit + 14 days

    friend bool operator==(const RegionClassification&, const RegionClassification&) = default;
};

struct Visit {
    RegionId region;
    Timestamp enter = 0;
    Timestamp exit = 0;
};

// Rolling id = first 16 bytes of keyed BLAKE2b over a fixed label plus the
// absolute interval index (uint64 LE), keyed by the TEK bytes. Not the GAEN
// AES construction; deterministic and collision-resistant is all the
// replication layer needs.
inline RollingProximityId derive_rolling_id(const TemporaryExposureKey& tek, IntervalIndex interval) {
    static constexpr char kLabel[] = "ENFED-RPID-v1";
    std::array<std::uint8_t, sizeof(kLabel) - 1 + 8> msg{};
    std::copy_n(kLabel, sizeof(kLabel) - 1, msg.begin());
    auto u = static_cast<std::uint64_t>(interval);
    for (int i = 0; i < 8; ++i) msg[sizeof(kLabel) - 1 + i] = static_cast<std::uint8_t>(u >> (8 * i));
    return RollingProximityId{crypto::keyed_hash16(tek.bytes.data(), msg.data(), msg.size()), interval};
}

// All 96 identifiers broadcast during the key's valid day, in interval order.
inline std::vector<RollingProximityId> derive_rolling_ids(const TemporaryExposureKey& tek) {
    std::vector<RollingProximityId> ids;
    ids.reserve(kIntervalsPerDay);
    IntervalIndex first = tek.valid_day * kIntervalsPerDay;
    for (int i = 0; i < kIntervalsPerDay; ++i) ids.push_back(derive_rolling_id(tek, first + i));
    return ids;
}

// Base/roaming classification over a visit history.
//
// The history horizon starts at the earliest enter across all entries. A
// region is Base when every 14-day window inside [horizon start, now]
// contains at least one visit to it (equivalently: no visit-free gap longer
// than 14 days, counting the gap before the first visit and after the last
// exit). A horizon shorter than 14 days makes any visited region Base.
// Otherwise the region is Roaming while now < last exit + 14 days.
inline RegionClassification classify_region(const std::vector<Visit>& visit_history,
                                            const RegionId& region, Timestamp now) {
    constexpr Timestamp window = kBaseRegionWindowDays * kSecondsPerDay;

    std::map<RegionId, std::vector<const Visit*>> per_region;
    Timestamp horizon_start = now;
    for (const auto& v : visit_history) {
        if (v.exit < v.enter) throw Error(Errc::invalid_history, "visit exit precedes enter");
        horizon_start = std::min(horizon_start, v.enter);
        per_region[v.region].push_back(&v);
    }
    for (auto& [r, visits] : per_region) {
        std::sort(visits.begin(), visits.end(),
                  [](const Visit* a, const Visit* b) { return a->enter < b->enter; });
        for (std::size_t i = 1; i < visits.size(); ++i)
            if (visits[i]->enter <= visits[i - 1]->exit)
                throw Error(Errc::invalid_history, "overlapping visits to " + r.code());
    }

    auto it = per_region.find(region);
    if (it == per_region.end()) return {RegionKind::None, std::nullopt};
    const auto& visits = it->second;

    Timestamp last_exit = visits.back()->exit;
    bool base = true;
    if (now - horizon_start >= window) {
        Timestamp prev = horizon_start;
        for (const Visit* v : visits) {
            if (v->enter - prev > window) base = false;
            prev = std::max(prev, v->exit);
        }
        if (now - prev > window) base = false;
    }
    if (base) return {RegionKind::Base, std::nullopt};

    Timestamp expires_at = last_exit + window;
    if (now < expires_at) return {RegionKind::Roaming, expires_at};
    return {RegionKind::None, std::nullopt};
}

// Pure identifier matching: a contact matches a diagnosis key when the key
// derives the observed identifier at the contact's own interval. Risk
// scoring is out of scope.
//
// A key can only produce identifiers inside its valid day, so each contact
// is checked against the keys of that day alone, deriving exactly the
// contact's interval.
inline std::vector<std::pair<ContactEvent, DiagnosisKey>> match_exposures(
    const std::vector<ContactEvent>& contacts, const std::vector<DiagnosisKey>& keys) {
    std::vector<std::pair<ContactEvent, DiagnosisKey>> matches;
    if (contacts.empty() || keys.empty()) return matches;

    std::map<DayIndex, std::vector<const DiagnosisKey*>> by_day;
    for (const auto& k : keys) by_day[k.tek.valid_day].push_back(&k);

    for (const auto& c : contacts) {
        DayIndex day = c.observed_id.interval >= 0
                           ? c.observed_id.interval / kIntervalsPerDay
                           : (c.observed_id.interval - kIntervalsPerDay + 1) / kIntervalsPerDay;
        auto it = by_day.find(day);
        if (it == by_day.end()) continue;
        for (const DiagnosisKey* k : it->second)
            if (derive_rolling_id(k->tek, c.observed_id.interval).bytes == c.observed_id.bytes)
                matches.emplace_back(c, *k);
    }
    return matches;
}

}  // namespace enfed
