#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "enfed/scenario.hpp"
#include "enfed/service.hpp"

namespace enfed::sim {

// Per-user-per-day bandwidth of shipping every diagnosis key to every user,
// and what that means for a large backend population.
struct BandwidthEstimate {
    std::int64_t per_user_bytes_per_day = 0;
    std::int64_t aggregate_bytes_per_day = 0;
    double sustained_bits_per_second = 0.0;
};

inline BandwidthEstimate estimate_bandwidth(std::int64_t keys_per_upload, std::int64_t key_bytes,
                                            std::int64_t daily_infections, std::int64_t population) {
    if (keys_per_upload <= 0 || key_bytes <= 0 || daily_infections <= 0 || population <= 0)
        throw Error(Errc::bad_config, "bandwidth parameters must be positive");
    BandwidthEstimate e;
    e.per_user_bytes_per_day = keys_per_upload * key_bytes * daily_infections;
    e.aggregate_bytes_per_day = e.per_user_bytes_per_day * population;
    e.sustained_bits_per_second = static_cast<double>(e.aggregate_bytes_per_day) * 8.0 / 86400.0;
    return e;
}

// Device key material for scripted users, derived from the scenario seed so
// identical scenarios produce identical key bytes.
inline TemporaryExposureKey scripted_tek(std::uint64_t seed, const std::string& user, DayIndex day) {
    std::vector<std::uint8_t> msg;
    const char* label = "ENFED-TEK-v1";
    msg.insert(msg.end(), label, label + 12);
    for (int i = 0; i < 8; ++i) msg.push_back(static_cast<std::uint8_t>(seed >> (8 * i)));
    msg.insert(msg.end(), user.begin(), user.end());
    auto d = static_cast<std::uint64_t>(day);
    for (int i = 0; i < 8; ++i) msg.push_back(static_cast<std::uint8_t>(d >> (8 * i)));
    return TemporaryExposureKey{crypto::hash16(msg.data(), msg.size()), day};
}

struct VerdictEntry {
    std::string requirement;  // F1 | F2 | F3 | LL (local-local baseline)
    std::string observer;
    std::string uploader;
    std::string contact_region;
    IntervalIndex contact_interval = 0;
    DayIndex upload_day = 0;
    bool expected = false;
    bool observed = false;
    std::string note;  // why no notification is expected, when applicable
};

struct LinkTraffic {
    std::uint64_t bytes = 0;
    std::uint64_t batches = 0;
    std::uint64_t keys = 0;
    std::int64_t first_keys_step = -1;
};

struct UserStats {
    std::uint64_t downloaded_bytes = 0;
    std::uint64_t downloaded_keys = 0;
    std::uint64_t matches = 0;
    std::vector<std::uint64_t> daily_download_bytes;
};

struct SimulationReport {
    std::string scenario_name;
    std::uint64_t seed = 0;
    DayIndex horizon_days = 0;
    std::vector<VerdictEntry> verdicts;
    std::vector<std::string> violations;
    std::map<std::string, std::pair<std::size_t, std::size_t>> backend_keys;  // region -> (local, remote)
    std::map<std::string, LinkTraffic> links;                                 // "AA<-BB"
    std::map<std::string, UserStats> users;
    std::vector<std::string> match_set;  // "user|tek hex|interval", sorted
    std::size_t uploaded_key_count = 0;  // distinct keys across all uploads
    std::vector<std::string> events;

    bool all_expectations_met() const { return violations.empty(); }

    std::size_t count(const std::string& requirement, bool expected, bool observed) const {
        std::size_t n = 0;
        for (const auto& v : verdicts)
            if (v.requirement == requirement && v.expected == expected && v.observed == observed) ++n;
        return n;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["scenario"] = scenario_name;
        j["seed"] = seed;
        j["horizon_days"] = horizon_days;
        j["uploaded_key_count"] = uploaded_key_count;
        j["verdicts"] = nlohmann::json::array();
        for (const auto& v : verdicts)
            j["verdicts"].push_back({{"requirement", v.requirement},
                                     {"observer", v.observer},
                                     {"uploader", v.uploader},
                                     {"region", v.contact_region},
                                     {"interval", v.contact_interval},
                                     {"upload_day", v.upload_day},
                                     {"expected", v.expected},
                                     {"observed", v.observed},
                                     {"note", v.note}});
        j["violations"] = violations;
        for (const auto& [region, counts] : backend_keys)
            j["backends"][region] = {{"local", counts.first}, {"remote", counts.second}};
        if (backend_keys.empty()) j["backends"] = nlohmann::json::object();
        for (const auto& [label, t] : links)
            j["links"][label] = {{"bytes", t.bytes},
                                 {"batches", t.batches},
                                 {"keys", t.keys},
                                 {"first_keys_step", t.first_keys_step}};
        if (links.empty()) j["links"] = nlohmann::json::object();
        for (const auto& [name, s] : users)
            j["users"][name] = {{"downloaded_bytes", s.downloaded_bytes},
                                {"downloaded_keys", s.downloaded_keys},
                                {"matches", s.matches},
                                {"daily_download_bytes", s.daily_download_bytes}};
        if (users.empty()) j["users"] = nlohmann::json::object();
        j["match_set"] = match_set;
        j["events"] = events;
        return j;
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "scenario " << scenario_name << " (seed " << seed << ", " << horizon_days << " days)\n";
        std::map<std::string, std::pair<std::size_t, std::size_t>> by_req;  // met / total
        for (const auto& v : verdicts) {
            auto& [met, total] = by_req[v.requirement];
            ++total;
            if (v.expected == v.observed) ++met;
        }
        for (const auto& [req, counts] : by_req)
            out << "  " << req << ": " << counts.first << "/" << counts.second
                << " notifications as expected\n";
        for (const auto& [region, counts] : backend_keys)
            out << "  backend " << region << ": " << counts.first << " local, " << counts.second
                << " remote keys\n";
        for (const auto& [label, t] : links)
            out << "  link " << label << ": " << t.keys << " keys, " << t.batches << " batches, " << t.bytes
                << " bytes\n";
        if (violations.empty()) {
            out << "  verdict: all " << verdicts.size() << " expectations met\n";
        } else {
            out << "  verdict: " << violations.size() << " VIOLATION(S)\n";
            for (const auto& v : violations) out << "    " << v << "\n";
        }
        return out.str();
    }
};

// Deterministic multi-region scenario engine. Backends are real BackendNode
// instances on the in-process transport; user agents exchange derived
// rolling identifiers, upload diagnosis keys through the service endpoints,
// and pull public feeds by chunk cursor exactly like a backend consumer.
class Engine {
public:
    explicit Engine(const Scenario& raw) : sc_(raw.expanded()) {
        sc_.validate();
        if (sc_.poll_interval > kSecondsPerInterval)
            throw Error(Errc::invalid_scenario, "poll interval above one step breaks the delivery model");
        build_federation();
        init_users();
    }

    SimulationReport run() {
        const std::int64_t last_step = sc_.horizon_days * kIntervalsPerDay - 1;
        for (std::int64_t step = 0; step <= last_step; ++step) {
            now_ = step * kSecondsPerInterval;
            DayIndex day = step / kIntervalsPerDay;
            int slot = static_cast<int>(step % kIntervalsPerDay);
            if (slot == 0)
                for (auto& [name, user] : users_) user.subs_by_day.push_back(subscriptions_at(user, now_));

            run_contacts(step, day, slot);
            run_infections(step, day, slot);
            for (auto& [code, node] : nodes_) run_produce(code, *node, step);
            for (auto& [code, node] : nodes_) run_consume(code, *node, step);
            for (auto& [name, user] : users_) run_downloads(user, day);
        }
        return finalize(last_step);
    }

    const Scenario& scenario() const { return sc_; }

private:
    struct ContactRef {
        std::string other;
        RegionId region;
        IntervalIndex interval = 0;
        DayIndex day = 0;
    };

    struct UserState {
        const UserSpec* spec = nullptr;
        std::vector<ContactEvent> contact_log;
        std::vector<ContactRef> contact_refs;
        std::map<std::string, std::uint64_t> feed_cursor;
        std::set<KeyBytes> downloaded_set;
        std::vector<DiagnosisKey> downloaded;
        UserStats stats;
        std::vector<std::vector<RegionId>> subs_by_day;
    };

    struct UploadRecord {
        std::string user;
        RegionId backend;
        std::int64_t step = 0;
        DayIndex day = 0;
        std::set<RegionId> declared;
        std::vector<DiagnosisKey> keys;
        bool f4_miss = false;
    };

    void build_federation() {
        root_key_ = crypto::SigningKey::from_label("sim-root/" + sc_.name);
        root_cert_ = make_root_cert(root_key_, "SIM-ROOT");
        registry_ = std::make_unique<Registry>(root_key_.pub);
        hub_ = std::make_unique<InProcessTransport>(root_key_.pub);

        std::map<std::string, crypto::SigningKey> cluster_keys;
        std::map<std::string, CertRecord> cluster_certs;
        for (const auto& spec : sc_.regions) {
            if (spec.cluster.empty() || cluster_certs.count(spec.cluster)) continue;
            auto key = crypto::SigningKey::from_label("sim-cluster/" + spec.cluster);
            cluster_certs.emplace(spec.cluster,
                                  issue_cert(CertKind::Cluster, spec.cluster, key.pub, "SIM-ROOT", root_key_));
            cluster_keys.emplace(spec.cluster, key);
        }

        for (const auto& spec : sc_.regions) {
            const std::string code = spec.id.code();
            auto region_key = crypto::SigningKey::from_label("sim-region/" + code);
            auto feed_key = crypto::SigningKey::from_label("sim-feed/" + code);
            CertChain chain;
            chain.root = root_cert_;
            if (!spec.cluster.empty()) {
                chain.cluster = cluster_certs.at(spec.cluster);
                chain.region =
                    issue_cert(CertKind::Region, code, region_key.pub, spec.cluster, cluster_keys.at(spec.cluster));
            } else {
                chain.region = issue_cert(CertKind::Region, code, region_key.pub, "SIM-ROOT", root_key_);
            }
            credentials_.emplace(code, ClientCredential{chain, region_key});
            feed_keys_.emplace(code, feed_key);
            cluster_of_[code] = spec.cluster;

            BackendRecord record;
            record.region = spec.id;
            record.cluster = spec.cluster;
            record.vendor = {spec.vendor.empty() ? "sim" : spec.vendor};
            record.base_url = "inproc://" + code;
            record.feed_verification_key = feed_key.pub;
            record.offers_a2a = true;
            record.offers_partial = true;
            auto result = registry_->register_backend(sign_record(record, region_key), chain);
            if (!result) throw Error(Errc::bad_config, "registration failed for " + code + ": " + result.reason);
        }

        for (const auto& spec : sc_.regions) {
            const std::string code = spec.id.code();
            BackendNodeConfig cfg;
            cfg.region = spec.id;
            cfg.base_url = "inproc://" + code;
            if (!spec.cluster.empty()) cfg.cluster = spec.cluster;
            cfg.retention = RetentionPolicy{sc_.retention_days};
            cfg.chunk_size = sc_.chunk_size;
            cfg.poll_interval = sc_.poll_interval;
            cfg.build_interval = sc_.build_interval;
            cfg.upload_codes = {sc_.upload_code};
            cfg.feed_signing_key = feed_keys_.at(code);
            cfg.credential = credentials_.at(code);
            cfg.clock = [this] { return now_; };

            for (const auto& link : sc_.links) {
                if (link.consumer != spec.id) continue;
                auto record = registry_->lookup(link.producer);
                PeerConfig peer;
                peer.region_id = record.region;
                peer.remote_region_url = record.base_url;
                peer.replication_type = link.type;
                peer.format = kNativeFormat;
                peer.verification_keys = std::set<crypto::PublicKey>{record.feed_verification_key};
                peer.client_certificate = credentials_.at(code);
                cfg.peers.push_back(std::move(peer));
            }
            for (const auto& link : sc_.links) {
                if (link.producer != spec.id || link.type != ReplicationType::AllToAll) continue;
                const auto& consumer_cluster = cluster_of_.at(link.consumer.code());
                cfg.acl.allow(FeedId::a2a(),
                              consumer_cluster.empty() ? link.consumer.code() : consumer_cluster);
            }

            auto node = std::make_unique<BackendNode>(std::move(cfg), *hub_);
            hub_->bind("inproc://" + code, node.get());
            nodes_.emplace(code, std::move(node));
        }
        for (const auto& link : sc_.links)
            if (link.type == ReplicationType::Partial)
                nodes_.at(link.producer.code())->allow_peer_region(link.consumer);
    }

    void init_users() {
        for (const auto& spec : sc_.users) {
            UserState state;
            state.spec = &spec;
            state.stats.daily_download_bytes.assign(static_cast<std::size_t>(sc_.horizon_days), 0);
            users_.emplace(spec.name, std::move(state));
        }
        for (std::size_t i = 0; i < sc_.contacts.size(); ++i)
            contacts_by_step_[sc_.contacts[i].day * kIntervalsPerDay + sc_.contacts[i].slot].push_back(i);
        for (std::size_t i = 0; i < sc_.infections.size(); ++i)
            infections_by_step_[sc_.infections[i].day * kIntervalsPerDay + sc_.infections[i].slot].push_back(i);
    }

    TemporaryExposureKey tek_for(const std::string& user, DayIndex day) const {
        return scripted_tek(sc_.seed, user, day);
    }

    const std::vector<RollingProximityId>& rolling_ids_for(const std::string& user, DayIndex day) {
        auto key = user + "/" + std::to_string(day);
        auto it = rolling_cache_.find(key);
        if (it == rolling_cache_.end())
            it = rolling_cache_.emplace(key, derive_rolling_ids(tek_for(user, day))).first;
        return it->second;
    }

    // The user's visit history as of `t`: home presence between travels plus
    // the travel entries themselves, clamped at t.
    std::vector<Visit> presence_history(const UserSpec& user, Timestamp t) const {
        std::vector<Visit> visits;
        DayIndex today = day_of(t);
        std::optional<RegionId> run_region;
        DayIndex run_start = 0;
        for (DayIndex day = 0; day <= today; ++day) {
            auto loc = sc_.location_of(user, day);
            if (loc != run_region) {
                if (run_region)
                    visits.push_back({*run_region, day_start(run_start), std::min(day_start(day), t)});
                run_region = loc;
                run_start = day;
            }
        }
        if (run_region) visits.push_back({*run_region, day_start(run_start), std::min(day_start(today + 1), t)});
        return visits;
    }

    // Base regions permanently; visited regions while their classification is
    // alive. HomeOnly drops the roaming part.
    std::vector<RegionId> subscriptions_at(const UserState& user, Timestamp t) const {
        std::set<RegionId> subs(user.spec->bases.begin(), user.spec->bases.end());
        if (sc_.subscribe_policy == SubscribePolicy::Roaming) {
            auto history = presence_history(*user.spec, t);
            std::set<RegionId> visited;
            for (const auto& v : history) visited.insert(v.region);
            for (const auto& r : visited)
                if (classify_region(history, r, t).kind != RegionKind::None) subs.insert(r);
        }
        return {subs.begin(), subs.end()};
    }

    std::set<RegionId> declared_set_at(const UserSpec& user, Timestamp t) const {
        std::set<RegionId> declared(user.bases.begin(), user.bases.end());
        auto history = presence_history(user, t);
        std::set<RegionId> visited;
        for (const auto& v : history) visited.insert(v.region);
        for (const auto& r : visited)
            if (classify_region(history, r, t).kind != RegionKind::None) declared.insert(r);
        return declared;
    }

    void run_contacts(std::int64_t step, DayIndex day, int slot) {
        auto it = contacts_by_step_.find(step);
        if (it == contacts_by_step_.end()) return;
        for (std::size_t idx : it->second) {
            const auto& c = sc_.contacts[idx];
            IntervalIndex interval = day * kIntervalsPerDay + slot;
            RegionId region = *sc_.location_of(*users_.at(c.user_a).spec, day);
            auto& a = users_.at(c.user_a);
            auto& b = users_.at(c.user_b);
            a.contact_log.push_back({rolling_ids_for(c.user_b, day)[slot], {40, 0, 0, 0}, now_});
            a.contact_refs.push_back({c.user_b, region, interval, day});
            b.contact_log.push_back({rolling_ids_for(c.user_a, day)[slot], {40, 0, 0, 0}, now_});
            b.contact_refs.push_back({c.user_a, region, interval, day});
            events_.push_back("step " + std::to_string(step) + ": contact " + c.user_a + "/" + c.user_b +
                              " in " + region.code());
        }
    }

    void run_infections(std::int64_t step, DayIndex day, int slot) {
        auto it = infections_by_step_.find(step);
        if (it == infections_by_step_.end()) return;
        for (std::size_t idx : it->second) {
            const auto& inf = sc_.infections[idx];
            const UserSpec& spec = *users_.at(inf.user).spec;
            UploadRecord rec;
            rec.user = inf.user;
            rec.step = step;
            rec.day = day;
            if (spec.bases.empty()) {
                // Positive test with no reachable home backend: the roaming
                // registration path is not part of this system, so the keys
                // never enter it.
                rec.f4_miss = true;
                uploads_.push_back(std::move(rec));
                events_.push_back("step " + std::to_string(step) + ": " + inf.user +
                                  " positive while roaming, no base backend, keys not registered");
                continue;
            }
            rec.backend = spec.bases.front();
            rec.declared = declared_set_at(spec, now_);
            DiagnosisKeyUpload upload;
            for (DayIndex d = std::max<DayIndex>(0, day - (kMaxKeysPerUpload - 1)); d <= day; ++d)
                upload.keys.push_back(DiagnosisKey{tek_for(inf.user, d)});
            upload.declared_regions = rec.declared;
            upload.testing_region = rec.backend;
            upload.upload_time = now_;
            upload.authorization_code = sc_.upload_code;
            rec.keys = upload.keys;

            auto body_bytes = encode_upload(upload);
            std::string body(reinterpret_cast<const char*>(body_bytes.data()), body_bytes.size());
            auto resp = hub_->post("inproc://" + rec.backend.code(), "/v1/keys", body, nullptr);
            if (resp.status != status::ok)
                throw Error(Errc::io_error, "upload for " + inf.user + " failed: " + resp.body);
            events_.push_back("step " + std::to_string(step) + ": " + inf.user + " uploaded " +
                              std::to_string(rec.keys.size()) + " keys at " + rec.backend.code() +
                              " declaring " + std::to_string(rec.declared.size()) + " regions");
            uploads_.push_back(std::move(rec));
        }
    }

    void run_produce(const std::string& code, BackendNode& node, std::int64_t step) {
        auto report = node.tick_produce(now_);
        std::size_t built = 0;
        for (const auto& [feed, count] : report.new_batches) built += count;
        if (built > 0)
            events_.push_back("step " + std::to_string(step) + ": " + code + " built " +
                              std::to_string(built) + " batch(es)");
        if (report.purged_keys > 0)
            events_.push_back("step " + std::to_string(step) + ": " + code + " purged " +
                              std::to_string(report.purged_keys) + " keys, " +
                              std::to_string(report.purged_batches) + " batches");
    }

    void run_consume(const std::string& code, BackendNode& node, std::int64_t step) {
        auto report = node.tick_consume(now_);
        for (const auto& activity : report.polls) {
            auto& link = links_[code + "<-" + activity.peer.code()];
            link.bytes += activity.poll.bytes_received;
            link.batches += activity.poll.batches;
            link.keys += activity.poll.keys_ingested;
            if (activity.poll.keys_ingested > 0 && link.first_keys_step < 0) link.first_keys_step = step;
            if (activity.poll.keys_ingested > 0)
                events_.push_back("step " + std::to_string(step) + ": " + code + " pulled " +
                                  std::to_string(activity.poll.keys_ingested) + " keys from " +
                                  activity.peer.code());
            if (activity.resync)
                events_.push_back("step " + std::to_string(step) + ": " + code + " resynced feed of " +
                                  activity.peer.code() + ", skipped " +
                                  std::to_string(activity.resync->skipped_batches) + " batch(es)");
        }
    }

    void run_downloads(UserState& user, DayIndex day) {
        for (const auto& region : user.subs_by_day[static_cast<std::size_t>(day)]) {
            auto& cursor = user.feed_cursor[region.code()];
            const std::string url = "inproc://" + region.code();
            for (int guard = 0; guard < 100000; ++guard) {
                auto resp = hub_->get(url, "/v1/keys/" + std::to_string(cursor + 1), nullptr);
                if (resp.status == status::gone) {
                    auto probe = hub_->get(url, "/v1/keys", nullptr);
                    std::uint64_t oldest = cursor + 1;
                    if (probe.status == status::ok)
                        oldest = decode_batch(probe.body).batch_id;
                    else if (probe.status == status::no_content && probe.next_hint)
                        oldest = *probe.next_hint;
                    if (oldest - 1 <= cursor) break;
                    cursor = oldest - 1;
                    continue;
                }
                if (resp.status != status::ok) break;
                auto batch = decode_batch(resp.body);
                cursor = batch.batch_id;
                user.stats.downloaded_bytes += resp.body.size();
                user.stats.daily_download_bytes[static_cast<std::size_t>(day)] += resp.body.size();
                for (const auto& k : batch.keys)
                    if (user.downloaded_set.insert(k.tek.bytes).second) user.downloaded.push_back(k);
            }
        }
    }

    // ----- spec-level expectation model ------------------------------------

    std::int64_t build_step_at_or_after(std::int64_t step) const {
        std::int64_t bi = std::max<std::int64_t>(1, (sc_.build_interval + kSecondsPerInterval - 1) /
                                                        kSecondsPerInterval);
        return (step + bi - 1) / bi * bi;
    }

    // First daily purge step that drops a key stored at `stored_at`.
    std::int64_t purge_step_for(Timestamp stored_at) const {
        Timestamp deadline = stored_at + static_cast<Timestamp>(sc_.retention_days) * kSecondsPerDay;
        std::int64_t step = (deadline + kSecondsPerInterval - 1) / kSecondsPerInterval;
        return (step + kIntervalsPerDay - 1) / kIntervalsPerDay * kIntervalsPerDay;
    }

    bool subscribed_on(const UserState& user, const RegionId& region, DayIndex day) const {
        const auto& subs = user.subs_by_day[static_cast<std::size_t>(day)];
        return std::find(subs.begin(), subs.end(), region) != subs.end();
    }

    bool window_reachable(const UserState& observer, const RegionId& feed_region, std::int64_t avail_step,
                          std::int64_t purge_step, std::int64_t last_step) const {
        std::int64_t end_step = std::min(last_step, purge_step - 1);
        if (avail_step > end_step) return false;
        for (DayIndex d = avail_step / kIntervalsPerDay; d <= end_step / kIntervalsPerDay; ++d)
            if (subscribed_on(observer, feed_region, d)) return true;
        return false;
    }

    // Would the replication rules deliver this upload's key for `contact_day`
    // to the observer? Decided purely from the script, the link topology and
    // the cadence arithmetic, never from feed/batch state.
    std::pair<bool, std::string> expect_delivery(const UserState& observer, const UploadRecord& upload,
                                                 DayIndex contact_day, std::int64_t last_step) const {
        if (upload.f4_miss)
            return {false, "uploader has no base region; roaming positive tests are not registered"};
        if (contact_day < upload.day - (kMaxKeysPerUpload - 1) || contact_day > upload.day)
            return {false, "contact day outside the uploaded key window"};

        const RegionId& b = upload.backend;
        std::int64_t avail_b = build_step_at_or_after(upload.step);
        if (window_reachable(observer, b, avail_b, purge_step_for(upload.step * kSecondsPerInterval),
                             last_step))
            return {true, ""};

        bool any_link = false;
        bool undeclared_only = false;
        for (const auto& link : sc_.links) {
            if (link.producer != b) continue;
            if (link.type == ReplicationType::Partial && !upload.declared.count(link.consumer)) {
                undeclared_only = true;
                continue;
            }
            any_link = true;
            // Consumer ingests at the producer's build step (polls run every
            // step and follow the produce phase); its own public feed picks
            // the keys up at the next build after that.
            std::int64_t ingest = avail_b;
            std::int64_t avail_r = build_step_at_or_after(ingest + 1);
            if (window_reachable(observer, link.consumer, avail_r,
                                 purge_step_for(ingest * kSecondsPerInterval), last_step))
                return {true, ""};
        }
        if (!any_link && undeclared_only)
            return {false, "partial replication withholds the keys: no listened region was declared"};
        return {false, "observer never listens to a feed that carries the keys"};
    }

    SimulationReport finalize(std::int64_t last_step) {
        SimulationReport report;
        report.scenario_name = sc_.name;
        report.seed = sc_.seed;
        report.horizon_days = sc_.horizon_days;
        report.links = links_;
        report.events = std::move(events_);

        std::set<KeyBytes> uploaded_union;
        for (const auto& u : uploads_)
            for (const auto& k : u.keys) uploaded_union.insert(k.tek.bytes);
        report.uploaded_key_count = uploaded_union.size();

        for (const auto& [code, node] : nodes_) {
            report.backend_keys[code] = {node->store().count(KeyOrigin::Local),
                                         node->store().count(KeyOrigin::Remote)};
        }

        // Exposure matching per user, through the domain operation.
        std::map<std::string, std::vector<std::pair<ContactEvent, DiagnosisKey>>> matches;
        for (auto& [name, user] : users_) {
            auto m = match_exposures(user.contact_log, user.downloaded);
            user.stats.downloaded_keys = user.downloaded_set.size();
            user.stats.matches = m.size();
            for (const auto& [c, k] : m)
                report.match_set.push_back(name + "|" + crypto::to_hex(k.tek.bytes) + "|" +
                                           std::to_string(c.observed_id.interval));
            matches.emplace(name, std::move(m));
            report.users[name] = user.stats;
        }
        std::sort(report.match_set.begin(), report.match_set.end());

        // Verdicts: one entry per (contact direction, upload of the peer).
        for (const auto& [name, user] : users_) {
            for (const auto& ref : user.contact_refs) {
                for (const auto& upload : uploads_) {
                    if (upload.user != ref.other) continue;
                    VerdictEntry v;
                    bool observer_local = std::find(user.spec->bases.begin(), user.spec->bases.end(),
                                                    ref.region) != user.spec->bases.end();
                    const UserSpec* other = sc_.find_user(ref.other);
                    bool uploader_local =
                        std::find(other->bases.begin(), other->bases.end(), ref.region) != other->bases.end();
                    v.requirement = observer_local ? (uploader_local ? "LL" : "F1")
                                                   : (uploader_local ? "F2" : "F3");
                    v.observer = name;
                    v.uploader = ref.other;
                    v.contact_region = ref.region.code();
                    v.contact_interval = ref.interval;
                    v.upload_day = upload.day;
                    auto [expected, note] = expect_delivery(user, upload, ref.day, last_step);
                    v.expected = expected;
                    v.note = note;

                    auto key_bytes = tek_for(ref.other, ref.day).bytes;
                    v.observed = false;
                    for (const auto& [c, k] : matches.at(name))
                        if (k.tek.bytes == key_bytes && c.observed_id.interval == ref.interval)
                            v.observed = true;

                    if (v.expected != v.observed) report.violations.push_back(violation_trace(v, user, upload));
                    report.verdicts.push_back(std::move(v));
                }
            }
        }

        // Isolation: under need-to-know rules a backend outside an upload's
        // allowed set must never hold its keys.
        for (const auto& upload : uploads_) {
            if (upload.f4_miss) continue;
            std::set<RegionId> allowed{upload.backend};
            for (const auto& link : sc_.links) {
                if (link.producer != upload.backend) continue;
                if (link.type == ReplicationType::AllToAll || upload.declared.count(link.consumer))
                    allowed.insert(link.consumer);
            }
            for (const auto& [code, node] : nodes_) {
                if (allowed.count(validate_region_id(code))) continue;
                for (const auto& k : upload.keys)
                    if (node->store().find(k.tek.bytes))
                        report.violations.push_back("isolation: backend " + code + " holds a key of " +
                                                    upload.user + " without being in the declared set");
            }
        }
        return report;
    }

    std::string violation_trace(const VerdictEntry& v, const UserState& observer,
                                const UploadRecord& upload) {
        std::ostringstream out;
        out << v.requirement << " violation: " << v.observer << " expected=" << (v.expected ? "yes" : "no")
            << " observed=" << (v.observed ? "yes" : "no") << " for keys of " << v.uploader << " (contact in "
            << v.contact_region << " at interval " << v.contact_interval << ", upload day " << upload.day
            << ", declared {";
        bool first = true;
        for (const auto& r : upload.declared) {
            if (!first) out << ",";
            out << r.code();
            first = false;
        }
        out << "}); key held by [";
        first = true;
        auto key_bytes = tek_for(v.uploader, v.contact_interval / kIntervalsPerDay).bytes;
        for (const auto& [code, node] : nodes_) {
            if (node->store().find(key_bytes)) {
                if (!first) out << ",";
                out << code;
                first = false;
            }
        }
        out << "]; downloaded=" << (observer.downloaded_set.count(key_bytes) ? "yes" : "no");
        return out.str();
    }

    Scenario sc_;
    Timestamp now_ = 0;
    crypto::SigningKey root_key_;
    CertRecord root_cert_;
    std::unique_ptr<Registry> registry_;
    std::unique_ptr<InProcessTransport> hub_;
    std::map<std::string, crypto::SigningKey> feed_keys_;
    std::map<std::string, ClientCredential> credentials_;
    std::map<std::string, std::string> cluster_of_;
    std::map<std::string, std::unique_ptr<BackendNode>> nodes_;
    std::map<std::string, UserState> users_;
    std::map<std::int64_t, std::vector<std::size_t>> contacts_by_step_;
    std::map<std::int64_t, std::vector<std::size_t>> infections_by_step_;
    std::map<std::string, std::vector<RollingProximityId>> rolling_cache_;
    std::vector<UploadRecord> uploads_;
    std::map<std::string, LinkTraffic> links_;
    std::vector<std::string> events_;
};

inline SimulationReport run_scenario(const Scenario& scenario) { return Engine(scenario).run(); }

struct Alt2Verdict {
    bool applicable = false;
    std::string reason;
    bool equivalent = false;
    std::vector<std::string> differences;
};

// Runs the scenario under roaming-feed listening and under home-feed-only
// listening and compares the exposure-match sets. Only meaningful when the
// whole topology is one all-to-all cluster.
inline Alt2Verdict check_alt2_equivalence(const Scenario& raw) {
    Scenario sc = raw.expanded();
    sc.validate();

    Alt2Verdict verdict;
    std::string cluster;
    for (const auto& r : sc.regions) {
        if (r.cluster.empty()) return {false, "region " + r.id.code() + " is not in a cluster", false, {}};
        if (cluster.empty()) cluster = r.cluster;
        if (r.cluster != cluster) return {false, "regions span multiple clusters", false, {}};
    }
    std::set<std::pair<std::string, std::string>> a2a_pairs;
    for (const auto& link : sc.links) {
        if (link.type != ReplicationType::AllToAll)
            return {false, "link " + link.consumer.code() + "<-" + link.producer.code() + " is partial",
                    false, {}};
        a2a_pairs.insert({link.consumer.code(), link.producer.code()});
    }
    for (const auto& a : sc.regions)
        for (const auto& b : sc.regions)
            if (a.id != b.id && !a2a_pairs.count({a.id.code(), b.id.code()}))
                return {false, "cluster is not fully connected all-to-all", false, {}};

    verdict.applicable = true;
    Scenario roaming = sc;
    roaming.subscribe_policy = SubscribePolicy::Roaming;
    Scenario home_only = sc;
    home_only.subscribe_policy = SubscribePolicy::HomeOnly;

    auto a = run_scenario(roaming).match_set;
    auto b = run_scenario(home_only).match_set;
    verdict.equivalent = (a == b);
    if (!verdict.equivalent) {
        for (const auto& m : a)
            if (!std::count(b.begin(), b.end(), m)) verdict.differences.push_back("roaming only: " + m);
        for (const auto& m : b)
            if (!std::count(a.begin(), a.end(), m)) verdict.differences.push_back("home-only only: " + m);
    }
    return verdict;
}

struct TrafficComparison {
    std::map<std::string, LinkTraffic> partial;
    std::map<std::string, LinkTraffic> a2a;
    bool partial_within_a2a = true;  // per-link keys and bytes under Partial <= AllToAll
};

inline std::map<std::string, std::uint64_t> link_bytes(const SimulationReport& report) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& [label, t] : report.links) out[label] = t.bytes;
    return out;
}

// Same scenario, twice: every link forced Partial, then forced AllToAll.
inline TrafficComparison compare_replication_traffic(const Scenario& raw) {
    Scenario sc = raw.expanded();
    sc.validate();
    TrafficComparison cmp;

    Scenario partial = sc;
    for (auto& link : partial.links) link.type = ReplicationType::Partial;
    cmp.partial = run_scenario(partial).links;

    Scenario a2a = sc;
    for (auto& link : a2a.links) link.type = ReplicationType::AllToAll;
    cmp.a2a = run_scenario(a2a).links;

    for (const auto& [label, t] : cmp.partial) {
        auto it = cmp.a2a.find(label);
        std::uint64_t a2a_keys = it == cmp.a2a.end() ? 0 : it->second.keys;
        std::uint64_t a2a_bytes = it == cmp.a2a.end() ? 0 : it->second.bytes;
        if (t.keys > a2a_keys || t.bytes > a2a_bytes) cmp.partial_within_a2a = false;
    }
    return cmp;
}

}  // namespace enfed::sim
