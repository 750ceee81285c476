#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "enfed/consumer.hpp"
#include "enfed/domain.hpp"
#include "enfed/errors.hpp"

namespace enfed::sim {

// Travel entries are day-granular and inclusive: the user is in `region`
// from the start of enter_day through the end of exit_day.
struct TravelEntry {
    RegionId region;
    DayIndex enter_day = 0;
    DayIndex exit_day = 0;
};

struct UserSpec {
    std::string name;
    std::vector<RegionId> bases;  // may be empty (no home backend)
    std::vector<TravelEntry> travel;
};

struct ContactSpec {
    std::string user_a;
    std::string user_b;
    DayIndex day = 0;
    int slot = 0;  // 0..95 within the day
};

struct InfectionSpec {
    std::string user;
    DayIndex day = 0;
    int slot = 32;
};

struct LinkSpec {
    RegionId consumer;
    RegionId producer;
    ReplicationType type = ReplicationType::Partial;
};

// Roaming: users listen to base feeds plus the feeds of unexpired roaming
// regions. HomeOnly: base feeds only (the Alternative-2 posture, viable on
// top of all-to-all replication).
enum class SubscribePolicy { Roaming, HomeOnly };

// Procedural script filler for large scenarios; expanded deterministically
// from the scenario seed.
struct GenerateSpec {
    int users = 0;
    int travels = 0;
    int contacts = 0;
    int infections = 0;
    std::string prefix = "u";
};

struct RegionSpec {
    RegionId id;
    std::string cluster;  // empty = unclustered
    std::string vendor;
};

struct Scenario {
    std::string name = "unnamed";
    std::uint64_t seed = 1;
    DayIndex horizon_days = 10;
    std::string upload_code = "TEST-CODE";
    Timestamp build_interval = 900;
    Timestamp poll_interval = 300;
    int retention_days = 30;
    std::size_t chunk_size = 1000;
    SubscribePolicy subscribe_policy = SubscribePolicy::Roaming;

    std::vector<RegionSpec> regions;
    std::vector<LinkSpec> links;
    std::vector<UserSpec> users;
    std::vector<ContactSpec> contacts;
    std::vector<InfectionSpec> infections;
    std::optional<GenerateSpec> generate;

    bool has_region(const RegionId& r) const {
        for (const auto& spec : regions)
            if (spec.id == r) return true;
        return false;
    }

    const UserSpec* find_user(const std::string& name) const {
        for (const auto& u : users)
            if (u.name == name) return &u;
        return nullptr;
    }

    // Where a user is on a given day (travel overrides the first base).
    std::optional<RegionId> location_of(const UserSpec& user, DayIndex day) const {
        for (const auto& t : user.travel)
            if (day >= t.enter_day && day <= t.exit_day) return t.region;
        if (!user.bases.empty()) return user.bases.front();
        return std::nullopt;
    }

    Scenario expanded() const;
    void validate() const;

    static Scenario parse(std::istream& in, const std::string& origin = "<scenario>");
    static Scenario parse_file(const std::string& path);
    static Scenario parse_string(const std::string& text);
};

namespace detail {

inline std::vector<std::string> tokens_of(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

inline std::int64_t parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        std::int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(Errc::invalid_scenario, "bad integer for " + what + ": '" + s + "'");
    }
}

inline std::vector<RegionId> parse_region_list(const std::string& s) {
    std::vector<RegionId> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) out.push_back(validate_region_id(cur));
    return out;
}

}  // namespace detail

inline Scenario Scenario::parse(std::istream& in, const std::string& origin) {
    Scenario sc;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw Error(Errc::invalid_scenario, origin + ":" + std::to_string(line_no) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto tok = detail::tokens_of(line);
        if (tok.empty()) continue;
        const auto& kw = tok[0];
        try {
            if (kw == "scenario" && tok.size() == 2) {
                sc.name = tok[1];
            } else if (kw == "seed" && tok.size() == 2) {
                sc.seed = static_cast<std::uint64_t>(detail::parse_int(tok[1], "seed"));
            } else if (kw == "horizon-days" && tok.size() == 2) {
                sc.horizon_days = detail::parse_int(tok[1], "horizon-days");
            } else if (kw == "upload-code" && tok.size() == 2) {
                sc.upload_code = tok[1];
            } else if (kw == "build-interval-secs" && tok.size() == 2) {
                sc.build_interval = detail::parse_int(tok[1], "build-interval-secs");
            } else if (kw == "poll-interval-secs" && tok.size() == 2) {
                sc.poll_interval = detail::parse_int(tok[1], "poll-interval-secs");
            } else if (kw == "retention-days" && tok.size() == 2) {
                sc.retention_days = static_cast<int>(detail::parse_int(tok[1], "retention-days"));
            } else if (kw == "chunk-size" && tok.size() == 2) {
                sc.chunk_size = static_cast<std::size_t>(detail::parse_int(tok[1], "chunk-size"));
            } else if (kw == "subscribe-policy" && tok.size() == 2) {
                if (tok[1] == "roaming")
                    sc.subscribe_policy = SubscribePolicy::Roaming;
                else if (tok[1] == "home-only")
                    sc.subscribe_policy = SubscribePolicy::HomeOnly;
                else
                    fail("subscribe-policy must be 'roaming' or 'home-only'");
            } else if (kw == "region" && tok.size() >= 2) {
                RegionSpec spec;
                spec.id = validate_region_id(tok[1]);
                for (std::size_t i = 2; i + 1 < tok.size(); i += 2) {
                    if (tok[i] == "cluster")
                        spec.cluster = tok[i + 1];
                    else if (tok[i] == "vendor")
                        spec.vendor = tok[i + 1];
                    else
                        fail("unknown region attribute '" + tok[i] + "'");
                }
                sc.regions.push_back(spec);
            } else if (kw == "link" && tok.size() == 4) {
                LinkSpec link;
                link.consumer = validate_region_id(tok[1]);
                link.producer = validate_region_id(tok[2]);
                if (tok[3] == "partial")
                    link.type = ReplicationType::Partial;
                else if (tok[3] == "a2a")
                    link.type = ReplicationType::AllToAll;
                else
                    fail("link type must be 'partial' or 'a2a'");
                sc.links.push_back(link);
            } else if (kw == "link-all" && tok.size() == 2) {
                ReplicationType type;
                if (tok[1] == "partial")
                    type = ReplicationType::Partial;
                else if (tok[1] == "a2a")
                    type = ReplicationType::AllToAll;
                else
                    fail("link-all type must be 'partial' or 'a2a'");
                for (const auto& c : sc.regions)
                    for (const auto& p : sc.regions)
                        if (c.id != p.id) sc.links.push_back({c.id, p.id, type});
            } else if (kw == "user" && tok.size() == 4 && tok[2] == "base") {
                sc.users.push_back({tok[1], detail::parse_region_list(tok[3]), {}});
            } else if (kw == "user" && tok.size() == 2) {
                sc.users.push_back({tok[1], {}, {}});  // no base region (F4 case)
            } else if (kw == "travel" && tok.size() == 5) {
                UserSpec* user = nullptr;
                for (auto& u : sc.users)
                    if (u.name == tok[1]) user = &u;
                if (!user) fail("travel for unknown user '" + tok[1] + "'");
                user->travel.push_back({validate_region_id(tok[2]), detail::parse_int(tok[3], "enter day"),
                                        detail::parse_int(tok[4], "exit day")});
            } else if (kw == "contact" && tok.size() == 7 && tok[3] == "day" && tok[5] == "slot") {
                sc.contacts.push_back({tok[1], tok[2], detail::parse_int(tok[4], "contact day"),
                                       static_cast<int>(detail::parse_int(tok[6], "contact slot"))});
            } else if (kw == "infect" && (tok.size() == 4 || tok.size() == 6) && tok[2] == "day") {
                InfectionSpec spec;
                spec.user = tok[1];
                spec.day = detail::parse_int(tok[3], "infection day");
                if (tok.size() == 6) {
                    if (tok[4] != "slot") fail("expected 'slot'");
                    spec.slot = static_cast<int>(detail::parse_int(tok[5], "infection slot"));
                }
                sc.infections.push_back(spec);
            } else if (kw == "generate") {
                GenerateSpec gen;
                for (std::size_t i = 1; i < tok.size(); ++i) {
                    auto eq = tok[i].find('=');
                    if (eq == std::string::npos) fail("generate expects key=value pairs");
                    auto key = tok[i].substr(0, eq);
                    auto value = tok[i].substr(eq + 1);
                    if (key == "users")
                        gen.users = static_cast<int>(detail::parse_int(value, "generate users"));
                    else if (key == "travels")
                        gen.travels = static_cast<int>(detail::parse_int(value, "generate travels"));
                    else if (key == "contacts")
                        gen.contacts = static_cast<int>(detail::parse_int(value, "generate contacts"));
                    else if (key == "infections")
                        gen.infections = static_cast<int>(detail::parse_int(value, "generate infections"));
                    else if (key == "prefix")
                        gen.prefix = value;
                    else
                        fail("unknown generate key '" + key + "'");
                }
                sc.generate = gen;
            } else {
                fail("unrecognized directive '" + kw + "'");
            }
        } catch (const Error& e) {
            if (e.code() == Errc::invalid_scenario) throw;
            fail(e.what());
        }
    }
    return sc;
}

inline Scenario Scenario::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open scenario file " + path);
    return parse(in, path);
}

inline Scenario Scenario::parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
}

// Applies the generate directive. All randomness flows from the scenario
// seed through raw mt19937_64 draws, so results are identical across
// platforms.
inline Scenario Scenario::expanded() const {
    if (!generate) return *this;
    Scenario sc = *this;
    sc.generate.reset();
    const GenerateSpec gen = *generate;
    if (sc.regions.empty()) throw Error(Errc::invalid_scenario, "generate requires regions");
    std::mt19937_64 rng(sc.seed);
    auto pick = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    std::size_t first_generated = sc.users.size();
    for (int i = 0; i < gen.users; ++i) {
        UserSpec u;
        char tag[16];
        std::snprintf(tag, sizeof tag, "%s%04d", gen.prefix.c_str(), i);
        u.name = tag;
        u.bases.push_back(sc.regions[i % sc.regions.size()].id);
        sc.users.push_back(std::move(u));
    }
    if (sc.users.empty()) return sc;

    for (int i = 0; i < gen.travels; ++i) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            auto& user = sc.users[first_generated + pick(sc.users.size() - first_generated)];
            const auto& region = sc.regions[pick(sc.regions.size())].id;
            if (!user.bases.empty() && region == user.bases.front()) continue;
            DayIndex len = 1 + static_cast<DayIndex>(rng() % 3);
            if (sc.horizon_days < len + 3) break;
            DayIndex enter = 1 + static_cast<DayIndex>(rng() % (sc.horizon_days - len - 2));
            bool overlaps = false;
            for (const auto& t : user.travel)
                if (enter <= t.exit_day && t.enter_day <= enter + len - 1) overlaps = true;
            if (overlaps) continue;
            user.travel.push_back({region, enter, enter + len - 1});
            break;
        }
    }

    // Contacts need co-located pairs: index users by (day, region).
    auto occupants_of = [&](DayIndex day, const RegionId& region) {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < sc.users.size(); ++i) {
            auto loc = sc.location_of(sc.users[i], day);
            if (loc && *loc == region) out.push_back(i);
        }
        return out;
    };
    int placed = 0;
    for (int attempt = 0; attempt < gen.contacts * 10 && placed < gen.contacts; ++attempt) {
        DayIndex day = static_cast<DayIndex>(rng() % std::max<DayIndex>(1, sc.horizon_days - 2));
        const auto& region = sc.regions[pick(sc.regions.size())].id;
        auto here = occupants_of(day, region);
        if (here.size() < 2) continue;
        std::size_t a = here[pick(here.size())];
        std::size_t b = here[pick(here.size())];
        if (a == b) continue;
        sc.contacts.push_back({sc.users[a].name, sc.users[b].name, day, static_cast<int>(rng() % 96)});
        ++placed;
    }

    std::set<std::size_t> infected;
    for (int attempt = 0; attempt < gen.infections * 10 &&
                          static_cast<int>(infected.size()) < gen.infections; ++attempt) {
        std::size_t u = pick(sc.users.size());
        if (!infected.insert(u).second) continue;
        DayIndex day = 1 + static_cast<DayIndex>(rng() % std::max<DayIndex>(1, sc.horizon_days - 3));
        sc.infections.push_back({sc.users[u].name, day, static_cast<int>(rng() % 96)});
    }
    return sc;
}

inline void Scenario::validate() const {
    if (generate)
        throw Error(Errc::invalid_scenario, "validate an expanded scenario (call expanded() first)");
    if (horizon_days < 1) throw Error(Errc::invalid_scenario, "horizon must be at least one day");
    if (regions.empty()) throw Error(Errc::invalid_scenario, "no regions declared");

    std::set<RegionId> region_set;
    for (const auto& r : regions)
        if (!region_set.insert(r.id).second)
            throw Error(Errc::invalid_scenario, "region " + r.id.code() + " declared twice");

    for (const auto& link : links) {
        if (!region_set.count(link.consumer) || !region_set.count(link.producer))
            throw Error(Errc::invalid_scenario, "link references unknown region");
        if (link.consumer == link.producer)
            throw Error(Errc::invalid_scenario, "self-link on " + link.consumer.code());
    }

    std::set<std::string> names;
    for (const auto& u : users) {
        if (!names.insert(u.name).second)
            throw Error(Errc::invalid_scenario, "user " + u.name + " declared twice");
        for (const auto& b : u.bases)
            if (!region_set.count(b))
                throw Error(Errc::invalid_scenario, u.name + " has unknown base region " + b.code());
        std::vector<TravelEntry> sorted = u.travel;
        std::sort(sorted.begin(), sorted.end(),
                  [](const TravelEntry& a, const TravelEntry& b) { return a.enter_day < b.enter_day; });
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            const auto& t = sorted[i];
            if (!region_set.count(t.region))
                throw Error(Errc::invalid_scenario, u.name + " travels to unknown region " + t.region.code());
            if (t.exit_day < t.enter_day || t.enter_day < 0 || t.exit_day >= horizon_days)
                throw Error(Errc::invalid_scenario, u.name + " has a travel entry outside the horizon");
            if (i > 0 && t.enter_day <= sorted[i - 1].exit_day)
                throw Error(Errc::invalid_scenario, u.name + " is in two regions at once");
        }
    }

    for (const auto& c : contacts) {
        const UserSpec* a = find_user(c.user_a);
        const UserSpec* b = find_user(c.user_b);
        if (!a || !b) throw Error(Errc::invalid_scenario, "contact references unknown user");
        if (c.user_a == c.user_b) throw Error(Errc::invalid_scenario, "self-contact for " + c.user_a);
        if (c.day < 0 || c.day >= horizon_days || c.slot < 0 || c.slot >= kIntervalsPerDay)
            throw Error(Errc::invalid_scenario, "contact outside the horizon");
        auto la = location_of(*a, c.day);
        auto lb = location_of(*b, c.day);
        if (!la || !lb || *la != *lb)
            throw Error(Errc::invalid_scenario, c.user_a + " and " + c.user_b + " are not co-located on day " +
                                                    std::to_string(c.day));
    }

    for (const auto& inf : infections) {
        if (!find_user(inf.user)) throw Error(Errc::invalid_scenario, "infection of unknown user " + inf.user);
        if (inf.day < 0 || inf.day > horizon_days - 2)
            throw Error(Errc::invalid_scenario,
                        "infection of " + inf.user + " must happen at least two days before the horizon ends");
        if (inf.slot < 0 || inf.slot >= kIntervalsPerDay)
            throw Error(Errc::invalid_scenario, "infection slot out of range");
    }
}

}  // namespace enfed::sim
