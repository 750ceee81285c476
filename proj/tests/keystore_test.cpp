#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>
#include <thread>

#include "enfed/keystore.hpp"

using namespace enfed;

namespace {

DiagnosisKey key_n(std::uint32_t n, DayIndex day = 1) {
    DiagnosisKey k;
    k.tek.valid_day = day;
    for (int i = 0; i < 4; ++i) k.tek.bytes[i] = static_cast<std::uint8_t>(n >> (8 * i));
    k.tek.bytes[15] = 0xee;
    return k;
}

DiagnosisKeyUpload upload_of(std::vector<DiagnosisKey> keys, std::vector<std::string> regions,
                             const std::string& b, Timestamp t = 100) {
    DiagnosisKeyUpload u;
    u.keys = std::move(keys);
    for (const auto& r : regions) u.declared_regions.insert(validate_region_id(r));
    u.testing_region = validate_region_id(b);
    u.upload_time = t;
    u.authorization_code = "CODE";
    return u;
}

KeyStore make_store() { return KeyStore(static_code_verifier({"CODE"})); }

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("enfed-test-" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("local ingest stores declared regions and dedups") {
    auto store = make_store();
    std::vector<DiagnosisKey> keys;
    for (int i = 0; i < 14; ++i) keys.push_back(key_n(i));
    auto u = upload_of(keys, {"CH", "IT"}, "CH");

    CHECK(store.ingest_local(u, 100) == 14);
    CHECK(store.ingest_local(u, 101) == 0);
    CHECK(store.size() == 14);

    auto stored = store.find(keys[0].tek.bytes);
    REQUIRE(stored.has_value());
    CHECK(stored->origin == KeyOrigin::Local);
    CHECK(stored->declared_regions.size() == 2);
}

TEST_CASE("upload validation") {
    auto store = make_store();
    auto no_b = upload_of({key_n(1)}, {"IT"}, "CH");
    CHECK_THROWS_MATCHES(store.ingest_local(no_b, 0), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::malformed_upload; }));

    DiagnosisKeyUpload empty;
    empty.testing_region = validate_region_id("CH");
    empty.declared_regions.insert(empty.testing_region);
    CHECK_THROWS_AS(store.ingest_local(empty, 0), Error);

    std::vector<DiagnosisKey> too_many;
    for (int i = 0; i < 15; ++i) too_many.push_back(key_n(i));
    CHECK_THROWS_AS(store.ingest_local(upload_of(too_many, {"CH"}, "CH"), 0), Error);

    auto bad_code = upload_of({key_n(1)}, {"CH"}, "CH");
    bad_code.authorization_code = "WRONG";
    CHECK_THROWS_MATCHES(store.ingest_local(bad_code, 0), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::unauthorized_upload; }));
}

TEST_CASE("remote ingest dedups and preserves local origin") {
    auto store = make_store();
    RegionId it = validate_region_id("IT");
    std::vector<DiagnosisKey> keys;
    for (int i = 0; i < 5; ++i) keys.push_back(key_n(100 + i));

    CHECK(store.ingest_remote(keys, it, 50) == 5);
    CHECK(store.ingest_remote(keys, it, 51) == 0);

    store.ingest_local(upload_of({key_n(200)}, {"CH"}, "CH"), 60);
    CHECK(store.ingest_remote({key_n(200)}, it, 61) == 0);
    CHECK(store.find(key_n(200).tek.bytes)->origin == KeyOrigin::Local);
}

TEST_CASE("local reads never see remote keys") {
    auto store = make_store();
    store.ingest_local(upload_of({key_n(1), key_n(2), key_n(3)}, {"CH"}, "CH"), 10);
    store.ingest_remote({key_n(10), key_n(11)}, validate_region_id("IT"), 11);

    auto local = store.read_local_since(0);
    CHECK(local.size() == 3);
    for (const auto& e : local) CHECK(e.origin == KeyOrigin::Local);

    CHECK(store.read_all_since(0).size() == 5);
    CHECK(store.read_local_since(store.max_cursor()).empty());

    auto again = store.read_local_since(0);
    CHECK(again.size() == local.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].seq == local[i].seq);
}

TEST_CASE("cursor validation") {
    auto store = make_store();
    CHECK_THROWS_MATCHES(store.read_local_since(1), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::invalid_cursor; }));
    store.ingest_local(upload_of({key_n(1)}, {"CH"}, "CH"), 10);
    CHECK(store.read_local_since(1).empty());
    CHECK_THROWS_AS(store.read_local_since(2), Error);
}

TEST_CASE("per-region read filters by declared set") {
    auto store = make_store();
    RegionId it = validate_region_id("IT");
    store.ingest_local(upload_of({key_n(1)}, {"CH", "IT"}, "CH"), 10);
    store.ingest_local(upload_of({key_n(2)}, {"CH"}, "CH"), 11);

    auto for_it = store.read_local_for_region(it, 0);
    REQUIRE(for_it.size() == 1);
    CHECK(for_it[0].key == key_n(1));

    CHECK(store.read_local_for_region(validate_region_id("FR"), 0).empty());
    CHECK(store.read_local_for_region(validate_region_id("CH"), 0).size() == 2);
}

TEST_CASE("per-region read equals brute-force filter on random stores") {
    std::mt19937_64 rng(17);
    const std::vector<std::string> regions{"AA", "BB", "CC", "DD", "EE"};
    auto store = make_store();
    std::vector<DiagnosisKeyUpload> uploads;
    std::uint32_t next_key = 0;

    for (int i = 0; i < 200; ++i) {
        std::vector<DiagnosisKey> keys;
        int n = 1 + static_cast<int>(rng() % 3);
        for (int j = 0; j < n; ++j) keys.push_back(key_n(next_key++));
        std::string b = regions[rng() % regions.size()];
        std::vector<std::string> declared{b};
        for (const auto& r : regions)
            if (r != b && rng() % 2) declared.push_back(r);
        auto u = upload_of(keys, declared, b);
        store.ingest_local(u, 100 + i);
        uploads.push_back(u);
    }

    for (const auto& r : regions) {
        RegionId region = validate_region_id(r);
        std::set<KeyBytes> expected;
        for (const auto& u : uploads)
            if (u.declared_regions.count(region))
                for (const auto& k : u.keys) expected.insert(k.tek.bytes);
        std::set<KeyBytes> got;
        for (const auto& e : store.read_local_for_region(region, 0)) got.insert(e.key.tek.bytes);
        CHECK(got == expected);
    }
}

TEST_CASE("purge removes everything at or past the cutoff") {
    auto store = make_store();
    Timestamp day = kSecondsPerDay;
    store.ingest_local(upload_of({key_n(1)}, {"CH"}, "CH"), 0 * day);
    store.ingest_local(upload_of({key_n(2)}, {"CH"}, "CH"), 1 * day);
    store.ingest_remote({key_n(3)}, validate_region_id("IT"), 2 * day);

    RetentionPolicy policy{30};
    Timestamp now = 31 * day;
    CHECK(store.purge_expired(policy, now) == 2);  // stored at day 0 and 1
    CHECK(store.size() == 1);
    CHECK(store.find(key_n(3).tek.bytes).has_value());
    CHECK(store.purge_expired(policy, now) == 0);

    auto empty_store = make_store();
    CHECK(empty_store.purge_expired(policy, now) == 0);
}

TEST_CASE("purge boundary: 29 days is retained, 31 days is not") {
    auto store = make_store();
    Timestamp day = kSecondsPerDay;
    Timestamp now = 100 * day;
    store.ingest_local(upload_of({key_n(1)}, {"CH"}, "CH"), now - 31 * day);
    store.ingest_local(upload_of({key_n(2)}, {"CH"}, "CH"), now - 29 * day);
    CHECK(store.purge_expired(RetentionPolicy{30}, now) == 1);
    CHECK_FALSE(store.find(key_n(1).tek.bytes).has_value());
    CHECK(store.find(key_n(2).tek.bytes).has_value());
}

TEST_CASE("no duplicate key bytes for any ingest sequence") {
    std::mt19937_64 rng(29);
    auto store = make_store();
    for (int i = 0; i < 300; ++i) {
        std::uint32_t id = static_cast<std::uint32_t>(rng() % 60);
        if (rng() % 2) {
            try {
                store.ingest_local(upload_of({key_n(id)}, {"CH"}, "CH"), i);
            } catch (const Error&) {
            }
        } else {
            store.ingest_remote({key_n(id)}, validate_region_id("IT"), i);
        }
    }
    std::set<KeyBytes> seen;
    for (const auto& e : store.read_all_since(0)) CHECK(seen.insert(e.key.tek.bytes).second);
}

TEST_CASE("journal round-trips the store") {
    TempDir dir;
    auto path = (dir.path / "node.journal").string();
    {
        KeyStore store(static_code_verifier({"CODE"}), std::make_shared<Journal>(path));
        store.ingest_local(upload_of({key_n(1), key_n(2)}, {"CH", "IT"}, "CH", 42), 42);
        store.ingest_remote({key_n(9)}, validate_region_id("IT"), 43);
    }
    KeyStore restored(static_code_verifier({"CODE"}));
    CHECK(restored.replay(Journal::read_lines(path)) == 3);
    CHECK(restored.size() == 3);
    auto e = restored.find(key_n(1).tek.bytes);
    REQUIRE(e.has_value());
    CHECK(e->origin == KeyOrigin::Local);
    CHECK(e->declared_regions.count(validate_region_id("IT")) == 1);
    CHECK(e->stored_at == 42);
    auto r = restored.find(key_n(9).tek.bytes);
    REQUIRE(r.has_value());
    CHECK(r->origin == KeyOrigin::Remote);
    CHECK(r->source_region == validate_region_id("IT"));
}

TEST_CASE("purge rewrites the journal so expired keys do not outlive retention on disk") {
    TempDir dir;
    auto path = (dir.path / "node.journal").string();
    Timestamp day = kSecondsPerDay;
    KeyStore store(static_code_verifier({"CODE"}), std::make_shared<Journal>(path));
    store.ingest_local(upload_of({key_n(1)}, {"CH"}, "CH", 0), 0);
    store.ingest_local(upload_of({key_n(2)}, {"CH"}, "CH", 5 * day), 5 * day);
    store.purge_expired(RetentionPolicy{30}, 31 * day);

    auto lines = Journal::read_lines(path);
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].find(crypto::to_hex(key_n(2).tek.bytes)) != std::string::npos);
    CHECK(lines[0].find(crypto::to_hex(key_n(1).tek.bytes)) == std::string::npos);
}

TEST_CASE("concurrent ingest keeps counts consistent") {
    auto store = make_store();
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&store, w] {
            for (std::uint32_t i = 0; i < 100; ++i) {
                store.ingest_remote({key_n(w * 1000 + i)}, validate_region_id("IT"), 1);
            }
        });
    }
    for (auto& t : workers) t.join();
    CHECK(store.size() == 400);
    CHECK(store.count(KeyOrigin::Remote) == 400);
}
