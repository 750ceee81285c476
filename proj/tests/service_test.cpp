#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "enfed/service.hpp"

using namespace enfed;

namespace {

DiagnosisKey key_n(std::uint32_t n, DayIndex day = 1) {
    DiagnosisKey k;
    k.tek.valid_day = day;
    for (int i = 0; i < 4; ++i) k.tek.bytes[i] = static_cast<std::uint8_t>(n >> (8 * i));
    k.tek.bytes[12] = 0x5a;
    return k;
}

// Three-region federation (AA, BB, CC) on the in-process transport.
struct Federation {
    crypto::SigningKey root_key = crypto::SigningKey::from_label("root");
    CertRecord root = make_root_cert(root_key, "FED-ROOT");
    InProcessTransport hub{root_key.pub};
    Timestamp now = 0;

    std::map<std::string, crypto::SigningKey> region_keys;
    std::map<std::string, crypto::SigningKey> feed_keys;
    std::map<std::string, ClientCredential> credentials;
    std::map<std::string, std::unique_ptr<BackendNode>> nodes;

    void add_region(const std::string& code) {
        region_keys.emplace(code, crypto::SigningKey::from_label("region-" + code));
        feed_keys.emplace(code, crypto::SigningKey::from_label("feed-" + code));
        CertChain chain{root, std::nullopt,
                        issue_cert(CertKind::Region, code, region_keys.at(code).pub, "FED-ROOT", root_key)};
        credentials.emplace(code, ClientCredential{chain, region_keys.at(code)});
    }

    BackendNodeConfig base_config(const std::string& code) {
        BackendNodeConfig cfg;
        cfg.region = validate_region_id(code);
        cfg.base_url = "inproc://" + code;
        cfg.upload_codes = {"CODE"};
        cfg.feed_signing_key = feed_keys.at(code);
        cfg.credential = credentials.at(code);
        cfg.clock = [this] { return now; };
        return cfg;
    }

    BackendNode& spawn(BackendNodeConfig cfg) {
        auto code = cfg.region.code();
        auto node = std::make_unique<BackendNode>(std::move(cfg), hub);
        hub.bind(node->config().base_url, node.get());
        node->materialize_acl_feeds();
        auto [it, inserted] = nodes.insert_or_assign(code, std::move(node));
        return *it->second;
    }

    PeerConfig peer(const std::string& consumer, const std::string& producer, ReplicationType type) {
        PeerConfig cfg;
        cfg.region_id = validate_region_id(producer);
        cfg.remote_region_url = "inproc://" + producer;
        cfg.replication_type = type;
        cfg.verification_keys = std::set<crypto::PublicKey>{feed_keys.at(producer).pub};
        cfg.client_certificate = credentials.at(consumer);
        return cfg;
    }
};

std::string upload_body(std::vector<DiagnosisKey> keys, std::vector<std::string> regions,
                        const std::string& b, const std::string& code = "CODE") {
    DiagnosisKeyUpload u;
    u.keys = std::move(keys);
    for (const auto& r : regions) u.declared_regions.insert(validate_region_id(r));
    u.testing_region = validate_region_id(b);
    u.upload_time = 50;
    u.authorization_code = code;
    auto bytes = encode_upload(u);
    return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace

TEST_CASE("upload endpoint: receipt, dedup, authorization, malformed body") {
    Federation fed;
    fed.add_region("BB");
    auto& node = fed.spawn(fed.base_config("BB"));

    std::vector<DiagnosisKey> keys;
    for (std::uint32_t i = 0; i < 14; ++i) keys.push_back(key_n(i));
    auto body = upload_body(keys, {"AA", "BB"}, "BB");

    auto resp = node.handle("POST", "/v1/keys", body, std::nullopt);
    CHECK(resp.status == status::ok);
    CHECK(resp.body == "{\"stored\":14}");

    auto again = node.handle("POST", "/v1/keys", body, std::nullopt);
    CHECK(again.status == status::ok);
    CHECK(again.body == "{\"stored\":0}");

    auto bad_code = node.handle("POST", "/v1/keys", upload_body({key_n(99)}, {"BB"}, "BB", "WRONG"),
                                std::nullopt);
    CHECK(bad_code.status == status::unauthorized);

    CHECK(node.handle("POST", "/v1/keys", "garbage", std::nullopt).status == status::bad_request);
    // Declared set missing the testing region.
    CHECK(node.handle("POST", "/v1/keys", upload_body({key_n(98)}, {"AA"}, "BB"), std::nullopt).status ==
          status::bad_request);
}

TEST_CASE("public feed is open, backend feeds demand identity and authorization") {
    Federation fed;
    fed.add_region("BB");
    fed.add_region("AA");
    fed.add_region("CC");
    auto cfg = fed.base_config("BB");
    cfg.acl.allow(FeedId::a2a(), "AA");
    auto& node = fed.spawn(std::move(cfg));
    node.allow_peer_region(validate_region_id("AA"));

    node.handle("POST", "/v1/keys", upload_body({key_n(1)}, {"AA", "BB"}, "BB"), std::nullopt);
    node.tick_produce(0);

    ClientIdentity aa{"AA", {"FED-ROOT"}};
    ClientIdentity cc{"CC", {"FED-ROOT"}};

    // Public: anonymous works.
    auto pub = node.handle("GET", "/v1/keys", "", std::nullopt);
    REQUIRE(pub.status == status::ok);
    CHECK(decode_batch(pub.body).keys.size() == 1);
    CHECK(node.handle("GET", "/v1/keys/2", "", std::nullopt).status == status::no_content);

    // a2a: anonymous rejected, listed identity admitted, others refused.
    CHECK(node.handle("GET", "/v1/a2a/keys", "", std::nullopt).status == status::unauthorized);
    CHECK(node.handle("GET", "/v1/a2a/keys", "", aa).status == status::ok);
    CHECK(node.handle("GET", "/v1/a2a/keys", "", cc).status == status::forbidden);

    // per-region: only the region's own backend.
    CHECK(node.handle("GET", "/v1/AA/keys", "", aa).status == status::ok);
    CHECK(node.handle("GET", "/v1/AA/keys", "", cc).status == status::forbidden);
    CHECK(node.handle("GET", "/v1/AA/keys", "", std::nullopt).status == status::unauthorized);

    // Authorization runs before any feed lookup: CC asking for an
    // unmaterialized foreign feed is refused, not told the feed is missing.
    CHECK(node.handle("GET", "/v1/ZZ/keys", "", cc).status == status::forbidden);
    ClientIdentity zz{"ZZ", {"FED-ROOT"}};
    CHECK(node.handle("GET", "/v1/ZZ/keys", "", zz).status == status::not_found);
}

TEST_CASE("unknown endpoints and malformed chunk numbers") {
    Federation fed;
    fed.add_region("BB");
    auto& node = fed.spawn(fed.base_config("BB"));

    CHECK(node.handle("GET", "/v2/keys", "", std::nullopt).status == status::not_found);
    CHECK(node.handle("GET", "/v1", "", std::nullopt).status == status::not_found);
    CHECK(node.handle("GET", "/v1/keys/abc", "", std::nullopt).status == status::bad_request);
    CHECK(node.handle("GET", "/v1/keys/1/2", "", std::nullopt).status == status::not_found);
    CHECK(node.handle("GET", "/v1/keys/99999999999999999999999", "", std::nullopt).status ==
          status::bad_request);
}

TEST_CASE("in-process transport authenticates chains before the node sees an identity") {
    Federation fed;
    fed.add_region("BB");
    fed.add_region("AA");
    auto& node = fed.spawn(fed.base_config("BB"));
    node.allow_peer_region(validate_region_id("AA"));
    node.tick_produce(0);

    // Genuine credential: request reaches the feed.
    auto ok = fed.hub.get("inproc://BB", "/v1/AA/keys", &fed.credentials.at("AA"));
    CHECK(ok.status == status::no_content);

    // Forged chain: rejected at the transport, handler never consulted.
    auto rogue = crypto::SigningKey::from_label("rogue-root");
    CertChain forged{make_root_cert(rogue, "FED-ROOT"), std::nullopt,
                     issue_cert(CertKind::Region, "AA", fed.region_keys.at("AA").pub, "FED-ROOT", rogue)};
    ClientCredential bad{forged, fed.region_keys.at("AA")};
    CHECK(fed.hub.get("inproc://BB", "/v1/AA/keys", &bad).status == status::unauthorized);
}

TEST_CASE("two-node replication: partial feed flows into the remote partition") {
    Federation fed;
    fed.add_region("AA");
    fed.add_region("BB");
    fed.add_region("CC");

    auto& bb = fed.spawn(fed.base_config("BB"));
    bb.allow_peer_region(validate_region_id("AA"));
    bb.allow_peer_region(validate_region_id("CC"));

    auto aa_cfg = fed.base_config("AA");
    aa_cfg.peers.push_back(fed.peer("AA", "BB", ReplicationType::Partial));
    auto& aa = fed.spawn(std::move(aa_cfg));
    aa.allow_peer_region(validate_region_id("BB"));

    auto cc_cfg = fed.base_config("CC");
    cc_cfg.peers.push_back(fed.peer("CC", "BB", ReplicationType::Partial));
    auto& cc = fed.spawn(std::move(cc_cfg));

    // Upload at BB declaring {AA, BB}: need-to-know says only AA gets it.
    std::vector<DiagnosisKey> keys;
    for (std::uint32_t i = 0; i < 14; ++i) keys.push_back(key_n(i));
    bb.handle("POST", "/v1/keys", upload_body(keys, {"AA", "BB"}, "BB"), std::nullopt);

    bb.tick_produce(fed.now);
    aa.tick_consume(fed.now);
    cc.tick_consume(fed.now);

    CHECK(aa.store().count(KeyOrigin::Remote) == 14);
    CHECK(cc.store().count(KeyOrigin::Remote) == 0);

    // The keys surface on AA's public feed at its next build, and never on
    // AA's backend feeds: remote keys are not re-exported.
    fed.now += 900;
    aa.tick_produce(fed.now);
    auto pub = aa.handle("GET", "/v1/keys", "", std::nullopt);
    REQUIRE(pub.status == status::ok);
    CHECK(decode_batch(pub.body).keys.size() == 14);
    ClientIdentity bb_id{"BB", {"FED-ROOT"}};
    CHECK(aa.handle("GET", "/v1/BB/keys", "", bb_id).status == status::no_content);
}

TEST_CASE("responses on every feed carry no declared-region bytes") {
    Federation fed;
    fed.add_region("AA");
    fed.add_region("BB");
    auto cfg = fed.base_config("BB");
    cfg.acl.allow(FeedId::a2a(), "AA");
    auto& bb = fed.spawn(std::move(cfg));
    bb.allow_peer_region(validate_region_id("AA"));

    std::vector<DiagnosisKey> keys;
    for (std::uint32_t i = 0; i < 5; ++i) keys.push_back(key_n(i));
    auto body = upload_body(keys, {"AA", "BB"}, "BB");
    // The upload body itself carries the declarations; that is the only place
    // they may appear.
    CHECK(body.find("AABB") != std::string::npos);
    bb.handle("POST", "/v1/keys", body, std::nullopt);
    bb.tick_produce(0);

    ClientIdentity aa{"AA", {"FED-ROOT"}};
    for (const std::string path : {"/v1/keys", "/v1/a2a/keys", "/v1/AA/keys"}) {
        auto resp = bb.handle("GET", path, "", aa);
        REQUIRE(resp.status == status::ok);
        auto info = batch_information_bytes(resp.body);
        CHECK(info.find("AA") == std::string_view::npos);
        CHECK(info.find("BB") == std::string_view::npos);
        CHECK(info.find("AA,BB") == std::string_view::npos);
    }
}

TEST_CASE("tick cadence: builds and purges run on their own intervals") {
    Federation fed;
    fed.add_region("BB");
    auto cfg = fed.base_config("BB");
    cfg.build_interval = 900;
    auto& node = fed.spawn(std::move(cfg));

    auto r0 = node.tick_produce(0);
    CHECK(r0.new_batches.empty());

    node.handle("POST", "/v1/keys", upload_body({key_n(1)}, {"BB"}, "BB"), std::nullopt);
    auto r1 = node.tick_produce(100);  // before the next build slot
    CHECK(r1.new_batches.empty());
    auto r2 = node.tick_produce(900);
    CHECK(r2.new_batches.size() == 2);  // public + a2a

    // A node with no peers performs no consumer activity.
    CHECK(node.tick_consume(900).polls.empty());
}

TEST_CASE("journaled node restarts with store, cursor and feed numbering intact") {
    Federation fed;
    fed.add_region("AA");
    fed.add_region("BB");
    auto dir = std::filesystem::temp_directory_path() /
               ("enfed-node-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(dir);

    auto& bb = fed.spawn(fed.base_config("BB"));
    bb.allow_peer_region(validate_region_id("AA"));

    auto aa_journal = (dir / "aa.journal").string();
    auto make_aa = [&]() {
        auto cfg = fed.base_config("AA");
        cfg.peers.push_back(fed.peer("AA", "BB", ReplicationType::Partial));
        cfg.journal_path = aa_journal;
        return cfg;
    };

    // First life: ingest two batches from BB, build own public feed.
    bb.handle("POST", "/v1/keys", upload_body({key_n(1)}, {"AA", "BB"}, "BB"), std::nullopt);
    bb.tick_produce(0);
    {
        auto& aa = fed.spawn(make_aa());
        aa.tick_consume(0);
        aa.tick_produce(0);
        CHECK(aa.store().count(KeyOrigin::Remote) == 1);
        CHECK(aa.producer().newest_batch_id(FeedId::public_feed()) == 1);
    }

    // Second life: nothing re-ingested, numbering moves forward, a peer that
    // was already drained stays drained.
    bb.handle("POST", "/v1/keys", upload_body({key_n(2)}, {"AA", "BB"}, "BB"), std::nullopt);
    fed.now += 900;
    bb.tick_produce(fed.now);
    {
        auto& aa = fed.spawn(make_aa());
        CHECK(aa.store().count(KeyOrigin::Remote) == 1);
        auto report = aa.tick_consume(fed.now);
        REQUIRE(report.polls.size() == 1);
        CHECK(report.polls[0].poll.keys_ingested == 1);
        CHECK(aa.store().count(KeyOrigin::Remote) == 2);

        aa.tick_produce(fed.now);
        // Restarted producer repacks the store under a fresh batch id; the
        // old id 1 is gone, not reissued.
        CHECK(aa.producer().newest_batch_id(FeedId::public_feed()) == 2);
        auto oldest = aa.handle("GET", "/v1/keys", "", std::nullopt);
        REQUIRE(oldest.status == status::ok);
        CHECK(decode_batch(oldest.body).batch_id == 2);
        CHECK(decode_batch(oldest.body).keys.size() == 2);
        CHECK(aa.handle("GET", "/v1/keys/1", "", std::nullopt).status == status::gone);
    }

    std::filesystem::remove_all(dir);
}
