#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "enfed/registry.hpp"

namespace enfed {

// Transport-level status codes, shared by the in-process binding and the
// HTTP binding.
namespace status {
constexpr int ok = 200;
constexpr int no_content = 204;  // feed END marker
constexpr int bad_request = 400;
constexpr int unauthorized = 401;
constexpr int forbidden = 403;
constexpr int not_found = 404;
constexpr int gone = 410;
constexpr int server_error = 500;
}  // namespace status

struct Response {
    int status = status::server_error;
    std::string body;
    // END: next chunk to ask for once data exists. GONE: oldest retained chunk.
    std::optional<std::uint64_t> next_hint;
};

// What a consumer presents to authenticate itself: its certificate chain and
// the key matching the region certificate.
struct ClientCredential {
    CertChain chain;
    crypto::SigningKey key;
};

// A backend endpoint surface, independent of how requests arrive.
class RequestHandler {
public:
    virtual ~RequestHandler() = default;
    virtual Response handle(const std::string& method, const std::string& path, const std::string& body,
                            const std::optional<ClientIdentity>& identity) = 0;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual Response get(const std::string& base_url, const std::string& path,
                         const ClientCredential* credential) = 0;
    virtual Response post(const std::string& base_url, const std::string& path, const std::string& body,
                          const ClientCredential* credential) = 0;
};

// Observes every response a transport delivers, for traffic accounting.
using TrafficObserver =
    std::function<void(const std::string& base_url, const std::string& path, const Response&)>;

// In-process channel: the same request/response contract as the HTTP
// binding, with the peer's certificate chain verified against the federation
// root before the handler sees an identity. No sockets involved.
class InProcessTransport : public Transport {
public:
    explicit InProcessTransport(crypto::PublicKey trusted_root) : trusted_root_(trusted_root) {}

    void bind(const std::string& base_url, RequestHandler* handler) { handlers_[base_url] = handler; }
    void set_observer(TrafficObserver observer) { observer_ = std::move(observer); }

    Response get(const std::string& base_url, const std::string& path,
                 const ClientCredential* credential) override {
        return dispatch("GET", base_url, path, "", credential);
    }

    Response post(const std::string& base_url, const std::string& path, const std::string& body,
                  const ClientCredential* credential) override {
        return dispatch("POST", base_url, path, body, credential);
    }

private:
    struct AuthOutcome {
        bool ok = false;
        ClientIdentity identity;
        std::string reason;
    };

    // One verification per distinct chain, like a TLS session cache: the
    // chain is an immutable value, so its verdict never changes.
    const AuthOutcome& authenticate(const CertChain& chain) {
        auto bytes = encode_chain(chain);
        auto digest = crypto::hash16(bytes.data(), bytes.size());
        auto it = auth_cache_.find(digest);
        if (it != auth_cache_.end()) return it->second;
        AuthOutcome outcome;
        auto verdict = verify_chain(chain, trusted_root_);
        outcome.ok = verdict.valid;
        outcome.reason = verdict.reason;
        if (verdict.valid) outcome.identity = identity_from_chain(chain);
        return auth_cache_.emplace(digest, std::move(outcome)).first->second;
    }

    Response dispatch(const std::string& method, const std::string& base_url, const std::string& path,
                      const std::string& body, const ClientCredential* credential) {
        Response resp;
        auto it = handlers_.find(base_url);
        if (it == handlers_.end()) {
            resp = {status::server_error, "no such backend: " + base_url, std::nullopt};
        } else {
            std::optional<ClientIdentity> identity;
            if (credential) {
                const AuthOutcome& outcome = authenticate(credential->chain);
                if (!outcome.ok) {
                    resp = {status::unauthorized, "certificate chain rejected: " + outcome.reason,
                            std::nullopt};
                    if (observer_) observer_(base_url, path, resp);
                    return resp;
                }
                identity = outcome.identity;
            }
            resp = it->second->handle(method, path, body, identity);
        }
        if (observer_) observer_(base_url, path, resp);
        return resp;
    }

    crypto::PublicKey trusted_root_{};
    std::map<std::string, RequestHandler*> handlers_;
    std::map<crypto::Digest16, AuthOutcome> auth_cache_;
    TrafficObserver observer_;
};

}  // namespace enfed
