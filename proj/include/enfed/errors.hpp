#pragma once

#include <stdexcept>
#include <string>

namespace enfed {

enum class Errc {
    malformed_region_id,
    invalid_history,
    unauthorized_upload,
    malformed_upload,
    invalid_cursor,
    malformed_batch,
    signing_failure,
    unknown_feed,
    peer_unreachable,
    bad_signature,
    format_error,
    gone_batch,
    not_found,
    invalid_scenario,
    bad_config,
    io_error,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::malformed_region_id: return "MalformedRegionId";
        case Errc::invalid_history: return "InvalidHistory";
        case Errc::unauthorized_upload: return "UnauthorizedUpload";
        case Errc::malformed_upload: return "MalformedUpload";
        case Errc::invalid_cursor: return "InvalidCursor";
        case Errc::malformed_batch: return "MalformedBatch";
        case Errc::signing_failure: return "SigningFailure";
        case Errc::unknown_feed: return "UnknownFeed";
        case Errc::peer_unreachable: return "PeerUnreachable";
        case Errc::bad_signature: return "BadSignature";
        case Errc::format_error: return "FormatError";
        case Errc::gone_batch: return "GoneBatch";
        case Errc::not_found: return "NotFound";
        case Errc::invalid_scenario: return "InvalidScenario";
        case Errc::bad_config: return "BadConfig";
        case Errc::io_error: return "IoError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

}  // namespace enfed
