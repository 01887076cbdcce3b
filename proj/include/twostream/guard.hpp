#pragma once

#include <cstdint>
#include <map>
#include <utility>

#include <json.hpp>

#include "twostream/detector.hpp"

namespace twostream {

using ClientId = std::uint32_t;

enum class ResponseKind : std::uint8_t { kBlocked = 0, kRejected = 1, kClassified = 2 };

struct ServerResponse {
    ResponseKind kind = ResponseKind::kRejected;
    int fine_label = 0;   // meaningful only when kind == kClassified
    int coarse_label = 0;

    bool operator==(const ServerResponse&) const = default;
};

struct ClientRecord {
    int cc = 0; // confidence counter in [0, 15]
    bool blacklisted = false;

    bool operator==(const ClientRecord&) const = default;
};

// Per-client reputation state machine. Every image updates the sender's
// confidence counter (flagged -> +1, clean -> -1, clamped to [0, 15]);
// reaching 3 while unlisted blacklists the sender, returning to 0 while
// listed removes it again.
class GuardState {
public:
    static constexpr int kCcMax = 15;
    static constexpr int kBlacklistThreshold = 3;

    // Applies one verdict in place and returns the response for the sender.
    // Unknown clients are materialized with cc = 0.
    ServerResponse step(ClientId client, const Verdict& verdict);

    int cc(ClientId client) const;
    bool blacklisted(ClientId client) const;
    const std::map<ClientId, ClientRecord>& clients() const { return clients_; }

    nlohmann::json snapshot() const;
    static GuardState from_snapshot(const nlohmann::json& j);

    bool operator==(const GuardState&) const = default;

private:
    std::map<ClientId, ClientRecord> clients_;
};

// Pure transition form of GuardState::step.
std::pair<GuardState, ServerResponse> handle(const GuardState& state, ClientId client,
                                             const Verdict& verdict);

} // namespace twostream
