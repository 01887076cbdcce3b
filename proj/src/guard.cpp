#include "twostream/guard.hpp"

#include <algorithm>

namespace twostream {

using nlohmann::json;

ServerResponse GuardState::step(ClientId client, const Verdict& verdict) {
    ClientRecord& rec = clients_[client];

    // Counter update precedes the membership branch.
    if (verdict.is_accept()) {
        rec.cc = std::max(0, rec.cc - 1);
    } else {
        rec.cc = std::min(kCcMax, rec.cc + 1);
    }

    ServerResponse resp;
    if (rec.blacklisted) {
        if (rec.cc == 0) {
            rec.blacklisted = false;
            if (verdict.is_accept()) {
                resp.kind = ResponseKind::kClassified;
                resp.fine_label = verdict.accepted().fine_label;
                resp.coarse_label = verdict.accepted().coarse_label;
            } else {
                resp.kind = ResponseKind::kRejected;
            }
        } else {
            resp.kind = ResponseKind::kBlocked;
        }
        return resp;
    }

    if (rec.cc >= kBlacklistThreshold) {
        rec.blacklisted = true;
        resp.kind = ResponseKind::kBlocked;
        return resp;
    }

    if (verdict.is_accept()) {
        resp.kind = ResponseKind::kClassified;
        resp.fine_label = verdict.accepted().fine_label;
        resp.coarse_label = verdict.accepted().coarse_label;
    } else {
        resp.kind = ResponseKind::kRejected;
    }
    return resp;
}

int GuardState::cc(ClientId client) const {
    const auto it = clients_.find(client);
    return it == clients_.end() ? 0 : it->second.cc;
}

bool GuardState::blacklisted(ClientId client) const {
    const auto it = clients_.find(client);
    return it != clients_.end() && it->second.blacklisted;
}

json GuardState::snapshot() const {
    json j = json::object();
    for (const auto& [client, rec] : clients_) {
        j[std::to_string(client)] = {{"cc", rec.cc}, {"blacklisted", rec.blacklisted}};
    }
    return j;
}

GuardState GuardState::from_snapshot(const json& j) {
    GuardState state;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const ClientId client = static_cast<ClientId>(std::stoul(it.key()));
        ClientRecord rec;
        rec.cc = it.value().at("cc").get<int>();
        rec.blacklisted = it.value().at("blacklisted").get<bool>();
        if (rec.cc < 0 || rec.cc > kCcMax)
            throw IngestError("guard snapshot: cc out of range for client " + it.key());
        state.clients_[client] = rec;
    }
    return state;
}

std::pair<GuardState, ServerResponse> handle(const GuardState& state, ClientId client,
                                             const Verdict& verdict) {
    GuardState next = state;
    const ServerResponse resp = next.step(client, verdict);
    return {std::move(next), resp};
}

} // namespace twostream
