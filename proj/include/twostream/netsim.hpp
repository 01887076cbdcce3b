#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "twostream/attacks.hpp"
#include "twostream/protocol.hpp"

namespace twostream {

// Detector + guard behind one request handler; shared by both transports.
// Guard transitions are serialized; inference runs outside the lock.
class GuardServerCore {
public:
    GuardServerCore(const Model& high_net, const Model& low_net, const MappingTable& table,
                    DetectorConfig detector);

    ClassifyResponse handle_request(const ClassifyRequest& request);
    GuardState state() const;

private:
    const Model& high_;
    const Model& low_;
    const MappingTable& table_;
    DetectorConfig detector_;
    GuardState guard_;
    mutable std::mutex mutex_;
};

// Blocking length-prefixed TCP server on 127.0.0.1. One thread per
// connection; a malformed frame closes that connection only.
class GuardServer {
public:
    explicit GuardServer(GuardServerCore& core);
    ~GuardServer();

    GuardServer(const GuardServer&) = delete;
    GuardServer& operator=(const GuardServer&) = delete;

    // port 0 picks an ephemeral port; the bound port is returned.
    std::uint16_t start(std::uint16_t port = 0);
    void stop();
    std::uint16_t port() const { return port_; }

private:
    void accept_loop();
    void serve_connection(int fd);

    GuardServerCore& core_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex conn_mutex_;
    std::vector<std::thread> conn_threads_;
};

// Client side of the wire protocol against a running GuardServer.
class SocketClient {
public:
    SocketClient(const std::string& host, std::uint16_t port);
    ~SocketClient();

    SocketClient(const SocketClient&) = delete;
    SocketClient& operator=(const SocketClient&) = delete;

    ClassifyResponse roundtrip(const ClassifyRequest& request);

private:
    int fd_ = -1;
};

enum class Transport { kInProcess, kSocket };

struct SimConfig {
    int normal_nodes = 100;
    int adversarial_nodes = 20;
    int images_per_node = 30;
    std::vector<std::pair<AttackSpec, double>> attack_mix; // spec + weight
    std::uint64_t schedule_seed = 1;
    Transport transport = Transport::kInProcess;
    DetectorConfig detector;
    bool reuse_perturbation = false; // resend one perturbed image vs attack fresh draws
};

struct SimReport {
    // Fraction of each node class blacklisted after every node sent its n-th image.
    std::vector<double> normal_blacklisted;
    std::vector<double> adversarial_blacklisted;
    int false_blacklist_count = 0; // normal nodes ever blacklisted
    // attack name -> rounds-until-first-blacklist, ascending node id order
    std::map<std::string, std::vector<int>> blacklist_latency;
    std::map<std::string, long> normal_responses;      // blocked/rejected/classified
    std::map<std::string, long> adversarial_responses;
    long images_sent = 0;

    bool operator==(const SimReport&) const = default;
};

struct SimEnvironment {
    const Model& high_net;
    const Model& low_net;
    const MappingTable& table;
    const Dataset& clean_pool; // held-out clean images (test split)
};

// Seeded rounds: every node sends one image per round in a seeded order;
// normal nodes send clean draws, adversarial nodes attack fresh clean draws
// with their assigned spec. Deterministic per seed for either transport.
SimReport run_sim(const SimConfig& cfg, const SimEnvironment& env);

// trace CSV: step,class,fraction (adversarial series absent when no such nodes)
void write_sim_trace_csv(const std::filesystem::path& path, const SimReport& report);
nlohmann::json sim_report_to_json(const SimReport& report);

nlohmann::json sim_config_to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);

} // namespace twostream
