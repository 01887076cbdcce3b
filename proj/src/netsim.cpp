#include "twostream/netsim.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

#include "twostream/ioutil.hpp"
#include "twostream/rng.hpp"

namespace twostream {

using nlohmann::json;

GuardServerCore::GuardServerCore(const Model& high_net, const Model& low_net,
                                 const MappingTable& table, DetectorConfig detector)
    : high_(high_net), low_(low_net), table_(table), detector_(detector) {}

ClassifyResponse GuardServerCore::handle_request(const ClassifyRequest& request) {
    const Verdict verdict =
        classify_image(high_, low_, request.image, table_, detector_);
    std::lock_guard<std::mutex> lock(mutex_);
    return response_from_server(guard_.step(request.client, verdict));
}

GuardState GuardServerCore::state() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return guard_;
}

// --- socket plumbing -----------------------------------------------------------

namespace {

constexpr std::uint32_t kMaxPayload = 16u << 20;

bool read_exact(int fd, std::uint8_t* buf, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::read(fd, buf + got, n - got);
        if (r <= 0) return false;
        got += static_cast<std::size_t>(r);
    }
    return true;
}

bool write_all(int fd, const std::uint8_t* buf, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        const ssize_t r = ::write(fd, buf + sent, n - sent);
        if (r <= 0) return false;
        sent += static_cast<std::size_t>(r);
    }
    return true;
}

// Reads one whole frame off the stream; empty result on clean EOF.
// Malformed headers raise ProtocolError.
bool read_frame_bytes(int fd, std::vector<std::uint8_t>& out) {
    std::uint8_t header[kFrameHeaderSize];
    if (!read_exact(fd, header, sizeof(header))) return false;
    if (header[0] != kFrameMagic0 || header[1] != kFrameMagic1)
        throw ProtocolError("frame magic: mismatch");
    if (header[2] != kProtocolVersion) throw ProtocolError("frame version: unknown value");
    const std::uint32_t len = static_cast<std::uint32_t>(header[4]) |
                              (static_cast<std::uint32_t>(header[5]) << 8) |
                              (static_cast<std::uint32_t>(header[6]) << 16) |
                              (static_cast<std::uint32_t>(header[7]) << 24);
    if (len > kMaxPayload) throw ProtocolError("frame payload_length: exceeds limit");
    out.assign(kFrameHeaderSize + len, 0);
    std::memcpy(out.data(), header, sizeof(header));
    if (len > 0 && !read_exact(fd, out.data() + kFrameHeaderSize, len))
        throw ProtocolError("frame payload: truncated");
    return true;
}

} // namespace

GuardServer::GuardServer(GuardServerCore& core) : core_(core) {}

GuardServer::~GuardServer() { stop(); }

std::uint16_t GuardServer::start(std::uint16_t port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw SimError("server: cannot create socket");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw SimError("server: cannot bind port " + std::to_string(port));
    }
    if (::listen(listen_fd_, 64) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw SimError("server: listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    return port_;
}

void GuardServer::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) break;
        std::lock_guard<std::mutex> lock(conn_mutex_);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void GuardServer::serve_connection(int fd) {
    std::vector<std::uint8_t> buf;
    try {
        while (running_ && read_frame_bytes(fd, buf)) {
            std::size_t consumed = 0;
            const Frame frame = decode_frame(buf, consumed);
            const ClassifyRequest request = decode_request(frame);
            const ClassifyResponse response = core_.handle_request(request);
            const auto bytes = encode_frame(encode_response(response));
            if (!write_all(fd, bytes.data(), bytes.size())) break;
        }
    } catch (const Error&) {
        // protocol fault or bad request: drop this connection only
    }
    ::close(fd);
}

void GuardServer::stop() {
    if (!running_.exchange(false)) {
        if (listen_fd_ >= 0) {
            ::close(listen_fd_);
            listen_fd_ = -1;
        }
        return;
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lock(conn_mutex_);
    for (auto& t : conn_threads_)
        if (t.joinable()) t.join();
    conn_threads_.clear();
}

SocketClient::SocketClient(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw SimError("client: cannot create socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw SimError("client: bad host " + host);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd_);
        throw SimError("client: cannot connect to " + host + ":" + std::to_string(port));
    }
}

SocketClient::~SocketClient() {
    if (fd_ >= 0) ::close(fd_);
}

ClassifyResponse SocketClient::roundtrip(const ClassifyRequest& request) {
    const auto bytes = encode_frame(encode_request(request));
    if (!write_all(fd_, bytes.data(), bytes.size())) throw SimError("client: send failed");
    std::vector<std::uint8_t> buf;
    if (!read_frame_bytes(fd_, buf)) throw SimError("client: connection closed by server");
    std::size_t consumed = 0;
    return decode_response(decode_frame(buf, consumed));
}

// --- simulation ------------------------------------------------------------------

namespace {

// Both transports push every message through the frame codec so they are
// byte-for-byte interchangeable.
class InProcessTransport {
public:
    explicit InProcessTransport(GuardServerCore& core) : core_(core) {}

    ClassifyResponse roundtrip(const ClassifyRequest& request) {
        std::size_t consumed = 0;
        const Frame req_frame =
            decode_frame(encode_frame(encode_request(request)), consumed);
        const ClassifyResponse response = core_.handle_request(decode_request(req_frame));
        const Frame resp_frame =
            decode_frame(encode_frame(encode_response(response)), consumed);
        return decode_response(resp_frame);
    }

private:
    GuardServerCore& core_;
};

const char* response_tag(ResponseKind kind) {
    switch (kind) {
        case ResponseKind::kBlocked: return "blocked";
        case ResponseKind::kRejected: return "rejected";
        case ResponseKind::kClassified: return "classified";
    }
    return "unknown";
}

} // namespace

SimReport run_sim(const SimConfig& cfg, const SimEnvironment& env) {
    if (cfg.normal_nodes < 0 || cfg.adversarial_nodes < 0 || cfg.images_per_node < 0)
        throw ConfigError("sim: node and image counts must be non-negative");
    if (cfg.adversarial_nodes > 0 && cfg.attack_mix.empty())
        throw ConfigError("sim: adversarial nodes require a non-empty attack mix");
    for (const auto& [spec, weight] : cfg.attack_mix) {
        (void)spec;
        if (weight <= 0.0) throw ConfigError("sim: attack mix weights must be positive");
    }
    if (env.clean_pool.empty()) throw ConfigError("sim: empty clean image pool");

    const int total_nodes = cfg.normal_nodes + cfg.adversarial_nodes;

    // Adversarial nodes draw from the mapped examples only.
    std::vector<int> attackable;
    for (std::size_t i = 0; i < env.clean_pool.size(); ++i)
        if (env.clean_pool.examples[i].coarse_label != MappingTable::kOther)
            attackable.push_back(static_cast<int>(i));
    if (cfg.adversarial_nodes > 0 && attackable.empty())
        throw ConfigError("sim: no attackable examples in the clean pool");

    // Weighted attack assignment per adversarial node.
    Rng mix_rng(derive_seed(cfg.schedule_seed, "mix"));
    double total_weight = 0.0;
    for (const auto& [spec, weight] : cfg.attack_mix) {
        (void)spec;
        total_weight += weight;
    }
    std::vector<int> node_attack(static_cast<std::size_t>(cfg.adversarial_nodes), 0);
    for (int n = 0; n < cfg.adversarial_nodes; ++n) {
        double u = mix_rng.uniform() * total_weight;
        for (std::size_t a = 0; a < cfg.attack_mix.size(); ++a) {
            u -= cfg.attack_mix[a].second;
            if (u <= 0.0 || a + 1 == cfg.attack_mix.size()) {
                node_attack[static_cast<std::size_t>(n)] = static_cast<int>(a);
                break;
            }
        }
    }

    GuardServerCore core(env.high_net, env.low_net, env.table, cfg.detector);
    std::unique_ptr<GuardServer> server;
    std::unique_ptr<SocketClient> socket_client;
    InProcessTransport local(core);
    if (cfg.transport == Transport::kSocket) {
        server = std::make_unique<GuardServer>(core);
        const std::uint16_t port = server->start(0);
        socket_client = std::make_unique<SocketClient>("127.0.0.1", port);
    }
    const auto send = [&](const ClassifyRequest& request) {
        return cfg.transport == Transport::kSocket ? socket_client->roundtrip(request)
                                                   : local.roundtrip(request);
    };

    Rng schedule_rng(derive_seed(cfg.schedule_seed, "schedule"));
    Rng draw_rng(derive_seed(cfg.schedule_seed, "draw"));

    SimReport report;
    std::vector<bool> ever_blacklisted(static_cast<std::size_t>(total_nodes), false);
    std::vector<int> first_blocked_round(static_cast<std::size_t>(total_nodes), 0);
    std::vector<Tensor3> cached_adv(static_cast<std::size_t>(cfg.adversarial_nodes));
    for (const char* tag : {"blocked", "rejected", "classified"}) {
        report.normal_responses[tag] = 0;
        report.adversarial_responses[tag] = 0;
    }

    std::vector<int> order(static_cast<std::size_t>(total_nodes));
    std::iota(order.begin(), order.end(), 0);

    for (int round = 1; round <= cfg.images_per_node; ++round) {
        schedule_rng.shuffle(order);
        for (const int node : order) {
            const bool adversarial = node >= cfg.normal_nodes;
            ClassifyRequest request;
            request.client = static_cast<ClientId>(node);
            if (!adversarial) {
                const int pick = draw_rng.uniform_int(static_cast<int>(env.clean_pool.size()));
                request.image = env.clean_pool.examples[static_cast<std::size_t>(pick)].image_hi;
            } else {
                const int adv_index = node - cfg.normal_nodes;
                if (cfg.reuse_perturbation &&
                    !cached_adv[static_cast<std::size_t>(adv_index)].empty()) {
                    request.image = cached_adv[static_cast<std::size_t>(adv_index)];
                } else {
                    const int pick = draw_rng.uniform_int(static_cast<int>(attackable.size()));
                    const LabeledExample& ex =
                        env.clean_pool.examples[static_cast<std::size_t>(
                            attackable[static_cast<std::size_t>(pick)])];
                    const std::uint64_t salt =
                        (static_cast<std::uint64_t>(node) << 20) | static_cast<std::uint64_t>(round);
                    const AttackSpec& spec =
                        cfg.attack_mix[static_cast<std::size_t>(
                                           node_attack[static_cast<std::size_t>(adv_index)])]
                            .first;
                    request.image =
                        run_attack(spec, env.high_net, env.low_net, ex, salt).adversarial;
                    if (cfg.reuse_perturbation)
                        cached_adv[static_cast<std::size_t>(adv_index)] = request.image;
                }
            }

            ClassifyResponse response;
            try {
                response = send(request);
            } catch (const Error& e) {
                throw SimError("sim: transport failure at round " + std::to_string(round) +
                               " node " + std::to_string(node) + ": " + e.what());
            }
            ++report.images_sent;
            auto& tally = adversarial ? report.adversarial_responses : report.normal_responses;
            ++tally[response_tag(response.kind)];
            if (response.kind == ResponseKind::kBlocked &&
                !ever_blacklisted[static_cast<std::size_t>(node)]) {
                ever_blacklisted[static_cast<std::size_t>(node)] = true;
                first_blocked_round[static_cast<std::size_t>(node)] = round;
            }
        }

        const GuardState state = core.state();
        int normal_black = 0, adv_black = 0;
        for (int node = 0; node < total_nodes; ++node) {
            if (!state.blacklisted(static_cast<ClientId>(node))) continue;
            if (node < cfg.normal_nodes)
                ++normal_black;
            else
                ++adv_black;
        }
        report.normal_blacklisted.push_back(
            cfg.normal_nodes > 0 ? static_cast<double>(normal_black) / cfg.normal_nodes : 0.0);
        if (cfg.adversarial_nodes > 0)
            report.adversarial_blacklisted.push_back(static_cast<double>(adv_black) /
                                                     cfg.adversarial_nodes);
    }

    for (int node = 0; node < cfg.normal_nodes; ++node)
        if (ever_blacklisted[static_cast<std::size_t>(node)]) ++report.false_blacklist_count;
    for (int n = 0; n < cfg.adversarial_nodes; ++n) {
        const int node = cfg.normal_nodes + n;
        if (!ever_blacklisted[static_cast<std::size_t>(node)]) continue;
        const std::string name =
            cfg.attack_mix[static_cast<std::size_t>(node_attack[static_cast<std::size_t>(n)])]
                .first.name();
        report.blacklist_latency[name].push_back(
            first_blocked_round[static_cast<std::size_t>(node)]);
    }

    if (socket_client) socket_client.reset();
    if (server) server->stop();
    return report;
}

void write_sim_trace_csv(const std::filesystem::path& path, const SimReport& report) {
    std::ostringstream out;
    out << "step,class,fraction\n";
    for (std::size_t i = 0; i < report.normal_blacklisted.size(); ++i)
        out << (i + 1) << ",normal," << report.normal_blacklisted[i] << "\n";
    for (std::size_t i = 0; i < report.adversarial_blacklisted.size(); ++i)
        out << (i + 1) << ",adversarial," << report.adversarial_blacklisted[i] << "\n";
    write_file_atomic(path, out.str());
}

json sim_report_to_json(const SimReport& report) {
    json latency = json::object();
    for (const auto& [name, rounds] : report.blacklist_latency) latency[name] = rounds;
    return json{{"normal_blacklisted", report.normal_blacklisted},
                {"adversarial_blacklisted", report.adversarial_blacklisted},
                {"false_blacklist_count", report.false_blacklist_count},
                {"blacklist_latency", latency},
                {"normal_responses", report.normal_responses},
                {"adversarial_responses", report.adversarial_responses},
                {"images_sent", report.images_sent}};
}

json sim_config_to_json(const SimConfig& cfg) {
    json mix = json::array();
    for (const auto& [spec, weight] : cfg.attack_mix)
        mix.push_back({{"spec", attack_spec_to_json(spec)}, {"weight", weight}});
    return json{{"normal_nodes", cfg.normal_nodes},
                {"adversarial_nodes", cfg.adversarial_nodes},
                {"images_per_node", cfg.images_per_node},
                {"attack_mix", mix},
                {"schedule_seed", cfg.schedule_seed},
                {"transport", cfg.transport == Transport::kSocket ? "socket" : "in-process"},
                {"detector",
                 {{"p1", cfg.detector.p1},
                  {"p2", cfg.detector.p2},
                  {"k_high", cfg.detector.k_high},
                  {"k_low", cfg.detector.k_low}}},
                {"reuse_perturbation", cfg.reuse_perturbation}};
}

SimConfig sim_config_from_json(const json& j) {
    SimConfig cfg;
    try {
        if (j.contains("normal_nodes")) cfg.normal_nodes = j.at("normal_nodes").get<int>();
        if (j.contains("adversarial_nodes"))
            cfg.adversarial_nodes = j.at("adversarial_nodes").get<int>();
        if (j.contains("images_per_node"))
            cfg.images_per_node = j.at("images_per_node").get<int>();
        if (j.contains("attack_mix")) {
            for (const json& item : j.at("attack_mix"))
                cfg.attack_mix.emplace_back(attack_spec_from_json(item.at("spec")),
                                            item.at("weight").get<double>());
        }
        if (j.contains("schedule_seed"))
            cfg.schedule_seed = j.at("schedule_seed").get<std::uint64_t>();
        if (j.contains("transport")) {
            const std::string t = j.at("transport").get<std::string>();
            if (t == "socket")
                cfg.transport = Transport::kSocket;
            else if (t == "in-process")
                cfg.transport = Transport::kInProcess;
            else
                throw ConfigError("sim config: unknown transport '" + t + "'");
        }
        if (j.contains("detector")) {
            const json& d = j.at("detector");
            if (d.contains("p1")) cfg.detector.p1 = d.at("p1").get<double>();
            if (d.contains("p2")) cfg.detector.p2 = d.at("p2").get<double>();
            if (d.contains("k_high")) cfg.detector.k_high = d.at("k_high").get<int>();
            if (d.contains("k_low")) cfg.detector.k_low = d.at("k_low").get<int>();
        }
        if (j.contains("reuse_perturbation"))
            cfg.reuse_perturbation = j.at("reuse_perturbation").get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError("sim config: " + std::string(e.what()));
    }
    return cfg;
}

} // namespace twostream
