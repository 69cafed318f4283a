#include "fedbench/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <map>
#include <thread>

namespace fedbench::net {
namespace {

using Clock = std::chrono::steady_clock;
using wire::ErrorCode;
using wire::ProtocolError;

std::string errno_text(const char* what) {
    return std::string(what) + ": " + std::strerror(errno);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    const std::string node = host.empty() || host == "*" ? "0.0.0.0" : host;
    if (int rc = ::getaddrinfo(node.c_str(), nullptr, &hints, &found); rc != 0 || !found)
        throw std::runtime_error("cannot resolve '" + host + "': " + ::gai_strerror(rc));
    sockaddr_in addr{};
    std::memcpy(&addr, found->ai_addr, sizeof(addr));
    ::freeaddrinfo(found);
    addr.sin_port = htons(port);
    return addr;
}

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return static_cast<int>(std::clamp<long long>(left, 0, 1'000'000'000));
}

Vector<double> to_vector(const std::vector<float>& v) {
    Vector<double> out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

std::vector<float> to_floats(const Vector<double>& v) {
    std::vector<float> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    return out;
}

}  // namespace

std::pair<std::string, std::uint16_t> parse_address(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("address must be host:port, got '" + address + "'");
    const std::string port_text = address.substr(colon + 1);
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(port_text, &used);
        if (used != port_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw std::invalid_argument("bad port in address '" + address + "'");
    }
    if (port > 65535) throw std::invalid_argument("port out of range in '" + address + "'");
    return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

Connection::Connection(Connection&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), reader_(std::move(other.reader_)) {}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
        reader_ = std::move(other.reader_);
    }
    return *this;
}

Connection::~Connection() { close(); }

void Connection::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

Connection Connection::connect_to(const std::string& host, std::uint16_t port) {
    const auto addr = resolve(host, port);
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error(errno_text("socket"));
    Connection conn(fd);
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
        throw std::runtime_error(errno_text("connect"));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return conn;
}

std::size_t Connection::send(const wire::Message& msg) { return send_bytes(wire::encode_frame(msg)); }

std::size_t Connection::send_bytes(const std::vector<std::uint8_t>& frame) {
    std::size_t sent = 0;
    while (sent < frame.size()) {
        const auto n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(errno_text("send"));
        }
        sent += static_cast<std::size_t>(n);
    }
    return frame.size();
}

bool Connection::pump() {
    std::uint8_t buf[65536];
    const auto n = ::recv(fd_, buf, sizeof(buf), MSG_DONTWAIT);
    if (n > 0) {
        reader_.feed({buf, static_cast<std::size_t>(n)});
        return true;
    }
    if (n == 0) return false;
    return errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR;
}

std::optional<wire::Message> Connection::receive(std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    while (true) {
        if (auto msg = reader_.next()) return msg;
        pollfd p{fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc < 0 && errno != EINTR) throw ProtocolError(errno_text("poll"));
        if (rc == 0) return std::nullopt;
        if (rc > 0 && !pump()) throw ProtocolError("connection closed by peer");
    }
}

Listener::Listener(const std::string& host, std::uint16_t port) {
    const auto addr = resolve(host, port);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error(errno_text("socket"));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        const auto msg = errno_text("bind");
        ::close(fd_);
        throw std::runtime_error(msg);
    }
    if (::listen(fd_, 64) != 0) {
        const auto msg = errno_text("listen");
        ::close(fd_);
        throw std::runtime_error(msg);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
}

Listener::~Listener() {
    if (fd_ >= 0) ::close(fd_);
}

Connection Listener::accept() {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw std::runtime_error(errno_text("accept"));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Connection(fd);
}

Aggregator::Aggregator(const FederationConfig& cfg, const Dataset& train, const Dataset& test,
                       const std::string& bind_address, NetOptions options)
    : cfg_(cfg),
      train_(train),
      test_(test),
      options_(options),
      listener_(parse_address(bind_address).first, parse_address(bind_address).second) {
    cfg_.precision = WirePrecision::f32;
    cfg_.validate();
}

namespace {

void reject(Connection& conn, ErrorCode code, const std::string& why) {
    try {
        conn.send(wire::Error{code, why});
    } catch (const std::exception&) {
    }
    conn.close();
}

void broadcast_error(std::map<std::uint32_t, Connection>& clients, ErrorCode code, const std::string& why) {
    for (auto& [id, conn] : clients) reject(conn, code, why);
}

}  // namespace

AggregatorReport Aggregator::run() {
    AggregatorReport report;
    const auto plan = federation_plan(cfg_, train_);
    const auto shards = client_shards(cfg_, train_, plan);
    AggregatorCore core(cfg_, test_);
    const std::size_t n = cfg_.num_clients;
    const std::size_t d = core.dim();
    const bool fedcurv = cfg_.algo.kind == AlgorithmKind::fedcurv;

    std::map<std::uint32_t, Connection> clients;

    // Validates a JOIN from `conn` and either admits or rejects it.
    auto admit = [&](Connection conn, const wire::Message& msg) {
        const auto* join = std::get_if<wire::Join>(&msg);
        if (!join) return reject(conn, ErrorCode::protocol, "expected JOIN");
        if (join->version != wire::kProtocolVersion)
            return reject(conn, ErrorCode::version_mismatch,
                          "protocol version " + std::to_string(join->version) + " not supported");
        if (join->dim != d)
            return reject(conn, ErrorCode::dimension_mismatch,
                          "model has " + std::to_string(d) + " parameters, client expects " + std::to_string(join->dim));
        if (join->client_id >= n)
            return reject(conn, ErrorCode::bad_client_id, "client_id " + std::to_string(join->client_id) + " out of range");
        if (clients.contains(join->client_id))
            return reject(conn, ErrorCode::duplicate_client,
                          "client_id " + std::to_string(join->client_id) + " already joined");
        const auto& shard = shards[join->client_id];
        conn.send(wire::JoinAck{join->client_id, static_cast<std::uint32_t>(shard.size()), shard_digest(shard)});
        clients.emplace(join->client_id, std::move(conn));
    };

    // Late arrivals get one short chance to say JOIN, then are refused.
    auto refuse_late = [&] {
        auto conn = listener_.accept();
        ++report.rejected_joins;
        try {
            (void)conn.receive(std::chrono::milliseconds(2000));
        } catch (const std::exception&) {
        }
        reject(conn, ErrorCode::federation_full, "federation already has " + std::to_string(n) + " collaborators");
    };

    try {
        const auto join_deadline = Clock::now() + options_.join_timeout;
        std::vector<Connection> pending;
        while (clients.size() < n) {
            std::vector<pollfd> fds{{listener_.fd(), POLLIN, 0}};
            for (auto& c : pending) fds.push_back({c.fd(), POLLIN, 0});
            const int rc = ::poll(fds.data(), fds.size(), remaining_ms(join_deadline));
            if (rc == 0) throw ProtocolError("timeout: only " + std::to_string(clients.size()) + " of " +
                                             std::to_string(n) + " collaborators joined");
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError(errno_text("poll"));
            }
            for (std::size_t i = fds.size(); i-- > 1;) {
                if (!fds[i].revents) continue;
                auto& conn = pending[i - 1];
                std::optional<wire::Message> msg;
                bool dropped = false;
                try {
                    if (!conn.pump()) dropped = true;
                    msg = conn.next();
                } catch (const ProtocolError& e) {
                    reject(conn, ErrorCode::protocol, e.what());
                    dropped = true;
                }
                if (msg && !dropped) {
                    admit(std::move(conn), *msg);
                    dropped = true;
                }
                if (dropped) pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i - 1));
            }
            if (fds[0].revents & POLLIN) pending.push_back(listener_.accept());
        }

        while (!core.finished()) {
            const auto start = Clock::now();
            const ModelBroadcast model = core.broadcast();
            wire::Model out;
            out.round = static_cast<std::uint32_t>(model.round);
            out.params = to_floats(model.params);
            if (model.sum_fisher) {
                out.sum_fisher = to_floats(*model.sum_fisher);
                out.sum_fisher_params = to_floats(*model.sum_fisher_params);
            }
            const auto frame = wire::encode_frame(out);
            std::uint64_t bytes_down = 0;
            for (auto& [id, conn] : clients) bytes_down += conn.send_bytes(frame);

            std::map<std::uint32_t, ClientUpdate> received;
            std::uint64_t bytes_up = 0;
            const auto deadline = Clock::now() + options_.round_timeout;
            while (received.size() < n) {
                std::vector<pollfd> fds{{listener_.fd(), POLLIN, 0}};
                std::vector<std::uint32_t> ids;
                for (auto& [id, conn] : clients)
                    if (!received.contains(id)) {
                        fds.push_back({conn.fd(), POLLIN, 0});
                        ids.push_back(id);
                    }
                const int rc = ::poll(fds.data(), fds.size(), remaining_ms(deadline));
                if (rc == 0) {
                    std::string missing;
                    for (auto id : ids) missing += (missing.empty() ? "" : ",") + std::to_string(id);
                    const auto why = "timeout waiting for UPDATE in round " + std::to_string(model.round) +
                                     " from clients [" + missing + "]";
                    broadcast_error(clients, ErrorCode::timeout, why);
                    throw ProtocolError(why);
                }
                if (rc < 0) {
                    if (errno == EINTR) continue;
                    throw ProtocolError(errno_text("poll"));
                }
                if (fds[0].revents & POLLIN) refuse_late();
                for (std::size_t i = 1; i < fds.size(); ++i) {
                    if (!fds[i].revents) continue;
                    const auto id = ids[i - 1];
                    auto& conn = clients.at(id);
                    if (!conn.pump()) throw ProtocolError("collaborator " + std::to_string(id) + " disconnected");
                    while (auto msg = conn.next()) {
                        const auto* up = std::get_if<wire::Update>(&*msg);
                        if (!up) throw ProtocolError("collaborator " + std::to_string(id) + " sent an unexpected message");
                        if (up->client_id != id || up->round != model.round || up->params.size() != d ||
                            up->fisher.has_value() != fedcurv || up->sample_count < 1)
                            throw ProtocolError("collaborator " + std::to_string(id) + " sent an inconsistent UPDATE");
                        ClientUpdate u;
                        u.client_id = id;
                        u.sample_count = up->sample_count;
                        u.local_loss = up->local_loss;
                        u.params = to_vector(up->params);
                        if (up->fisher) {
                            u.fisher = FisherDiagonal<double>{to_vector(*up->fisher), up->sample_count};
                            u.fisher_times_params = to_vector(*up->fisher_times_params);
                        }
                        bytes_up += wire::update_frame_size(d, fedcurv);
                        received[id] = std::move(u);
                    }
                }
            }

            std::vector<ClientUpdate> updates;
            for (auto& [id, u] : received) updates.push_back(std::move(u));
            bytes_down += n * wire::round_done_frame_size();
            auto row = core.finish_round(std::move(updates), bytes_up, bytes_down,
                                         std::chrono::duration<double, std::milli>(Clock::now() - start).count());
            if (row) report.metrics.push_back(*row);
            ++report.rounds_completed;
            const wire::RoundDone done{static_cast<std::uint32_t>(model.round), params_digest(core.global())};
            for (auto& [id, conn] : clients) conn.send(done);
        }
        for (auto& [id, conn] : clients) conn.send(wire::Shutdown{});
        report.ok = true;
    } catch (const std::exception& e) {
        report.error = e.what();
        broadcast_error(clients, ErrorCode::protocol, report.error);
    }
    report.final_params = core.global();
    return report;
}

AggregatorReport serve_aggregator(const FederationConfig& cfg, const Dataset& train, const Dataset& test,
                                  const std::string& bind_address, NetOptions options) {
    Aggregator aggregator(cfg, train, test, bind_address, options);
    return aggregator.run();
}

CollaboratorReport run_collaborator(const std::string& address, std::uint32_t client_id, const Dataset& shard,
                                    const FederationConfig& cfg, NetOptions options) {
    CollaboratorReport report;
    try {
        FederationConfig wire_cfg = cfg;
        wire_cfg.precision = WirePrecision::f32;
        const auto [host, port] = parse_address(address);
        const std::size_t d = parameter_count(wire_cfg.model);

        Connection conn;
        for (int attempt = 0;; ++attempt) {
            try {
                conn = Connection::connect_to(host, port);
                break;
            } catch (const std::exception& e) {
                if (attempt >= options.connect_retries)
                    throw std::runtime_error("giving up after " + std::to_string(attempt + 1) +
                                             " connection attempts: " + e.what());
                std::this_thread::sleep_for(options.retry_backoff);
            }
        }

        CollaboratorCore core(wire_cfg, client_id, shard);
        const auto wait = options.join_timeout + options.round_timeout;
        conn.send(wire::Join{client_id, static_cast<std::uint32_t>(d), wire::kProtocolVersion});
        auto ack_msg = conn.receive(wait);
        if (!ack_msg) throw ProtocolError("timeout waiting for JOIN_ACK");
        if (const auto* err = std::get_if<wire::Error>(&*ack_msg)) throw ProtocolError("join rejected: " + err->message);
        const auto* ack = std::get_if<wire::JoinAck>(&*ack_msg);
        if (!ack) throw ProtocolError("expected JOIN_ACK");
        if (ack->client_id != client_id || ack->sample_count != shard.size() || ack->shard_digest != shard_digest(shard))
            throw ProtocolError("local shard does not match the aggregator's partition plan");

        while (true) {
            auto msg = conn.receive(wait);
            if (!msg) throw ProtocolError("timeout waiting for the aggregator");
            if (std::holds_alternative<wire::Shutdown>(*msg)) break;
            if (std::holds_alternative<wire::RoundDone>(*msg)) continue;
            if (const auto* err = std::get_if<wire::Error>(&*msg)) throw ProtocolError("aggregator error: " + err->message);
            const auto* model = std::get_if<wire::Model>(&*msg);
            if (!model) throw ProtocolError("unexpected message from aggregator");
            if (model->params.size() != d) {
                reject(conn, ErrorCode::dimension_mismatch, "MODEL dimension mismatch");
                throw ProtocolError("MODEL has " + std::to_string(model->params.size()) + " parameters, expected " +
                                    std::to_string(d));
            }
            ModelBroadcast broadcast;
            broadcast.round = model->round;
            broadcast.params = to_vector(model->params);
            if (model->sum_fisher) {
                broadcast.sum_fisher = to_vector(*model->sum_fisher);
                broadcast.sum_fisher_params = to_vector(*model->sum_fisher_params);
            }
            const auto update = core.train_round(broadcast);
            ++report.rounds_trained;

            wire::Update out;
            out.client_id = client_id;
            out.round = model->round;
            out.sample_count = static_cast<std::uint32_t>(update.sample_count);
            out.local_loss = static_cast<float>(update.local_loss);
            out.params = to_floats(update.params);
            if (update.fisher) {
                out.fisher = to_floats(update.fisher->values);
                out.fisher_times_params = to_floats(*update.fisher_times_params);
            }
            conn.send(out);
            ++report.updates_sent;
        }
        report.ok = true;
    } catch (const std::exception& e) {
        report.error = e.what();
    }
    return report;
}

}  // namespace fedbench::net
