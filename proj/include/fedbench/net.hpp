#pragma once

// Aggregator-collaborator deployment over TCP.

#include "fedbench/orchestrator.hpp"
#include "fedbench/wire.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace fedbench::net {

struct NetOptions {
    std::chrono::milliseconds round_timeout{120'000};
    std::chrono::milliseconds join_timeout{120'000};
    int connect_retries = 3;
    std::chrono::milliseconds retry_backoff{1'000};
};

/// "host:port" -> (host, port).
std::pair<std::string, std::uint16_t> parse_address(const std::string& address);

/// Owning TCP stream with a frame reader.
class Connection {
public:
    Connection() = default;
    explicit Connection(int fd) : fd_(fd) {}
    Connection(Connection&& other) noexcept;
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;
    ~Connection();

    static Connection connect_to(const std::string& host, std::uint16_t port);

    int fd() const { return fd_; }
    bool open() const { return fd_ >= 0; }
    void close();

    /// Returns the frame size in bytes.
    std::size_t send(const wire::Message& msg);
    std::size_t send_bytes(const std::vector<std::uint8_t>& frame);

    /// Blocks until one message arrives. nullopt on timeout; throws
    /// wire::ProtocolError if the peer closes or sends garbage.
    std::optional<wire::Message> receive(std::chrono::milliseconds timeout);

    /// Reads what is available without blocking. False once the peer has closed.
    bool pump();
    std::optional<wire::Message> next() { return reader_.next(); }

private:
    int fd_ = -1;
    wire::FrameReader reader_;
};

class Listener {
public:
    Listener(const std::string& host, std::uint16_t port);
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;
    ~Listener();

    std::uint16_t port() const { return port_; }
    int fd() const { return fd_; }
    Connection accept();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

struct AggregatorReport {
    bool ok = false;
    std::string error;
    std::size_t rounds_completed = 0;
    std::size_t rejected_joins = 0;
    std::vector<RoundMetrics> metrics;
    Vector<double> final_params;
};

/// Binds on construction so callers can read the port before run().
/// Parameters travel as f32, so the run matches an in-process federation
/// with WirePrecision::f32.
class Aggregator {
public:
    Aggregator(const FederationConfig& cfg, const Dataset& train, const Dataset& test,
               const std::string& bind_address, NetOptions options = {});

    std::uint16_t port() const { return listener_.port(); }
    AggregatorReport run();

private:
    FederationConfig cfg_;
    const Dataset& train_;
    const Dataset& test_;
    NetOptions options_;
    Listener listener_;
};

AggregatorReport serve_aggregator(const FederationConfig& cfg, const Dataset& train, const Dataset& test,
                                  const std::string& bind_address, NetOptions options = {});

struct CollaboratorReport {
    bool ok = false;
    std::string error;
    std::size_t rounds_trained = 0;
    std::size_t updates_sent = 0;
};

CollaboratorReport run_collaborator(const std::string& address, std::uint32_t client_id, const Dataset& shard,
                                    const FederationConfig& cfg, NetOptions options = {});

}  // namespace fedbench::net
