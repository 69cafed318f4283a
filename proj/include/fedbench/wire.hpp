#pragma once

// Aggregator <-> collaborator frame codec.
//
//   frame   := u32 length (big-endian, payload bytes) | u8 type | payload
//   counts  := u32 big-endian
//   arrays  := f32 little-endian
//
// JOIN       client_id, d, u8 protocol_version
// JOIN_ACK   client_id, sample_count, u64 shard digest
// MODEL      round, d, theta[d] [, A[d], b[d]]   (penalty arrays present iff length allows)
// UPDATE     client_id, round, sample_count, f32 local_loss, d, theta[d], u8 has_fisher [, F[d], F*theta[d]]
// ROUND_DONE round, u64 digest of the aggregated parameters
// SHUTDOWN   (empty)
// ERROR      u8 code, utf-8 message

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace fedbench::wire {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 5;
inline constexpr std::uint32_t kMaxPayload = 0x80000000u;

enum class MessageType : std::uint8_t {
    join = 1,
    join_ack = 2,
    model = 3,
    update = 4,
    round_done = 5,
    shutdown = 6,
    error = 7,
};

enum class ErrorCode : std::uint8_t {
    protocol = 1,
    version_mismatch = 2,
    duplicate_client = 3,
    federation_full = 4,
    bad_client_id = 5,
    dimension_mismatch = 6,
    timeout = 7,
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Join {
    std::uint32_t client_id = 0;
    std::uint32_t dim = 0;
    std::uint8_t version = kProtocolVersion;
    friend bool operator==(const Join&, const Join&) = default;
};

struct JoinAck {
    std::uint32_t client_id = 0;
    std::uint32_t sample_count = 0;
    std::uint64_t shard_digest = 0;
    friend bool operator==(const JoinAck&, const JoinAck&) = default;
};

struct Model {
    std::uint32_t round = 0;
    std::vector<float> params;
    std::optional<std::vector<float>> sum_fisher;
    std::optional<std::vector<float>> sum_fisher_params;
    friend bool operator==(const Model&, const Model&) = default;
};

struct Update {
    std::uint32_t client_id = 0;
    std::uint32_t round = 0;
    std::uint32_t sample_count = 0;
    float local_loss = 0.0f;
    std::vector<float> params;
    std::optional<std::vector<float>> fisher;
    std::optional<std::vector<float>> fisher_times_params;
    friend bool operator==(const Update&, const Update&) = default;
};

struct RoundDone {
    std::uint32_t round = 0;
    std::uint64_t params_digest = 0;
    friend bool operator==(const RoundDone&, const RoundDone&) = default;
};

struct Shutdown {
    friend bool operator==(const Shutdown&, const Shutdown&) = default;
};

struct Error {
    ErrorCode code = ErrorCode::protocol;
    std::string message;
    friend bool operator==(const Error&, const Error&) = default;
};

using Message = std::variant<Join, JoinAck, Model, Update, RoundDone, Shutdown, Error>;

MessageType type_of(const Message& msg);

std::vector<std::uint8_t> encode_frame(const Message& msg);

/// Decodes exactly one frame; trailing or missing bytes are errors.
Message decode_frame(std::span<const std::uint8_t> bytes);

/// Incremental decoder for a byte stream.
class FrameReader {
public:
    void feed(std::span<const std::uint8_t> bytes);
    /// Next complete message, or nullopt if more bytes are needed.
    std::optional<Message> next();
    std::size_t buffered() const { return buffer_.size() - consumed_; }

private:
    std::vector<std::uint8_t> buffer_;
    std::size_t consumed_ = 0;
};

std::size_t model_frame_size(std::size_t d, bool with_penalty);
std::size_t update_frame_size(std::size_t d, bool with_fisher);
std::size_t round_done_frame_size();

/// FNV-1a over bytes.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace fedbench::wire
