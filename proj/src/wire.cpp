#include "fedbench/wire.hpp"

#include <bit>
#include <cstring>

namespace fedbench::wire {
namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
    void u64(std::uint64_t v) {
        u32(static_cast<std::uint32_t>(v >> 32));
        u32(static_cast<std::uint32_t>(v));
    }
    void f32(float v) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int shift = 0; shift < 32; shift += 8) out_.push_back(static_cast<std::uint8_t>(bits >> shift));
    }
    void floats(const std::vector<float>& v) {
        for (float x : v) f32(x);
    }
    void text(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - at_; }

    std::uint8_t u8() {
        need(1);
        return bytes_[at_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[at_++];
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t hi = u32();
        return (hi << 32) | u32();
    }
    float f32() {
        need(4);
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= std::uint32_t{bytes_[at_++]} << (8 * i);
        return std::bit_cast<float>(bits);
    }
    std::vector<float> floats(std::size_t n) {
        if (n > remaining() / 4) throw ProtocolError("array length exceeds payload");
        std::vector<float> v(n);
        for (auto& x : v) x = f32();
        return v;
    }
    std::string rest() {
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(at_), bytes_.end());
        at_ = bytes_.size();
        return s;
    }
    void done() const {
        if (at_ != bytes_.size()) throw ProtocolError("trailing bytes in payload");
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw ProtocolError("payload truncated");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t at_ = 0;
};

std::uint32_t checked_count(std::size_t n) {
    if (n > 0xffffffffu) throw ProtocolError("count does not fit in u32");
    return static_cast<std::uint32_t>(n);
}

void write_payload(Writer& w, const Join& m) {
    w.u32(m.client_id);
    w.u32(m.dim);
    w.u8(m.version);
}
void write_payload(Writer& w, const JoinAck& m) {
    w.u32(m.client_id);
    w.u32(m.sample_count);
    w.u64(m.shard_digest);
}
void write_payload(Writer& w, const Model& m) {
    const auto d = m.params.size();
    if (m.sum_fisher.has_value() != m.sum_fisher_params.has_value())
        throw ProtocolError("MODEL penalty arrays must be sent together");
    if (m.sum_fisher && (m.sum_fisher->size() != d || m.sum_fisher_params->size() != d))
        throw ProtocolError("MODEL penalty arrays must match parameter length");
    if (m.sum_fisher && d == 0) throw ProtocolError("MODEL penalty arrays need d > 0");
    w.u32(m.round);
    w.u32(checked_count(d));
    w.floats(m.params);
    if (m.sum_fisher) {
        w.floats(*m.sum_fisher);
        w.floats(*m.sum_fisher_params);
    }
}
void write_payload(Writer& w, const Update& m) {
    const auto d = m.params.size();
    if (m.fisher.has_value() != m.fisher_times_params.has_value())
        throw ProtocolError("UPDATE Fisher arrays must be sent together");
    if (m.fisher && (m.fisher->size() != d || m.fisher_times_params->size() != d))
        throw ProtocolError("UPDATE Fisher arrays must match parameter length");
    w.u32(m.client_id);
    w.u32(m.round);
    w.u32(m.sample_count);
    w.f32(m.local_loss);
    w.u32(checked_count(d));
    w.floats(m.params);
    w.u8(m.fisher ? 1 : 0);
    if (m.fisher) {
        w.floats(*m.fisher);
        w.floats(*m.fisher_times_params);
    }
}
void write_payload(Writer& w, const RoundDone& m) {
    w.u32(m.round);
    w.u64(m.params_digest);
}
void write_payload(Writer&, const Shutdown&) {}
void write_payload(Writer& w, const Error& m) {
    w.u8(static_cast<std::uint8_t>(m.code));
    w.text(m.message);
}

Message read_payload(MessageType type, Reader& r) {
    switch (type) {
        case MessageType::join: {
            Join m;
            m.client_id = r.u32();
            m.dim = r.u32();
            m.version = r.u8();
            r.done();
            return m;
        }
        case MessageType::join_ack: {
            JoinAck m;
            m.client_id = r.u32();
            m.sample_count = r.u32();
            m.shard_digest = r.u64();
            r.done();
            return m;
        }
        case MessageType::model: {
            Model m;
            m.round = r.u32();
            const std::size_t d = r.u32();
            m.params = r.floats(d);
            if (r.remaining() != 0) {
                if (r.remaining() != 8 * d) throw ProtocolError("MODEL length inconsistent with d");
                m.sum_fisher = r.floats(d);
                m.sum_fisher_params = r.floats(d);
            }
            r.done();
            return m;
        }
        case MessageType::update: {
            Update m;
            m.client_id = r.u32();
            m.round = r.u32();
            m.sample_count = r.u32();
            m.local_loss = r.f32();
            const std::size_t d = r.u32();
            m.params = r.floats(d);
            const auto flag = r.u8();
            if (flag > 1) throw ProtocolError("UPDATE has an invalid Fisher flag");
            if (flag == 1) {
                m.fisher = r.floats(d);
                m.fisher_times_params = r.floats(d);
            }
            r.done();
            return m;
        }
        case MessageType::round_done: {
            RoundDone m;
            m.round = r.u32();
            m.params_digest = r.u64();
            r.done();
            return m;
        }
        case MessageType::shutdown:
            r.done();
            return Shutdown{};
        case MessageType::error: {
            Error m;
            const auto code = r.u8();
            if (code < 1 || code > 7) throw ProtocolError("unknown error code");
            m.code = static_cast<ErrorCode>(code);
            m.message = r.rest();
            return m;
        }
    }
    throw ProtocolError("unknown message type");
}

MessageType checked_type(std::uint8_t raw) {
    if (raw < 1 || raw > 7) throw ProtocolError("unknown message type " + std::to_string(raw));
    return static_cast<MessageType>(raw);
}

std::uint32_t read_length(std::span<const std::uint8_t> header) {
    const std::uint32_t len = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                              (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
    if (len > kMaxPayload) throw ProtocolError("frame length exceeds limit");
    return len;
}

}  // namespace

MessageType type_of(const Message& msg) {
    return static_cast<MessageType>(msg.index() + 1);
}

std::vector<std::uint8_t> encode_frame(const Message& msg) {
    Writer payload;
    std::visit([&](const auto& m) { write_payload(payload, m); }, msg);
    auto body = payload.take();
    if (body.size() > kMaxPayload) throw ProtocolError("payload exceeds 2^31 bytes");
    Writer frame;
    frame.u32(static_cast<std::uint32_t>(body.size()));
    frame.u8(static_cast<std::uint8_t>(type_of(msg)));
    auto out = frame.take();
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Message decode_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes) throw ProtocolError("frame truncated");
    const auto len = read_length(bytes.first(4));
    const auto type = checked_type(bytes[4]);
    if (bytes.size() != kHeaderBytes + len)
        throw ProtocolError(bytes.size() < kHeaderBytes + len ? "frame truncated" : "frame length mismatch");
    Reader r(bytes.subspan(kHeaderBytes));
    return read_payload(type, r);
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
    if (consumed_ > 0) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(consumed_));
        consumed_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameReader::next() {
    const std::span<const std::uint8_t> pending(buffer_.data() + consumed_, buffer_.size() - consumed_);
    if (pending.size() < kHeaderBytes) return std::nullopt;
    const auto len = read_length(pending.first(4));
    checked_type(pending[4]);
    if (pending.size() < kHeaderBytes + len) return std::nullopt;
    auto msg = decode_frame(pending.first(kHeaderBytes + len));
    consumed_ += kHeaderBytes + len;
    return msg;
}

std::size_t model_frame_size(std::size_t d, bool with_penalty) {
    return kHeaderBytes + 8 + 4 * d * (with_penalty ? 3 : 1);
}

std::size_t update_frame_size(std::size_t d, bool with_fisher) {
    return kHeaderBytes + 20 + 1 + 4 * d * (with_fisher ? 3 : 1);
}

std::size_t round_done_frame_size() { return kHeaderBytes + 12; }

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace fedbench::wire
