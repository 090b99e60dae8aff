#pragma once

// Frame layout (all header integers big-endian):
//
//   magic "FLRP" (4) | version 0x01 (1) | type (1) | epoch u32 (4) |
//   sender u16 (2) | payload length u32 (4) | payload
//
// Parameter payload: count u64 big-endian, then `count` IEEE-754 binary32
// values little-endian. Loss payload: one binary64 little-endian. Hello
// payload: training-set size u64 big-endian. EpochEnd/Shutdown: empty.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedrul/util/error.hpp"

namespace fedrul::fl {

enum class MessageType : std::uint8_t {
    GlobalModel = 0,
    LocalModel = 1,
    EvalAssignment = 2,
    EvalLoss = 3,
    ValSumLoss = 4,
    EpochEnd = 5,
    Shutdown = 6,
    Hello = 7,
};

inline std::string_view to_string(MessageType t) {
    switch (t) {
        case MessageType::GlobalModel: return "GlobalModel";
        case MessageType::LocalModel: return "LocalModel";
        case MessageType::EvalAssignment: return "EvalAssignment";
        case MessageType::EvalLoss: return "EvalLoss";
        case MessageType::ValSumLoss: return "ValSumLoss";
        case MessageType::EpochEnd: return "EpochEnd";
        case MessageType::Shutdown: return "Shutdown";
        case MessageType::Hello: return "Hello";
    }
    return "?";
}

inline constexpr std::array<std::uint8_t, 4> kMagic = {'F', 'L', 'R', 'P'};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 16;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class PayloadKind : std::uint8_t { Empty, Parameters, Loss, Count };

inline PayloadKind payload_kind(MessageType t) {
    switch (t) {
        case MessageType::GlobalModel:
        case MessageType::LocalModel:
        case MessageType::EvalAssignment: return PayloadKind::Parameters;
        case MessageType::EvalLoss:
        case MessageType::ValSumLoss: return PayloadKind::Loss;
        case MessageType::Hello: return PayloadKind::Count;
        case MessageType::EpochEnd:
        case MessageType::Shutdown: return PayloadKind::Empty;
    }
    return PayloadKind::Empty;
}

/// Only model parameters, scalar losses and a training-set size ever travel;
/// no message can carry measurements or windows.
using Payload = std::variant<std::monostate, std::vector<float>, double, std::uint64_t>;

struct Message {
    MessageType type = MessageType::EpochEnd;
    std::uint32_t epoch = 0;
    std::uint16_t sender = 0;
    Payload payload;

    static Message parameters(MessageType t, std::uint32_t epoch, std::uint16_t sender, std::vector<float> values) {
        return {t, epoch, sender, std::move(values)};
    }
    static Message loss(MessageType t, std::uint32_t epoch, std::uint16_t sender, double value) {
        return {t, epoch, sender, value};
    }
    static Message empty(MessageType t, std::uint32_t epoch, std::uint16_t sender) {
        return {t, epoch, sender, std::monostate{}};
    }
    static Message hello(std::uint16_t sender, std::uint64_t n_train) {
        return {MessageType::Hello, 0, sender, n_train};
    }

    const std::vector<float>& params() const { return std::get<std::vector<float>>(payload); }
    double loss_value() const { return std::get<double>(payload); }
    std::uint64_t count() const { return std::get<std::uint64_t>(payload); }

    bool operator==(const Message& o) const {
        if (type != o.type || epoch != o.epoch || sender != o.sender || payload.index() != o.payload.index())
            return false;
        // Bitwise comparison so NaN payloads and signed zeros compare as sent.
        if (const auto* a = std::get_if<std::vector<float>>(&payload)) {
            const auto& b = std::get<std::vector<float>>(o.payload);
            return a->size() == b.size() && std::memcmp(a->data(), b.data(), a->size() * sizeof(float)) == 0;
        }
        if (const auto* a = std::get_if<double>(&payload))
            return std::bit_cast<std::uint64_t>(*a) == std::bit_cast<std::uint64_t>(std::get<double>(o.payload));
        return payload == o.payload;
    }
};

namespace detail {

inline std::uint8_t* put_be(std::uint8_t* out, std::uint64_t v, int bytes) {
    for (int i = bytes - 1; i >= 0; --i) *out++ = static_cast<std::uint8_t>(v >> (8 * i));
    return out;
}
inline std::uint8_t* put_le(std::uint8_t* out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) *out++ = static_cast<std::uint8_t>(v >> (8 * i));
    return out;
}
inline std::uint64_t get_be(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v = (v << 8) | in[at + i];
    return v;
}
inline std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | in[at + i];
    return v;
}

}  // namespace detail

inline std::size_t payload_size(const Message& m) {
    switch (payload_kind(m.type)) {
        case PayloadKind::Parameters: return 8 + 4 * std::get<std::vector<float>>(m.payload).size();
        case PayloadKind::Loss:
        case PayloadKind::Count: return 8;
        case PayloadKind::Empty: return 0;
    }
    return 0;
}

inline std::vector<std::uint8_t> encode_message(const Message& m) {
    const auto kind = payload_kind(m.type);
    const bool matches = (kind == PayloadKind::Parameters && std::holds_alternative<std::vector<float>>(m.payload)) ||
                         (kind == PayloadKind::Loss && std::holds_alternative<double>(m.payload)) ||
                         (kind == PayloadKind::Count && std::holds_alternative<std::uint64_t>(m.payload)) ||
                         (kind == PayloadKind::Empty && std::holds_alternative<std::monostate>(m.payload));
    if (!matches) throw ContractError("encode_message: payload does not match message type " + std::string(to_string(m.type)));
    const std::size_t len = payload_size(m);
    if (len > kMaxPayload) throw ContractError("encode_message: payload exceeds the frame limit");

    std::vector<std::uint8_t> out(kHeaderSize + len);
    std::uint8_t* p = std::copy(kMagic.begin(), kMagic.end(), out.data());
    *p++ = kVersion;
    *p++ = static_cast<std::uint8_t>(m.type);
    p = detail::put_be(p, m.epoch, 4);
    p = detail::put_be(p, m.sender, 2);
    p = detail::put_be(p, len, 4);
    switch (kind) {
        case PayloadKind::Parameters: {
            const auto& v = std::get<std::vector<float>>(m.payload);
            p = detail::put_be(p, v.size(), 8);
            for (float f : v) p = detail::put_le(p, std::bit_cast<std::uint32_t>(f), 4);
            break;
        }
        case PayloadKind::Loss: detail::put_le(p, std::bit_cast<std::uint64_t>(std::get<double>(m.payload)), 8); break;
        case PayloadKind::Count: detail::put_be(p, std::get<std::uint64_t>(m.payload), 8); break;
        case PayloadKind::Empty: break;
    }
    return out;
}

struct FrameHeader {
    MessageType type;
    std::uint32_t epoch;
    std::uint16_t sender;
    std::uint32_t payload_length;
};

/// Validates the fixed 16-byte header.
inline FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) throw DecodeError(bytes.size(), "truncated header");
    for (std::size_t i = 0; i < kMagic.size(); ++i)
        if (bytes[i] != kMagic[i]) throw DecodeError(i, "bad magic");
    if (bytes[4] != kVersion) throw DecodeError(4, "unsupported version " + std::to_string(bytes[4]));
    if (bytes[5] > static_cast<std::uint8_t>(MessageType::Hello))
        throw DecodeError(5, "unknown message type " + std::to_string(bytes[5]));
    FrameHeader h{static_cast<MessageType>(bytes[5]), static_cast<std::uint32_t>(detail::get_be(bytes, 6, 4)),
                  static_cast<std::uint16_t>(detail::get_be(bytes, 10, 2)),
                  static_cast<std::uint32_t>(detail::get_be(bytes, 12, 4))};
    if (h.payload_length > kMaxPayload) throw DecodeError(12, "payload length exceeds the frame limit");
    const auto kind = payload_kind(h.type);
    const bool plausible = (kind == PayloadKind::Empty && h.payload_length == 0) ||
                           ((kind == PayloadKind::Loss || kind == PayloadKind::Count) && h.payload_length == 8) ||
                           (kind == PayloadKind::Parameters && h.payload_length >= 8 && (h.payload_length - 8) % 4 == 0);
    if (!plausible)
        throw DecodeError(12, "payload length " + std::to_string(h.payload_length) + " invalid for " +
                                  std::string(to_string(h.type)));
    return h;
}

inline Message decode_payload(const FrameHeader& h, std::span<const std::uint8_t> payload, std::size_t base_offset) {
    if (payload.size() != h.payload_length)
        throw DecodeError(base_offset + std::min<std::size_t>(payload.size(), h.payload_length),
                          payload.size() < h.payload_length ? "truncated payload" : "trailing bytes after payload");
    Message m;
    m.type = h.type;
    m.epoch = h.epoch;
    m.sender = h.sender;
    switch (payload_kind(h.type)) {
        case PayloadKind::Parameters: {
            const std::uint64_t count = detail::get_be(payload, 0, 8);
            if (count != (h.payload_length - 8) / 4)
                throw DecodeError(base_offset, "parameter count " + std::to_string(count) + " disagrees with payload length");
            std::vector<float> v(static_cast<std::size_t>(count));
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(payload, 8 + 4 * i, 4)));
            m.payload = std::move(v);
            break;
        }
        case PayloadKind::Loss: m.payload = std::bit_cast<double>(detail::get_le(payload, 0, 8)); break;
        case PayloadKind::Count: m.payload = detail::get_be(payload, 0, 8); break;
        case PayloadKind::Empty: m.payload = std::monostate{}; break;
    }
    return m;
}

/// Decodes exactly one complete frame.
inline Message decode_message(std::span<const std::uint8_t> bytes) {
    const auto h = decode_header(bytes);
    return decode_payload(h, bytes.subspan(kHeaderSize), kHeaderSize);
}

}  // namespace fedrul::fl
