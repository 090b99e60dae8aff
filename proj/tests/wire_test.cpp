#include <gtest/gtest.h>

#include <thread>

#include "fedrul/fl/transport.hpp"
#include "fedrul/fl/wire.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::fl {
namespace {

using Bytes = std::vector<std::uint8_t>;

TEST(Wire, ParameterFrameMatchesHandEncodedBytes) {
    const auto m = Message::parameters(MessageType::GlobalModel, 0x01020304, 0x0A0B, {1.0f, -2.5f, 0.0f});
    const Bytes expected = {
        'F', 'L', 'R', 'P', 0x01, 0x00,              // magic, version, type
        0x01, 0x02, 0x03, 0x04,                      // epoch
        0x0A, 0x0B,                                  // sender
        0x00, 0x00, 0x00, 20,                        // payload length
        0, 0, 0, 0, 0, 0, 0, 3,                      // count
        0x00, 0x00, 0x80, 0x3F,                      // 1.0f
        0x00, 0x00, 0x20, 0xC0,                      // -2.5f
        0x00, 0x00, 0x00, 0x00,                      // 0.0f
    };
    EXPECT_EQ(encode_message(m), expected);
    const auto back = decode_message(expected);
    EXPECT_EQ(back, m);
    EXPECT_EQ(back.params(), (std::vector<float>{1.0f, -2.5f, 0.0f}));
}

TEST(Wire, LossFrameIsLittleEndianDouble) {
    const auto bytes = encode_message(Message::loss(MessageType::EvalLoss, 3, 2, 1.0));
    ASSERT_EQ(bytes.size(), kHeaderSize + 8);
    const Bytes payload(bytes.begin() + kHeaderSize, bytes.end());
    EXPECT_EQ(payload, (Bytes{0, 0, 0, 0, 0, 0, 0xF0, 0x3F}));
    EXPECT_EQ(decode_message(bytes).loss_value(), 1.0);
}

TEST(Wire, EpochEndHasEmptyPayload) {
    const auto bytes = encode_message(Message::empty(MessageType::EpochEnd, 7, 1));
    ASSERT_EQ(bytes.size(), kHeaderSize);
    EXPECT_EQ(bytes[12] | bytes[13] | bytes[14] | bytes[15], 0);
    EXPECT_EQ(decode_message(bytes).type, MessageType::EpochEnd);
}

TEST(Wire, HelloCarriesTrainingSize) {
    const auto m = Message::hello(4, 12345);
    EXPECT_EQ(decode_message(encode_message(m)).count(), 12345u);
}

TEST(Wire, SpecialFloatsRoundTripBitExactly) {
    const std::vector<float> v = {-0.0f, std::numeric_limits<float>::infinity(), std::numeric_limits<float>::quiet_NaN(),
                                  std::numeric_limits<float>::denorm_min(), 3.4e38f};
    const auto m = Message::parameters(MessageType::LocalModel, 1, 1, v);
    EXPECT_EQ(decode_message(encode_message(m)), m);
    const auto nan = Message::loss(MessageType::ValSumLoss, 1, 1, std::numeric_limits<double>::quiet_NaN());
    EXPECT_EQ(decode_message(encode_message(nan)), nan);
}

std::size_t decode_offset(const Bytes& b) {
    try {
        decode_message(b);
    } catch (const DecodeError& e) {
        return e.offset();
    }
    ADD_FAILURE() << "frame decoded without error";
    return SIZE_MAX;
}

TEST(Wire, MalformedFramesNameTheOffset) {
    const auto good = encode_message(Message::parameters(MessageType::LocalModel, 1, 2, {1.0f, 2.0f}));

    auto bad_magic = good;
    bad_magic[2] = 'X';
    EXPECT_EQ(decode_offset(bad_magic), 2u);

    auto bad_version = good;
    bad_version[4] = 0x02;
    EXPECT_EQ(decode_offset(bad_version), 4u);

    auto unknown_type = good;
    unknown_type[5] = 0x2A;
    EXPECT_EQ(decode_offset(unknown_type), 5u);

    auto long_length = good;
    long_length[15] += 4;
    EXPECT_EQ(decode_offset(long_length), good.size());

    auto huge_length = good;
    huge_length[12] = 0xFF;
    EXPECT_EQ(decode_offset(huge_length), 12u);

    auto odd_length = good;
    odd_length[15] += 1;
    EXPECT_EQ(decode_offset(odd_length), 12u);

    auto bad_count = good;
    bad_count[kHeaderSize + 7] = 5;
    EXPECT_EQ(decode_offset(bad_count), kHeaderSize);

    const Bytes truncated(good.begin(), good.begin() + 9);
    EXPECT_EQ(decode_offset(truncated), 9u);

    auto trailing = good;
    trailing.push_back(0);
    EXPECT_EQ(decode_offset(trailing), good.size());
}

TEST(Wire, EncodeRejectsMismatchedPayload) {
    Message m = Message::loss(MessageType::GlobalModel, 1, 1, 2.0);
    EXPECT_THROW(encode_message(m), ContractError);
}

TEST(Wire, PayloadTypesExcludeRawData) {
    // Only parameter vectors, scalar losses and a size can be carried.
    static_assert(std::variant_size_v<Payload> == 4);
    static_assert(std::is_same_v<std::variant_alternative_t<1, Payload>, std::vector<float>>);
    static_assert(std::is_same_v<std::variant_alternative_t<2, Payload>, double>);
    static_assert(std::is_same_v<std::variant_alternative_t<3, Payload>, std::uint64_t>);
    SUCCEED();
}

TEST(Wire, FuzzedFramesNeverCrash) {
    Rng rng(99);
    const auto seed_frame = encode_message(Message::parameters(MessageType::EvalAssignment, 5, 3, {0.5f, 1.5f, -3.0f}));
    int rejected = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        Bytes b = seed_frame;
        const int mutations = 1 + static_cast<int>(rng.uniform_int(0, 3));
        for (int k = 0; k < mutations; ++k) {
            switch (rng.uniform_int(0, 2)) {
                case 0: b.resize(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(b.size())))); break;
                case 1:
                    if (!b.empty()) b[rng.uniform_int(0, static_cast<std::int64_t>(b.size()) - 1)] ^= 1u << rng.uniform_int(0, 7);
                    break;
                default: b.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
            }
        }
        try {
            const auto m = decode_message(b);
            EXPECT_EQ(encode_message(m), b);
        } catch (const DecodeError&) {
            ++rejected;
        }
    }
    EXPECT_GT(rejected, 0);
}

Message big_message() {
    std::vector<float> v(10 * 1024 * 1024 / 4);
    Rng rng(5);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Message::parameters(MessageType::GlobalModel, 9, 1, std::move(v));
}

TEST(Transport, InprocDeliversInOrder) {
    auto [a, b] = make_inproc_pair();
    for (std::uint32_t e = 1; e <= 5; ++e) a->send(Message::empty(MessageType::EpochEnd, e, 0));
    for (std::uint32_t e = 1; e <= 5; ++e) EXPECT_EQ(b->recv(Millis(100)).epoch, e);
}

TEST(Transport, SendAfterShutdownFails) {
    auto [a, b] = make_inproc_pair();
    a->close();
    EXPECT_THROW(a->send(Message::empty(MessageType::Shutdown, 0, 0)), TransportError);
    EXPECT_THROW(b->send(Message::empty(MessageType::Shutdown, 0, 0)), TransportError);
    EXPECT_THROW(b->recv(Millis(10)), TransportError);
}

TEST(Transport, RecvTimesOut) {
    auto [a, b] = make_inproc_pair();
    EXPECT_THROW(b->recv(Millis(5)), TransportError);
}

TEST(Transport, InprocLargeFrame) {
    auto [a, b] = make_inproc_pair();
    const auto m = big_message();
    a->send(m);
    EXPECT_EQ(b->recv(Millis(5000)), m);
}

TEST(Transport, TcpLargeFrameAndOrdering) {
    TcpListener listener(Endpoint{"127.0.0.1", 0});
    const auto m = big_message();
    std::thread peer([port = listener.port(), &m] {
        auto c = tcp_connect({"127.0.0.1", port}, Millis(5000));
        c->send(Message::hello(3, 10));
        c->send(m);
        const auto echo = c->recv(Millis(5000));
        EXPECT_EQ(echo.type, MessageType::Shutdown);
    });
    auto s = listener.accept(Millis(5000));
    EXPECT_EQ(s->recv(Millis(5000)), Message::hello(3, 10));
    EXPECT_EQ(s->recv(Millis(5000)), m);
    s->send(Message::empty(MessageType::Shutdown, 0, 0));
    peer.join();
}

TEST(Transport, TcpPeerDisconnectSurfaces) {
    TcpListener listener(Endpoint{"127.0.0.1", 0});
    std::thread peer([port = listener.port()] {
        auto c = tcp_connect({"127.0.0.1", port}, Millis(5000));
        c->close();
    });
    auto s = listener.accept(Millis(5000));
    peer.join();
    EXPECT_THROW(s->recv(Millis(2000)), TransportError);
    s->close();
    EXPECT_THROW(s->send(Message::empty(MessageType::EpochEnd, 1, 0)), TransportError);
}

TEST(Transport, EndpointParsing) {
    const auto e = parse_endpoint("10.0.0.2:7000");
    EXPECT_EQ(e.host, "10.0.0.2");
    EXPECT_EQ(e.port, 7000);
    EXPECT_EQ(parse_endpoint("9000").host, "127.0.0.1");
    EXPECT_THROW(parse_endpoint("host:99999"), ContractError);
    EXPECT_THROW(parse_endpoint("host:abc"), ContractError);
}

}  // namespace
}  // namespace fedrul::fl
