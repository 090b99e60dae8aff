#pragma once

// Message channels between the server and one client. Every backend carries
// encoded frames, so the in-process and TCP paths exercise the same codec.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedrul/fl/wire.hpp"
#include "fedrul/util/error.hpp"

namespace fedrul::fl {

using Millis = std::chrono::milliseconds;

class Channel {
public:
    virtual ~Channel() = default;
    virtual void send(const Message& m) = 0;
    /// Blocks until a frame arrives; throws TransportError on timeout or when
    /// the peer is gone.
    virtual Message recv(Millis timeout) = 0;
    virtual void close() = 0;
};

namespace detail {

class FrameQueue {
public:
    void push(std::vector<std::uint8_t> frame) {
        {
            std::lock_guard lock(mu_);
            if (closed_) throw TransportError("send on a closed channel");
            frames_.push_back(std::move(frame));
        }
        cv_.notify_one();
    }

    std::vector<std::uint8_t> pop(Millis timeout) {
        std::unique_lock lock(mu_);
        if (!cv_.wait_for(lock, timeout, [&] { return !frames_.empty() || closed_; }))
            throw TransportError("timed out waiting for a message");
        if (frames_.empty()) throw TransportError("peer closed the channel");
        auto f = std::move(frames_.front());
        frames_.pop_front();
        return f;
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::vector<std::uint8_t>> frames_;
    bool closed_ = false;
};

}  // namespace detail

/// One end of an in-process duplex link.
class InprocChannel final : public Channel {
public:
    InprocChannel(std::shared_ptr<detail::FrameQueue> out, std::shared_ptr<detail::FrameQueue> in)
        : out_(std::move(out)), in_(std::move(in)) {}
    ~InprocChannel() override { close(); }

    void send(const Message& m) override { out_->push(encode_message(m)); }
    Message recv(Millis timeout) override {
        const auto frame = in_->pop(timeout);
        return decode_message(frame);
    }
    void close() override {
        out_->close();
        in_->close();
    }

private:
    std::shared_ptr<detail::FrameQueue> out_, in_;
};

inline std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_inproc_pair() {
    auto a = std::make_shared<detail::FrameQueue>();
    auto b = std::make_shared<detail::FrameQueue>();
    return {std::make_unique<InprocChannel>(a, b), std::make_unique<InprocChannel>(b, a)};
}

/// Runs a message handler synchronously on send, for single-threaded
/// operation. Replies are queued and returned by recv in order.
class LoopbackChannel final : public Channel {
public:
    using Handler = std::function<std::vector<Message>(const Message&)>;

    explicit LoopbackChannel(Handler handler, const std::vector<Message>& pending = {}) : handler_(std::move(handler)) {
        for (const auto& m : pending) replies_.push_back(encode_message(m));
    }

    void send(const Message& m) override {
        if (closed_) throw TransportError("send on a closed channel");
        // Round-trip through the codec so this path matches the others bit for bit.
        const auto request = decode_message(encode_message(m));
        for (auto& reply : handler_(request)) replies_.push_back(encode_message(reply));
    }
    Message recv(Millis) override {
        if (replies_.empty()) throw TransportError(closed_ ? "peer closed the channel" : "no reply pending");
        auto frame = std::move(replies_.front());
        replies_.pop_front();
        return decode_message(frame);
    }
    void close() override { closed_ = true; }

private:
    Handler handler_;
    std::deque<std::vector<std::uint8_t>> replies_;
    bool closed_ = false;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

/// Parses "host:port"; a bare port means 127.0.0.1.
inline Endpoint parse_endpoint(const std::string& s) {
    const auto colon = s.rfind(':');
    Endpoint e;
    std::string port = s;
    if (colon != std::string::npos) {
        e.host = s.substr(0, colon);
        port = s.substr(colon + 1);
        if (e.host.empty()) e.host = "127.0.0.1";
    }
    try {
        std::size_t used = 0;
        const long p = std::stol(port, &used);
        if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
        e.port = static_cast<std::uint16_t>(p);
    } catch (const std::exception&) {
        throw ContractError("invalid endpoint '" + s + "', expected host:port");
    }
    return e;
}

namespace detail {

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

inline void wait_fd(int fd, short events, Millis timeout, const char* what) {
    pollfd p{fd, events, 0};
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
        const int r = ::poll(&p, 1, static_cast<int>(std::max<long long>(0, left.count())));
        if (r > 0) return;
        if (r == 0) throw TransportError(std::string("timed out waiting to ") + what);
        if (errno != EINTR) throw TransportError(errno_text("poll"));
    }
}

inline sockaddr_in resolve(const Endpoint& e) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res)
        throw TransportError("cannot resolve host '" + e.host + "'");
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

}  // namespace detail

class TcpChannel final : public Channel {
public:
    explicit TcpChannel(int fd) : fd_(fd) {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~TcpChannel() override { close(); }
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    void send(const Message& m) override {
        if (fd_ < 0) throw TransportError("send on a closed channel");
        const auto frame = encode_message(m);
        std::size_t sent = 0;
        while (sent < frame.size()) {
            const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportError(detail::errno_text("send"));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    Message recv(Millis timeout) override {
        if (fd_ < 0) throw TransportError("recv on a closed channel");
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        std::vector<std::uint8_t> frame(kHeaderSize);
        read_exact(frame.data(), kHeaderSize, deadline);
        const auto header = decode_header(frame);
        frame.resize(kHeaderSize + header.payload_length);
        read_exact(frame.data() + kHeaderSize, header.payload_length, deadline);
        return decode_payload(header, std::span(frame).subspan(kHeaderSize), kHeaderSize);
    }

    void close() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    void read_exact(std::uint8_t* dst, std::size_t n, std::chrono::steady_clock::time_point deadline) {
        std::size_t got = 0;
        while (got < n) {
            const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
            detail::wait_fd(fd_, POLLIN, std::max(left, Millis(0)), "receive a message");
            const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
            if (r == 0) throw TransportError("peer closed the connection");
            if (r < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw TransportError(detail::errno_text("recv"));
            }
            got += static_cast<std::size_t>(r);
        }
    }

    int fd_;
};

class TcpListener {
public:
    explicit TcpListener(const Endpoint& e) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw TransportError(detail::errno_text("socket"));
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        const auto addr = detail::resolve(e);
        if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
            const auto msg = detail::errno_text(("bind " + e.host + ":" + std::to_string(e.port)).c_str());
            ::close(fd_);
            throw TransportError(msg);
        }
        if (::listen(fd_, 64) != 0) {
            const auto msg = detail::errno_text("listen");
            ::close(fd_);
            throw TransportError(msg);
        }
    }
    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    /// The bound port; useful after binding port 0.
    std::uint16_t port() const {
        sockaddr_in addr{};
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        return ntohs(addr.sin_port);
    }

    std::unique_ptr<Channel> accept(Millis timeout) {
        detail::wait_fd(fd_, POLLIN, timeout, "accept a client");
        const int c = ::accept(fd_, nullptr, nullptr);
        if (c < 0) throw TransportError(detail::errno_text("accept"));
        return std::make_unique<TcpChannel>(c);
    }

private:
    int fd_ = -1;
};

/// Connects, retrying until `timeout` so clients may start before the server.
inline std::unique_ptr<Channel> tcp_connect(const Endpoint& e, Millis timeout) {
    const auto addr = detail::resolve(e);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw TransportError(detail::errno_text("socket"));
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0)
            return std::make_unique<TcpChannel>(fd);
        const auto msg = detail::errno_text(("connect " + e.host + ":" + std::to_string(e.port)).c_str());
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline) throw TransportError(msg);
        std::this_thread::sleep_for(Millis(50));
    }
}

}  // namespace fedrul::fl
