#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedrul {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on shapes, lengths or value ranges was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// A NetworkSpec whose layers do not chain to a single scalar output.
class SpecError : public Error {
public:
    using Error::Error;
};

class IngestError : public Error {
public:
    IngestError(const std::string& file, std::size_t row, const std::string& what)
        : Error(file + ":" + std::to_string(row) + ": " + what), file_(file), row_(row) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t row() const noexcept { return row_; }

private:
    std::string file_;
    std::size_t row_;
};

class DecodeError : public Error {
public:
    DecodeError(std::size_t offset, const std::string& what)
        : Error("decode error at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class TransportError : public Error {
public:
    using Error::Error;
};

/// A peer sent a well-formed message that is out of place in the protocol.
class ProtocolError : public TransportError {
public:
    using TransportError::TransportError;
};

inline void require(bool condition, const char* message) {
    if (!condition) throw ContractError(message);
}

}  // namespace fedrul
