#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxwave {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file or stream contents (sizes, magic numbers, missing bands).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Unsupported or mutually inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Volume or band dimensions incompatible with the requested operation.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that do not line up (channel counts, broadcast rules).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN / Inf where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward() from a non-scalar node.
class UsageError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Integrity failures while decoding a stream: CRC, truncation, hash mismatch.
class DecodeError : public Error {
public:
    DecodeError(const std::string& what, std::size_t position = 0)
        : Error(what), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace voxwave
