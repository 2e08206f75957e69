#pragma once

#include <stdexcept>
#include <string>

namespace orthoscore {

// Error categories. CLI exit codes map usage/config to 1, data-ish kinds to 2
// and divergence to 3.
enum class ErrorKind {
    Shape,
    Index,
    Length,
    Config,
    Validation,
    Encoding,
    Ingest,
    Io,
    BadMagic,
    BadVersion,
    Truncated,
    Usage,
    Divergence,
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Index: return "index";
    case ErrorKind::Length: return "length";
    case ErrorKind::Config: return "config";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Encoding: return "encoding";
    case ErrorKind::Ingest: return "ingest";
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::BadVersion: return "bad-version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Internal: return "internal";
    }
    return "unknown";
}

} // namespace orthoscore
