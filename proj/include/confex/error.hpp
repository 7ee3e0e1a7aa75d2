#pragma once

#include <stdexcept>
#include <string>

namespace confex {

// Broad failure classes surfaced to the CLI as `error.kind`.
enum class ErrorKind { io, parse, validation, estimation, network };

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return "io";
        case ErrorKind::parse: return "parse";
        case ErrorKind::validation: return "validation";
        case ErrorKind::estimation: return "estimation";
        case ErrorKind::network: return "network";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& message)
        : std::runtime_error(message), kind_(kind), module_(std::move(module)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& module() const noexcept { return module_; }

private:
    ErrorKind kind_;
    std::string module_;
};

}  // namespace confex
