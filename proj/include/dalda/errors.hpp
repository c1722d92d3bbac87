#pragma once

#include <stdexcept>
#include <string>

namespace dalda {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Remote/mock provider failures. Rate limiting is surfaced distinctly so
// callers can treat it as retryable.
class BackendError : public Error {
public:
    enum class Kind { unreachable, rate_limited, malformed, invalid_input };

    BackendError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }
    bool retryable() const { return kind_ == Kind::unreachable || kind_ == Kind::rate_limited; }

private:
    Kind kind_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace dalda
