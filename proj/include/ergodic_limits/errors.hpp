#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ergodic_limits {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class UnsupportedMap : public Error {
public:
    using Error::Error;
};

class TruncationError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class DegenerateVariance : public Error {
public:
    using Error::Error;
};

class BlowupError : public Error {
public:
    BlowupError(const std::string& what, std::int64_t step) : Error(what), step_(step) {}
    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace ergodic_limits
