#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace slog {

// Base class for every recoverable runtime failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (probabilities, hyperparameters, flags).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input file. `line` is 1-based; 0 when the error is not tied to a line.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Surrogate linear system could not be solved to tolerance.
class FitError : public Error {
public:
    FitError(const std::string& what, double condition_estimate)
        : Error(what), condition_(condition_estimate) {}
    [[nodiscard]] double condition_estimate() const noexcept { return condition_; }

private:
    double condition_;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class Conflict : public Error {
public:
    using Error::Error;
};

// Transport failure talking to the annotation service; the caller may retry.
class NetworkError : public Error {
public:
    using Error::Error;
    [[nodiscard]] bool retryable() const noexcept { return true; }
};

// Caller broke a documented precondition (dimension mismatch and the like).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require(bool cond, const char* what) {
    if (!cond) throw ContractViolation(what);
}

}  // namespace slog
