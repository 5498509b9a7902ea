#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nudge {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Malformed file contents. Carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Parameters do not match the architecture they claim.
class ModelError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// File system failure; the message includes the path.
class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidInput(what);
}

} // namespace detail
} // namespace nudge
