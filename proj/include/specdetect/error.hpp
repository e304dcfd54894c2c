#pragma once

#include <stdexcept>
#include <string>

namespace specdetect {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters or option combinations supplied by the caller.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Malformed, inconsistent or degenerate input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// A numerical routine could not produce a usable answer.
class NumericalError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw UsageError(message);
}

inline void require_data(bool condition, const std::string& message) {
    if (!condition) throw DataError(message);
}

}  // namespace detail
}  // namespace specdetect
