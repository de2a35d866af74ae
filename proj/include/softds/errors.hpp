#pragma once

#include <stdexcept>
#include <string>

namespace softds {

/// Malformed or inconsistent input (shapes, simplex violations, bad config).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A computation produced NaN or an infinite value where a finite one is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace softds
