#pragma once

#include <stdexcept>
#include <string>

namespace idm {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension mismatches, out-of-range arguments, malformed inputs.
class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared mid-computation (overflow, NaN).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Operation requested beyond a configured capability cap (e.g. dimension limit).
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// Operation is not defined for the model's likelihood family.
class WrongFamilyError : public Error {
public:
    using Error::Error;
};

/// A fit is too degenerate to proceed (e.g. zero residual variance).
class DegenerateFitError : public Error {
public:
    using Error::Error;
};

/// A matrix required to be invertible is numerically singular.
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace idm
