#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmodal {

/// Base of every error raised by the library. `code()` is the stable
/// machine-readable identifier surfaced by the HTTP API.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual std::string_view code() const noexcept { return "internal_error"; }
};

/// Bad caller input: out-of-range values, malformed predicates, too-small n.
class ArgumentError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "invalid_argument"; }
};

/// Tensor or sample shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "dimension_mismatch"; }
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "numeric_error"; }
};

/// API misuse that indicates a programming bug (e.g. a stale backprop cache).
class ContractError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "contract_violation"; }
};

/// Unreadable or corrupted files.
class FormatError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "format_error"; }
};

class TrainingError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "training_diverged"; }
};

class NotFoundError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "not_found"; }
};

/// A phenotype head was skipped during fitting and cannot be evaluated.
class UnavailableError : public Error {
public:
    using Error::Error;
    std::string_view code() const noexcept override { return "unavailable"; }
};

}  // namespace xmodal
