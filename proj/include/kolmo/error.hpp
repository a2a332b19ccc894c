#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kolmo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed expression text; `position` is the 0-based offset of the offending character.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what + " at position " + std::to_string(position)), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// Evaluation outside the domain of a node (sqrt of a negative, division by zero, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Symbolic differentiation reached a node without a derivative rule (abs).
class NotDifferentiable : public Error {
public:
    using Error::Error;
};

/// Linear solve breakdown, non-finite field values, failed eigendecomposition.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A hypothesis check cannot be carried out on the given inputs.
class CheckError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration (schema violation, unknown key, bad value).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Exhaustion did not reach its tolerance within the refinement budget.
class BudgetExceeded : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace kolmo
