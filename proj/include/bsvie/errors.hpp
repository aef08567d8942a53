#pragma once

#include <stdexcept>
#include <string>

namespace bsvie {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments, inconsistent configuration, or violated assumption metadata.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An evaluation outside the mathematical domain (e.g. t > s on the triangle).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A configured hard limit was exceeded (lattice depth, assignment size).
class ResourceLimitError : public Error {
public:
    using Error::Error;
};

/// The requested combination of inputs is not supported by this build.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Linear algebra or floating-point failure with diagnostic context.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A solver produced non-finite values; the message names the failing cell.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace bsvie
