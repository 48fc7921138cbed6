#pragma once

#include <stdexcept>
#include <string>

namespace posepipe {

/// Base class for every error raised by the library. The C API maps the
/// subclasses onto status codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument did not hold (bad dimensions, invalid box,
/// out-of-range parameter).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Input data could not be parsed or is structurally wrong.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A lookup by id (frame, crop, layout name) failed.
class NotFound : public Error {
public:
    using Error::Error;
};

/// Numerical procedure could not produce a result (degenerate heatmap,
/// zero-norm embedding, rejection sampling exhausted).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace posepipe
