#pragma once

#include <stdexcept>
#include <string>

namespace stemdeg {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A parameter violates its documented range or is non-finite.
class InvalidParameterError : public Error {
public:
    using Error::Error;
};

/// Image/map shapes do not match, or a requested crop/index does not fit.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// The 2x2 block of an affine transform is (numerically) singular.
class SingularTransformError : public Error {
public:
    using Error::Error;
};

/// Input has no usable signal (all-zero or constant image, constant series).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, long byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit FormatError(const std::string& msg) : Error(msg), offset(-1) {}
    long offset;
};

/// Numerical failure: diverged training, non-convergence where required.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace stemdeg
