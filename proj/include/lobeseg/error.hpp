#pragma once

#include <stdexcept>
#include <string>

namespace lobeseg {

/// File-system or format problem while reading/writing artifacts.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed MetaImage header or payload.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

/// Non-finite values, degenerate inputs, or violated numeric postconditions.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or argument inconsistency between inputs.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace lobeseg
