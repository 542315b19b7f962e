#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metasel {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible (matmul inner dims, conv kernel too large, ...).
class DimensionError : public Error {
   public:
    using Error::Error;
};

class IndexError : public Error {
   public:
    using Error::Error;
};

/// A tensor has the wrong rank or size for the requested operation.
class ShapeError : public Error {
   public:
    using Error::Error;
};

/// Object is not in a state that permits the call (e.g. parameter without gradient).
class StateError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class DataError : public Error {
   public:
    using Error::Error;
};

class NumericError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

/// Metric is undefined for the given input (TRC with no faults, APFD with no detected faults).
class UndefinedMetricError : public Error {
   public:
    using Error::Error;
};

/// Statistical test has no information to work with (all paired differences zero).
class DegenerateError : public Error {
   public:
    using Error::Error;
};

/// Binary file does not match its declared layout. Carries the byte offset of the problem.
class FormatError : public Error {
   public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

   private:
    std::size_t offset_;
};

class UnsupportedVersionError : public FormatError {
   public:
    using FormatError::FormatError;
};

}  // namespace metasel
