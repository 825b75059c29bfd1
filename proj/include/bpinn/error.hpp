#pragma once

#include <stdexcept>
#include <string>

namespace bpinn {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible field/operator/network dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// Non-finite values or loss of positive definiteness during iteration.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data (bad magic, truncation, checksum, version).
class FormatError : public Error {
public:
    using Error::Error;
};

// Configuration failed semantic or syntactic validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace bpinn
