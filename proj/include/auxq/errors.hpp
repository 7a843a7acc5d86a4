#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace auxq {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible operand shapes. The message names the op and the offending dims.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced by an op, or a custom backward rule that broke its contract.
class NumericFault : public Error {
public:
    using Error::Error;
};

// Caller violated a documented precondition.
class UsageError : public Error {
public:
    using Error::Error;
};

// Malformed external data (IDX, CIFAR binary, checkpoint container).
class FormatError : public Error {
public:
    using Error::Error;
};

class InternalError : public Error {
public:
    using Error::Error;
};

// A declarative spec failed validation. Carries every violation, not just the first.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations);

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

}  // namespace auxq
