#pragma once

#include <stdexcept>
#include <string>

namespace pf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numeric / contract violations inside the math and loss code.
class NumericError : public Error {
public:
    using Error::Error;
};

class DegenerateNorm : public NumericError {
public:
    using NumericError::NumericError;
};

class InvalidDistribution : public NumericError {
public:
    using NumericError::NumericError;
};

class UnknownOp : public NumericError {
public:
    using NumericError::NumericError;
};

class ShapeMismatch : public NumericError {
public:
    using NumericError::NumericError;
};

class BatchTooSmall : public NumericError {
public:
    using NumericError::NumericError;
};

class NonSquare : public NumericError {
public:
    using NumericError::NumericError;
};

class EmptySubset : public NumericError {
public:
    using NumericError::NumericError;
};

class SingleClass : public NumericError {
public:
    using NumericError::NumericError;
};

// Bad configuration. `field()` names the offending key when known.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg, std::string field = {})
        : Error(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Anything wrong with input data: files, label ranges, split sizes.
class DataError : public Error {
public:
    using Error::Error;
};

class BadMagic : public DataError {
public:
    using DataError::DataError;
};

class TruncatedFile : public DataError {
public:
    using DataError::DataError;
};

class LabelOutOfRange : public DataError {
public:
    using DataError::DataError;
};

class InsufficientSamples : public DataError {
public:
    using DataError::DataError;
};

class EmptyPartition : public DataError {
public:
    using DataError::DataError;
};

class RejectionExhausted : public DataError {
public:
    using DataError::DataError;
};

class GradMismatch : public Error {
public:
    using Error::Error;
};

}  // namespace pf
