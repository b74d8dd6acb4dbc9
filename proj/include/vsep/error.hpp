#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vsep {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid options or configuration values. Maps to CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad input data: malformed files, dimension mismatches, broken references.
/// Maps to CLI exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DimensionError : public DataError {
public:
    using DataError::DataError;
};

class CorruptFileError : public DataError {
public:
    using DataError::DataError;
};

/// Numerical failure: zero vectors where a direction is needed, non-finite
/// losses, eigensolver non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, double residual)
        : NumericError(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

}  // namespace vsep
