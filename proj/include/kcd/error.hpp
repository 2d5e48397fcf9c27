#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kcd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data or configuration violates a documented contract.
/// The CLI maps this family to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed; carries the path and 1-based line number.
class FormatError : public ValidationError {
public:
    FormatError(const std::string& path, std::size_t line, const std::string& what)
        : ValidationError(path + ":" + std::to_string(line) + ": " + what), path_(path), line_(line) {}

    const std::string& path() const noexcept { return path_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Operand shapes do not conform for the named tensor operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A tensor operation produced a non-finite value.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace kcd
