// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace evsseg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Data and format problems (CLI exit code 2).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class CorruptionError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };

// Numeric failures (CLI exit code 3).
class NumericError : public Error { using Error::Error; };
class TrainingError : public NumericError { using NumericError::NumericError; };

}  // namespace evsseg
