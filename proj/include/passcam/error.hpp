#pragma once

#include <stdexcept>
#include <string>

namespace passcam {

/// Malformed or out-of-range input data (scenes, stats, requests).
class InvalidInput : public std::runtime_error {
public:
    InvalidInput(std::string field, const std::string& message)
        : std::runtime_error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Inconsistent configuration (shape arithmetic, presets, flags).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A checkpoint and a dataset/request disagree on model or raster settings.
class ConfigMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values produced during a numerical computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Corrupt or unreadable files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace passcam
