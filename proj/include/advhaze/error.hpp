#pragma once

#include <stdexcept>
#include <string>

namespace advhaze {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, unreadable or unwritable file.
class IoError : public Error {
public:
    using Error::Error;
};

/// A file was readable but its contents are not in the expected format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Operands with incompatible dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value violates the documented domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (attack parameters, run configs, CLI input).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Failure while talking to an external classifier process.
class AdapterError : public Error {
public:
    enum class Kind { process_failure, malformed_response, class_count_mismatch, timeout };

    AdapterError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace advhaze
