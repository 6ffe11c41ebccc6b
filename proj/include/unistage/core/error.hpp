#pragma once

#include <stdexcept>
#include <string>

namespace unistage {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised while building a program: type mismatches, shape errors, bad plans.
class StagingError : public Error {
public:
    using Error::Error;
};

// Raised by generated code at run time (parse errors, bounds, division by zero).
class RunError : public Error {
public:
    using Error::Error;
};

// The backend cannot lower a node, or the native compiler rejected the source.
class EmitError : public Error {
public:
    using Error::Error;
};

class CompileError : public Error {
public:
    CompileError(const std::string& what, std::string diagnostics)
        : Error(what), diagnostics_(std::move(diagnostics)) {}
    const std::string& diagnostics() const noexcept { return diagnostics_; }

private:
    std::string diagnostics_;
};

// Missing toolchain, unreadable files and similar problems outside the program.
class EnvironmentError : public Error {
public:
    using Error::Error;
};

// A pipeline description failed validation; `field` names the offending entry.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& msg)
        : Error(field + ": " + msg), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Broken internal invariant (cycles, dangling ids). Never expected in practice.
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace unistage
