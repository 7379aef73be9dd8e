#pragma once

#include <stdexcept>
#include <string>

namespace lbs {

enum class ErrorKind {
    Usage,     // bad flags or configuration keys
    Contract,  // shape / dimension violation
    Graph,     // tape integrity
    Numeric,   // NaN / Inf or non-PD covariance
    Format,    // malformed files
    Data,      // well-formed but unusable data (ordering, too short)
};

/// Base error. what() renders as "<module>: <message>".
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& message)
        : std::runtime_error(module + ": " + message), kind_(kind), module_(std::move(module)), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& module() const noexcept { return module_; }
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string module_;
    std::string message_;
};

#define LBS_DEFINE_ERROR(Name, Kind)                                          \
    class Name : public Error {                                               \
    public:                                                                   \
        Name(std::string module, const std::string& message)                  \
            : Error(ErrorKind::Kind, std::move(module), message) {}           \
    };

LBS_DEFINE_ERROR(UsageError, Usage)
LBS_DEFINE_ERROR(ContractError, Contract)
LBS_DEFINE_ERROR(GraphError, Graph)
LBS_DEFINE_ERROR(NumericError, Numeric)
LBS_DEFINE_ERROR(FormatError, Format)
LBS_DEFINE_ERROR(DataError, Data)

#undef LBS_DEFINE_ERROR

/// Process exit code for an error kind: 1 usage, 2 data/format, 3 numeric.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return 1;
        case ErrorKind::Numeric: return 3;
        default: return 2;
    }
}

}  // namespace lbs
