#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>

namespace wss {

// Every failure the library reports derives from Error. The category decides
// the process exit code in the command-line driver.
enum class ErrorKind {
    Usage = 1,     // bad parameters or flags
    Data = 2,      // malformed input, dimension mismatch
    Numeric = 3,   // degenerate statistics, domain errors
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct ParameterError : Error {
    explicit ParameterError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

struct PreconditionError : Error {
    explicit PreconditionError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct DegenerateError : Error {
    explicit DegenerateError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Non-fatal diagnostics. Defaults to stderr; tests swap the sink to capture.
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
    static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}

inline void warn(const std::string& msg) {
    if (warning_sink()) warning_sink()(msg);
}

// RAII swap of the warning sink.
class ScopedWarningSink {
public:
    explicit ScopedWarningSink(WarningSink sink) : saved_(std::exchange(warning_sink(), std::move(sink))) {}
    ~ScopedWarningSink() { warning_sink() = std::move(saved_); }
    ScopedWarningSink(const ScopedWarningSink&) = delete;
    ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

private:
    WarningSink saved_;
};

}  // namespace wss
