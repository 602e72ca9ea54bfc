#pragma once

#include <stdexcept>
#include <string>

namespace pathgt {

enum class ErrorKind {
    invalid_input,   // malformed data files, dimension mismatches
    invalid_config,  // infeasible or contradictory settings
    runtime,         // numerical failure during a run
};

/// Base exception for everything thrown by the library. The CLI maps
/// `invalid_config` to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error input_error(const std::string& what) { return {ErrorKind::invalid_input, what}; }
inline Error config_error(const std::string& what) { return {ErrorKind::invalid_config, what}; }
inline Error runtime_error(const std::string& what) { return {ErrorKind::runtime, what}; }

} // namespace pathgt
