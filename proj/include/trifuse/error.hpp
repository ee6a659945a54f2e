#pragma once

#include <stdexcept>
#include <string>

namespace trifuse {

// Exit codes reported by the CLI. Library errors carry the code they map to.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    config = 2,
    data = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

// Shape mismatches surface as numeric failures; messages name both shapes.
class DimensionError : public NumericError {
public:
    explicit DimensionError(const std::string& what) : NumericError(what) {}
};

}  // namespace trifuse
