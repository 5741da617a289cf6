#pragma once

#include <stdexcept>
#include <string>

namespace haptoflow {

/// Invalid input: bad parameters, malformed files, failed preconditions.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Failure while a computation was running (non-finite state, singular solve).
class RuntimeFailure : public std::runtime_error {
public:
    explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace haptoflow
