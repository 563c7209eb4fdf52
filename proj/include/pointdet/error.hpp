#pragma once

#include <stdexcept>
#include <string>

namespace pointdet {

// Contract violations (bad arguments, malformed files, shape mismatches).
// The CLI maps these to exit code 2; everything else to 3.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

[[noreturn]] inline void fail_validation(const std::string& msg) {
    throw ValidationError(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail_validation(msg);
}

} // namespace pointdet
