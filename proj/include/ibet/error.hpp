#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ibet {

enum class ErrorCode {
    invalid_randomization,
    bet_range,
    protocol_violation,
    already_revealed,
    already_rejected,
    exhausted,
    singular_fit,
    degenerate_design,
    config,
    invalid_pair,
    unsupported,
    schema,
    io,
    not_found,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries a stable code so callers
/// (CLI exit codes, HTTP status mapping, tests) can branch without parsing
/// messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace ibet
