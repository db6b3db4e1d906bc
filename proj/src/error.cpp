#include "ibet/error.hpp"

namespace ibet {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::invalid_randomization: return "invalid-randomization";
        case ErrorCode::bet_range: return "bet-range";
        case ErrorCode::protocol_violation: return "protocol-violation";
        case ErrorCode::already_revealed: return "already-revealed";
        case ErrorCode::already_rejected: return "already-rejected";
        case ErrorCode::exhausted: return "exhausted";
        case ErrorCode::singular_fit: return "singular-fit";
        case ErrorCode::degenerate_design: return "degenerate-design";
        case ErrorCode::config: return "config";
        case ErrorCode::invalid_pair: return "invalid-pair";
        case ErrorCode::unsupported: return "unsupported";
        case ErrorCode::schema: return "schema";
        case ErrorCode::io: return "io";
        case ErrorCode::not_found: return "not-found";
    }
    return "unknown";
}

}  // namespace ibet
