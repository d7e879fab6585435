#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace toxiscope {

enum class ErrorCode {
    // store
    NoTextColumn,
    ParseError,
    NotFound,
    WrongLayout,
    BuiltinProtected,
    // classify
    BackendUnavailable,
    SchemaMismatch,
    MissingMember,
    KOutOfRange,
    LengthMismatch,
    UnknownLabel,
    UnparseableVerdict,
    // lm_gateway
    LmUnavailable,
    ContextTooLong,
    StreamInterrupted,
    LogprobsUnsupported,
    CapabilityMissing,
    InvalidResponse,
    // analyses
    EmptyConversation,
    EmptyScores,
    MissingPlaceholder,
    EmptySummary,
    ParseFailure,
    UnknownTemplate,
    MissingBinding,
    // service
    PreconditionViolation,
    ValidationError,
    QueueFull,
    AlreadyTerminal,
    Cancelled,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library. The code is stable and maps onto
/// the HTTP status returned by the service.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// 1-based source row for ParseError.
    std::optional<std::size_t> row() const noexcept { return row_; }
    Error& with_row(std::size_t row) {
        row_ = row;
        return *this;
    }

    /// Text received before a stream broke (StreamInterrupted).
    const std::string& partial() const noexcept { return partial_; }
    Error& with_partial(std::string text) {
        partial_ = std::move(text);
        return *this;
    }

private:
    ErrorCode code_;
    std::optional<std::size_t> row_;
    std::string partial_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace toxiscope
