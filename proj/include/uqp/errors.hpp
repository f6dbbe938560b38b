#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uqp {

enum class ErrorKind {
    NotPositiveDefinite,
    NotSymmetric,
    DimensionMismatch,
    InvalidShape,
    InvalidPartition,
    IndexOutOfRange,
    TooLargeForDirect,
    IoError,
    ChecksumMismatch,
    InvalidStrategyConfig,
    NotHdcAdmissible,
    SingularBlockGram,
    RankDeficient,
    NonFinite,
    InvalidAssignment,
    RouteMismatch,
};

constexpr std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
        case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorKind::NotSymmetric: return "NotSymmetric";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::InvalidShape: return "InvalidShape";
        case ErrorKind::InvalidPartition: return "InvalidPartition";
        case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorKind::TooLargeForDirect: return "TooLargeForDirect";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorKind::InvalidStrategyConfig: return "InvalidStrategyConfig";
        case ErrorKind::NotHdcAdmissible: return "NotHdcAdmissible";
        case ErrorKind::SingularBlockGram: return "SingularBlockGram";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::InvalidAssignment: return "InvalidAssignment";
        case ErrorKind::RouteMismatch: return "RouteMismatch";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace uqp
