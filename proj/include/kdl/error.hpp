#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdl {

enum class ErrorCode {
    kShapeMismatch,
    kUnsupportedAttr,
    kNotScalar,
    kEmptyTape,
    kMissingGrad,
    kNotRgb,
    kNotGrayscale,
    kDimMismatch,
    kBadDims,
    kParseError,
    kNonContiguousClasses,
    kSpecimenSplitLeak,
    kTooFewSpecimens,
    kImageLoadError,
    kIoError,
    kLabelOutOfRange,
    kDiverged,
    kEmptySplit,
    kClassOutOfRange,
    kNoConvLayer,
    kBadConfig,
};

std::string_view error_code_name(ErrorCode code) noexcept;

// All library failures are reported through this type; code() identifies the
// failure kind so callers (CLI exit codes, tests) do not parse messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace kdl
