#include "kdl/error.hpp"

namespace kdl {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::kShapeMismatch: return "ShapeMismatch";
        case ErrorCode::kUnsupportedAttr: return "UnsupportedAttr";
        case ErrorCode::kNotScalar: return "NotScalar";
        case ErrorCode::kEmptyTape: return "EmptyTape";
        case ErrorCode::kMissingGrad: return "MissingGrad";
        case ErrorCode::kNotRgb: return "NotRGB";
        case ErrorCode::kNotGrayscale: return "NotGrayscale";
        case ErrorCode::kDimMismatch: return "DimMismatch";
        case ErrorCode::kBadDims: return "BadDims";
        case ErrorCode::kParseError: return "ParseError";
        case ErrorCode::kNonContiguousClasses: return "NonContiguousClasses";
        case ErrorCode::kSpecimenSplitLeak: return "SpecimenSplitLeak";
        case ErrorCode::kTooFewSpecimens: return "TooFewSpecimens";
        case ErrorCode::kImageLoadError: return "ImageLoadError";
        case ErrorCode::kIoError: return "IoError";
        case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::kDiverged: return "Diverged";
        case ErrorCode::kEmptySplit: return "EmptySplit";
        case ErrorCode::kClassOutOfRange: return "ClassOutOfRange";
        case ErrorCode::kNoConvLayer: return "NoConvLayer";
        case ErrorCode::kBadConfig: return "BadConfig";
    }
    return "Unknown";
}

}  // namespace kdl
