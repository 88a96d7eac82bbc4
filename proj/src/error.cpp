#include "ssnet/error.hpp"

namespace ssnet {

std::string_view error_code_name(ErrorCode code)
{
    switch (code) {
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::non_finite_value: return "NonFiniteValue";
    case ErrorCode::not_scalar_loss: return "NotScalarLoss";
    case ErrorCode::not_a_distribution: return "NotADistribution";
    case ErrorCode::zero_vector: return "ZeroVector";
    case ErrorCode::indivisible_spatial_dims: return "IndivisibleSpatialDims";
    case ErrorCode::degenerate_split: return "DegenerateSplit";
    case ErrorCode::non_square_input: return "NonSquareInput";
    case ErrorCode::empty_mask: return "EmptyMask";
    case ErrorCode::patch_larger_than_image: return "PatchLargerThanImage";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::bad_config: return "BadConfig";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + detail), code_(code)
{
}

} // namespace ssnet
