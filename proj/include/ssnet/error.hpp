#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ssnet {

enum class ErrorCode {
    shape_mismatch,
    non_finite_value,
    not_scalar_loss,
    not_a_distribution,
    zero_vector,
    indivisible_spatial_dims,
    degenerate_split,
    non_square_input,
    empty_mask,
    patch_larger_than_image,
    io_failure,
    bad_config,
    invalid_argument,
};

std::string_view error_code_name(ErrorCode code);

/// Exception carrying a machine-readable code. what() is "<CodeName>: <detail>".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace ssnet
