#pragma once

// "SSNT" container: magic "SSNT", version 0x01, dtype byte (0x00 float32,
// 0x01 uint8), rank byte, rank little-endian u32 dims, row-major payload
// (float32 little-endian).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "ssnet/tensor.hpp"

namespace ssnet {

enum class DType : std::uint8_t { float32 = 0x00, uint8 = 0x01 };

struct ByteTensor {
    Shape shape;
    std::vector<std::uint8_t> data;

    friend bool operator==(const ByteTensor&, const ByteTensor&) = default;
};

void write_container(std::ostream& os, const Tensor& t);
void write_container(std::ostream& os, const ByteTensor& t);
void write_container(const std::filesystem::path& path, const Tensor& t);
void write_container(const std::filesystem::path& path, const ByteTensor& t);

/// Peeks the dtype of a stored container.
DType container_dtype(const std::filesystem::path& path);

Tensor read_float_container(std::istream& is);
ByteTensor read_byte_container(std::istream& is);
Tensor read_float_container(const std::filesystem::path& path);
ByteTensor read_byte_container(const std::filesystem::path& path);

} // namespace ssnet
