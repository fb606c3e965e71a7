#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rpgssm/errors.hpp"
#include "rpgssm/sequences.hpp"

// RPGT binary arrays:
//   "RPGT" | u16 version = 1 | u8 dtype (0 = f64, 1 = f32) | u8 reserved = 0
//   | u32 ndim | ndim x u64 dims | row-major payload
// All integers and floats little-endian regardless of host.

namespace rpgssm::tensor_file {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<double> values;  // row-major
    DType dtype = DType::f64;

    std::uint64_t element_count() const;
};

/// Throws IoError on a stream failure.
void write(std::ostream& out, const Tensor& t);
/// Throws IoError on a malformed or truncated stream.
Tensor read(std::istream& in);

void write_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_file(const std::filesystem::path& path);

Tensor from_matrix(const Matrix& m, DType dtype = DType::f64);
Tensor from_sequences(const SequenceArray& s, DType dtype = DType::f64);
/// Throws ShapeMismatch unless the tensor has 2 (resp. 3) dimensions.
Matrix to_matrix(const Tensor& t);
SequenceArray to_sequences(const Tensor& t);

}  // namespace rpgssm::tensor_file
