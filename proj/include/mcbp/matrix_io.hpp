#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mcbp/matrix.hpp"

namespace mcbp {

// Raw matrix interchange file, little-endian:
//   u32 rows | u32 cols | u8 dtype | row-major payload
// dtype 0 = int8 (1 byte per element), 1 = float32 (4 bytes per element).
enum class DType : std::uint8_t { kInt8 = 0, kFloat32 = 1 };

struct RawMatrix {
  DType dtype = DType::kFloat32;
  RealMatrix values;

  /// Values as integers; throws if the file held floats.
  IntMatrix as_int() const;
};

void write_int8_matrix(std::ostream& out, const IntMatrix& m);
void write_float32_matrix(std::ostream& out, const RealMatrix& m);
RawMatrix read_raw_matrix(std::istream& in);

void save_int8_matrix(const std::filesystem::path& path, const IntMatrix& m);
void save_float32_matrix(const std::filesystem::path& path, const RealMatrix& m);
RawMatrix load_raw_matrix(const std::filesystem::path& path);

}  // namespace mcbp
