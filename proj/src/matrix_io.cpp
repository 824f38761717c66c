#include "mcbp/matrix_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mcbp/error.hpp"

namespace mcbp {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) fail(ErrorKind::kCorruptStream, "truncated matrix header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void write_header(std::ostream& out, std::size_t rows, std::size_t cols, DType dtype) {
  require(rows <= UINT32_MAX && cols <= UINT32_MAX, "matrix too large for raw format");
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  out.put(static_cast<char>(dtype));
}

}  // namespace

IntMatrix RawMatrix::as_int() const {
  if (dtype != DType::kInt8) fail(ErrorKind::kInvalidArgument, "expected an int8 matrix, got float32");
  IntMatrix out(values.rows(), values.cols());
  for (std::size_t i = 0; i < values.size(); ++i) out.data()[i] = static_cast<std::int32_t>(values.data()[i]);
  return out;
}

void write_int8_matrix(std::ostream& out, const IntMatrix& m) {
  write_header(out, m.rows(), m.cols(), DType::kInt8);
  std::vector<char> payload(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::int32_t v = m.data()[i];
    if (v < -128 || v > 127) fail(ErrorKind::kOutOfRange, "value " + std::to_string(v) + " does not fit int8");
    payload[i] = static_cast<char>(static_cast<std::int8_t>(v));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) fail(ErrorKind::kIo, "write failed");
}

void write_float32_matrix(std::ostream& out, const RealMatrix& m) {
  static_assert(std::endian::native == std::endian::little, "raw format writer assumes a little-endian host");
  write_header(out, m.rows(), m.cols(), DType::kFloat32);
  std::vector<float> payload(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) payload[i] = static_cast<float>(m.data()[i]);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
  if (!out) fail(ErrorKind::kIo, "write failed");
}

RawMatrix read_raw_matrix(std::istream& in) {
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  const int tag = in.get();
  if (tag == std::char_traits<char>::eof()) fail(ErrorKind::kCorruptStream, "truncated matrix header");
  if (tag != 0 && tag != 1) fail(ErrorKind::kUnsupportedFormat, "unknown dtype tag " + std::to_string(tag));
  RawMatrix raw;
  raw.dtype = static_cast<DType>(tag);
  raw.values = RealMatrix(rows, cols);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (raw.dtype == DType::kInt8) {
    std::vector<char> payload(n);
    if (!in.read(payload.data(), static_cast<std::streamsize>(n))) fail(ErrorKind::kCorruptStream, "truncated payload");
    for (std::size_t i = 0; i < n; ++i) raw.values.data()[i] = static_cast<std::int8_t>(payload[i]);
  } else {
    std::vector<float> payload(n);
    if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * 4)))
      fail(ErrorKind::kCorruptStream, "truncated payload");
    for (std::size_t i = 0; i < n; ++i) raw.values.data()[i] = payload[i];
  }
  return raw;
}

void save_int8_matrix(const std::filesystem::path& path, const IntMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_int8_matrix(out, m);
}

void save_float32_matrix(const std::filesystem::path& path, const RealMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_float32_matrix(out, m);
}

RawMatrix load_raw_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return read_raw_matrix(in);
}

}  // namespace mcbp
