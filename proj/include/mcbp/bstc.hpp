#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "json.hpp"
#include "mcbp/bitslice.hpp"

namespace mcbp {

// Two-state bit-slice coding. A plane is cut into m-row slabs; each column of
// a slab is one m-bit group, emitted as a single '0' when all zero and as
// '1' followed by the m bits (row 0 first) otherwise. Planes that are not
// compressed store the raw m bits per group in the same order.
//
// Columns are split into segments of segment_len. Within a segment the
// symbols run slab by slab (top to bottom), column by column (left to right).
// Every segment is an independent, byte-aligned stream.

inline constexpr std::size_t kDefaultSegmentLen = 1024;
inline constexpr double kDefaultCompressionThreshold = 0.65;

struct BitStream {
  std::vector<std::uint8_t> bytes;
  std::uint64_t bit_length = 0;
};

struct EncodedPlane {
  bool compressed = true;
  int m = 4;
  std::size_t segment_len = kDefaultSegmentLen;
  std::vector<BitStream> segments;

  std::uint64_t bit_length() const noexcept;
};

EncodedPlane encode_plane(const BitMatrix& plane, int m, std::size_t segment_len = kDefaultSegmentLen,
                          bool compressed = true);

/// Inverse of encode_plane. Every segment must be consumed exactly.
BitMatrix decode_plane(const EncodedPlane& enc, std::size_t rows, std::size_t cols, int m);

/// Decodes one segment into columns [col_begin, col_begin + width) of out.
void decode_segment(std::span<const std::uint8_t> bytes, std::uint64_t bit_length, bool compressed, int m,
                    std::size_t col_begin, std::size_t width, BitMatrix& out);

/// Symbol-count size law: groups * 1 + nonzero_groups * m when compressed.
std::uint64_t encoded_bit_length(const BitMatrix& plane, int m, bool compressed);

/// Flag per plane (index plane - 1): compress iff SR > threshold.
std::vector<bool> compression_policy(const SparsityReport& report,
                                     double threshold = kDefaultCompressionThreshold);

struct SegmentEntry {
  std::uint64_t byte_offset = 0;  // relative to the start of the payload
  std::uint64_t bit_length = 0;
};

inline constexpr std::uint16_t kContainerVersion = 1;

struct ContainerHeader {
  std::uint16_t version = kContainerVersion;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  int bit_width = 8;
  int m = 4;
  std::uint32_t segment_len = kDefaultSegmentLen;
  std::uint32_t compressed_mask = 0;  // bit (b - 1) set iff plane b is compressed
  std::uint32_t num_segments = 0;
  std::vector<SegmentEntry> table;  // plane-major: (b - 1) * num_segments + segment
  std::size_t payload_offset = 0;   // byte offset of the payload in the file

  bool plane_compressed(int b) const noexcept { return (compressed_mask >> (b - 1)) & 1u; }
  const SegmentEntry& entry(int b, std::size_t segment) const {
    return table.at(static_cast<std::size_t>(b - 1) * num_segments + segment);
  }
  std::uint64_t payload_bits() const noexcept;
  std::uint64_t payload_bytes() const noexcept;
};

void to_json(nlohmann::json& j, const ContainerHeader& h);

struct Container {
  ContainerHeader header;
  SignMagnitudeTensor tensor;
};

std::vector<std::uint8_t> encode_container(const SignMagnitudeTensor& t, const std::vector<bool>& flags, int m,
                                           std::size_t segment_len = kDefaultSegmentLen);
void write_container(const SignMagnitudeTensor& t, const std::vector<bool>& flags, int m, std::size_t segment_len,
                     std::ostream& sink);

/// Parses and validates the header and offset table only.
ContainerHeader parse_container_header(std::span<const std::uint8_t> file);
Container parse_container(std::span<const std::uint8_t> file);
Container read_container(std::istream& source);

/// Decodes a single (plane, segment) using only the header and its span.
BitMatrix decode_container_segment(std::span<const std::uint8_t> file, const ContainerHeader& header, int plane,
                                   std::size_t segment);

struct CompressionRatio {
  std::vector<double> per_plane;  // original bits / encoded bits, index plane - 1
  double total = 0.0;
};

CompressionRatio compression_ratio(const ContainerHeader& header);

/// m / (p0 + (1 - p0)(m + 1)).
double model_compression_ratio(int m, double p0);

}  // namespace mcbp
