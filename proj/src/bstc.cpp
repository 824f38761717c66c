#include "mcbp/bstc.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>

#include "mcbp/bitstream.hpp"
#include "mcbp/error.hpp"

namespace mcbp {
namespace {

constexpr std::uint8_t kMagic[4] = {0x42, 0x53, 0x54, 0x43};  // "BSTC"
constexpr std::size_t kFixedHeaderBytes = 32;
constexpr std::size_t kEntryBytes = 16;

void check_codec_group(int m) { require(m >= 1 && m <= 16, "codec group size must be in [1, 16]"); }

std::size_t segment_count(std::size_t cols, std::size_t segment_len) { return (cols + segment_len - 1) / segment_len; }

BitStream encode_segment(const BitMatrix& plane, int m, std::size_t col_begin, std::size_t col_end, bool compressed) {
  BitWriter writer;
  std::vector<std::uint16_t> keys(col_end - col_begin);
  for (std::size_t s = 0; s < plane.rows(); s += static_cast<std::size_t>(m)) {
    slab_keys(plane, s, m, col_begin, col_end, keys);
    for (std::uint16_t key : keys) {
      if (!compressed) {
        writer.put_bits(key, m);
      } else if (key == 0) {
        writer.put(false);
      } else {
        writer.put(true);
        writer.put_bits(key, m);
      }
    }
  }
  BitStream out;
  out.bit_length = writer.bit_length();
  out.bytes = std::move(writer).take();
  return out;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in[at + i]) << (8 * i));
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::uint64_t EncodedPlane::bit_length() const noexcept {
  std::uint64_t n = 0;
  for (const auto& s : segments) n += s.bit_length;
  return n;
}

EncodedPlane encode_plane(const BitMatrix& plane, int m, std::size_t segment_len, bool compressed) {
  check_codec_group(m);
  require(segment_len > 0, "segment length must be positive");
  require(plane.rows() % static_cast<std::size_t>(m) == 0,
          "rows (" + std::to_string(plane.rows()) + ") not a multiple of m = " + std::to_string(m));
  EncodedPlane enc;
  enc.compressed = compressed;
  enc.m = m;
  enc.segment_len = segment_len;
  for (std::size_t c = 0; c < plane.cols(); c += segment_len)
    enc.segments.push_back(encode_segment(plane, m, c, std::min(plane.cols(), c + segment_len), compressed));
  return enc;
}

void decode_segment(std::span<const std::uint8_t> bytes, std::uint64_t bit_length, bool compressed, int m,
                    std::size_t col_begin, std::size_t width, BitMatrix& out) {
  check_codec_group(m);
  BitReader reader(bytes, bit_length);
  for (std::size_t s = 0; s < out.rows(); s += static_cast<std::size_t>(m)) {
    for (std::size_t c = 0; c < width; ++c) {
      std::uint32_t key = 0;
      if (!compressed || reader.get()) key = reader.get_bits(m);
      for (; key; key &= key - 1) {
        const int bit = std::countr_zero(key);
        out.set(s + static_cast<std::size_t>(m - 1 - bit), col_begin + c, true);
      }
    }
  }
  if (reader.remaining() != 0)
    fail(ErrorKind::kCorruptStream, std::to_string(reader.remaining()) + " trailing bits after the last symbol");
}

BitMatrix decode_plane(const EncodedPlane& enc, std::size_t rows, std::size_t cols, int m) {
  check_codec_group(m);
  require(enc.m == m, "decode_plane: group size does not match the encoding");
  require(rows % static_cast<std::size_t>(m) == 0, "rows not a multiple of m");
  require(enc.segment_len > 0, "segment length must be positive");
  if (enc.segments.size() != segment_count(cols, enc.segment_len))
    fail(ErrorKind::kCorruptStream, "segment count does not match the plane width");
  BitMatrix out(rows, cols);
  for (std::size_t i = 0; i < enc.segments.size(); ++i) {
    const std::size_t col_begin = i * enc.segment_len;
    const std::size_t width = std::min(cols, col_begin + enc.segment_len) - col_begin;
    decode_segment(enc.segments[i].bytes, enc.segments[i].bit_length, enc.compressed, m, col_begin, width, out);
  }
  return out;
}

std::uint64_t encoded_bit_length(const BitMatrix& plane, int m, bool compressed) {
  const std::uint64_t groups = plane.rows() / static_cast<std::size_t>(m) * plane.cols();
  if (!compressed) return groups * static_cast<std::uint64_t>(m);
  const std::uint64_t zero_groups = zero_group_count(plane, m);
  return groups + (groups - zero_groups) * static_cast<std::uint64_t>(m);
}

std::vector<bool> compression_policy(const SparsityReport& report, double threshold) {
  require(threshold >= 0.0 && threshold < 1.0, "threshold must be in [0, 1)");
  std::vector<bool> flags;
  flags.reserve(report.per_plane_sr.size());
  for (double sr : report.per_plane_sr) flags.push_back(sr > threshold);
  return flags;
}

std::uint64_t ContainerHeader::payload_bits() const noexcept {
  std::uint64_t n = 0;
  for (const auto& e : table) n += e.bit_length;
  return n;
}

std::uint64_t ContainerHeader::payload_bytes() const noexcept {
  std::uint64_t n = 0;
  for (const auto& e : table) n += (e.bit_length + 7) / 8;
  return n;
}

void to_json(nlohmann::json& j, const ContainerHeader& h) {
  std::vector<int> compressed;
  for (int b = 1; b <= h.bit_width; ++b)
    if (h.plane_compressed(b)) compressed.push_back(b);
  j = nlohmann::json{{"version", h.version},         {"rows", h.rows},
                     {"cols", h.cols},               {"bit_width", h.bit_width},
                     {"m", h.m},                     {"segment_len", h.segment_len},
                     {"compressed_planes", compressed}, {"num_segments", h.num_segments},
                     {"payload_bits", h.payload_bits()}};
}

std::vector<std::uint8_t> encode_container(const SignMagnitudeTensor& t, const std::vector<bool>& flags, int m,
                                           std::size_t segment_len) {
  check_codec_group(m);
  require(flags.size() == static_cast<std::size_t>(t.bit_width()), "one compression flag per plane is required");
  require(segment_len > 0 && segment_len <= UINT32_MAX, "segment length out of range");
  require(t.rows() > 0 && t.cols() > 0 && t.rows() <= UINT32_MAX && t.cols() <= UINT32_MAX,
          "tensor dimensions out of range for the container");
  require(t.rows() % static_cast<std::size_t>(m) == 0,
          "rows (" + std::to_string(t.rows()) + ") not a multiple of m = " + std::to_string(m));

  const std::size_t nseg = segment_count(t.cols(), segment_len);
  std::vector<std::uint8_t> payload;
  std::vector<SegmentEntry> table;
  std::uint32_t mask = 0;
  for (int b = 1; b <= t.bit_width(); ++b) {
    const bool compressed = flags[static_cast<std::size_t>(b - 1)];
    if (compressed) mask |= 1u << (b - 1);
    const EncodedPlane enc = encode_plane(t.plane(b), m, segment_len, compressed);
    for (const BitStream& s : enc.segments) {
      table.push_back({payload.size(), s.bit_length});
      payload.insert(payload.end(), s.bytes.begin(), s.bytes.end());
    }
  }

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kContainerVersion);
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
  out.push_back(static_cast<std::uint8_t>(t.bit_width()));
  out.push_back(static_cast<std::uint8_t>(m));
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(segment_len));
  put_le<std::uint32_t>(out, mask);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nseg));
  for (const auto& e : table) {
    put_le<std::uint64_t>(out, e.byte_offset);
    put_le<std::uint64_t>(out, e.bit_length);
  }
  put_le<std::uint32_t>(out, crc32_of(out));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

void write_container(const SignMagnitudeTensor& t, const std::vector<bool>& flags, int m, std::size_t segment_len,
                     std::ostream& sink) {
  const auto bytes = encode_container(t, flags, m, segment_len);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) fail(ErrorKind::kIo, "container write failed");
}

ContainerHeader parse_container_header(std::span<const std::uint8_t> file) {
  if (file.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), file.begin()))
    fail(ErrorKind::kUnsupportedFormat, "missing BSTC magic");
  if (file.size() < kFixedHeaderBytes) fail(ErrorKind::kCorruptContainer, "truncated header");
  ContainerHeader h;
  h.version = get_le<std::uint16_t>(file, 4);
  if (h.version != kContainerVersion)
    fail(ErrorKind::kUnsupportedFormat, "container version " + std::to_string(h.version) + " is not supported");
  h.rows = get_le<std::uint32_t>(file, 8);
  h.cols = get_le<std::uint32_t>(file, 12);
  h.bit_width = file[16];
  h.m = file[17];
  h.segment_len = get_le<std::uint32_t>(file, 20);
  h.compressed_mask = get_le<std::uint32_t>(file, 24);
  h.num_segments = get_le<std::uint32_t>(file, 28);
  if (h.bit_width < 2 || h.bit_width > 16 || h.m < 1 || h.m > 16 || h.segment_len == 0 || h.rows == 0 ||
      h.cols == 0 || h.rows % static_cast<std::uint32_t>(h.m) != 0 ||
      h.num_segments != segment_count(h.cols, h.segment_len))
    fail(ErrorKind::kCorruptContainer, "inconsistent header fields");

  const std::size_t entries = static_cast<std::size_t>(h.bit_width) * h.num_segments;
  const std::size_t table_end = kFixedHeaderBytes + entries * kEntryBytes;
  if (file.size() < table_end + 4) fail(ErrorKind::kCorruptContainer, "truncated offset table");
  if (get_le<std::uint32_t>(file, table_end) != crc32_of(file.first(table_end)))
    fail(ErrorKind::kCorruptContainer, "header CRC mismatch");
  h.payload_offset = table_end + 4;
  const std::uint64_t payload_size = file.size() - h.payload_offset;

  h.table.resize(entries);
  for (std::size_t i = 0; i < entries; ++i) {
    SegmentEntry& e = h.table[i];
    e.byte_offset = get_le<std::uint64_t>(file, kFixedHeaderBytes + i * kEntryBytes);
    e.bit_length = get_le<std::uint64_t>(file, kFixedHeaderBytes + i * kEntryBytes + 8);
    if (e.byte_offset > payload_size || (e.bit_length + 7) / 8 > payload_size - e.byte_offset)
      fail(ErrorKind::kCorruptContainer, "segment " + std::to_string(i) + " lies outside the payload");
    if (i % h.num_segments != 0 && e.byte_offset <= h.table[i - 1].byte_offset)
      fail(ErrorKind::kCorruptContainer, "segment offsets are not increasing");
  }
  return h;
}

BitMatrix decode_container_segment(std::span<const std::uint8_t> file, const ContainerHeader& header, int plane,
                                   std::size_t segment) {
  require(plane >= 1 && plane <= header.bit_width, "plane index out of range");
  require(segment < header.num_segments, "segment index out of range");
  const SegmentEntry& e = header.entry(plane, segment);
  const std::size_t col_begin = segment * header.segment_len;
  const std::size_t width = std::min<std::size_t>(header.cols, col_begin + header.segment_len) - col_begin;
  BitMatrix out(header.rows, width);
  const auto span = file.subspan(header.payload_offset + e.byte_offset, (e.bit_length + 7) / 8);
  decode_segment(span, e.bit_length, header.plane_compressed(plane), header.m, 0, width, out);
  return out;
}

Container parse_container(std::span<const std::uint8_t> file) {
  Container c;
  c.header = parse_container_header(file);
  const ContainerHeader& h = c.header;
  c.tensor = SignMagnitudeTensor(h.rows, h.cols, h.bit_width);
  for (int b = 1; b <= h.bit_width; ++b) {
    BitMatrix& plane = c.tensor.plane(b);
    for (std::size_t s = 0; s < h.num_segments; ++s) {
      const SegmentEntry& e = h.entry(b, s);
      const std::size_t col_begin = s * h.segment_len;
      const std::size_t width = std::min<std::size_t>(h.cols, col_begin + h.segment_len) - col_begin;
      const auto span = file.subspan(h.payload_offset + e.byte_offset, (e.bit_length + 7) / 8);
      decode_segment(span, e.bit_length, h.plane_compressed(b), h.m, col_begin, width, plane);
    }
  }
  return c;
}

Container read_container(std::istream& source) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  return parse_container(bytes);
}

CompressionRatio compression_ratio(const ContainerHeader& header) {
  CompressionRatio cr;
  const double plane_bits = static_cast<double>(header.rows) * header.cols;
  std::uint64_t total = 0;
  for (int b = 1; b <= header.bit_width; ++b) {
    std::uint64_t bits = 0;
    for (std::size_t s = 0; s < header.num_segments; ++s) bits += header.entry(b, s).bit_length;
    total += bits;
    cr.per_plane.push_back(plane_bits / static_cast<double>(bits));
  }
  cr.total = plane_bits * header.bit_width / static_cast<double>(total);
  return cr;
}

double model_compression_ratio(int m, double p0) {
  require(m >= 1, "m must be positive");
  require(p0 >= 0.0 && p0 <= 1.0, "p0 must be in [0, 1]");
  return static_cast<double>(m) / (p0 + (1.0 - p0) * (m + 1));
}

}  // namespace mcbp
