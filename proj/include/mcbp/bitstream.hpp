#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mcbp/error.hpp"

namespace mcbp {

/// Bits are packed MSB-first: the first bit written lands in bit 7 of byte 0.
class BitWriter {
 public:
  void put(bool bit) {
    if (bits_ % 8 == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
    ++bits_;
  }
  /// Writes the low `count` bits of v, most significant first.
  void put_bits(std::uint32_t v, int count) {
    for (int i = count - 1; i >= 0; --i) put((v >> i) & 1u);
  }

  std::uint64_t bit_length() const noexcept { return bits_; }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
};

/// Reads at most bit_length bits; reading past them is a corrupt-stream error.
class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_length) : bytes_(bytes), limit_(bit_length) {
    if ((bit_length + 7) / 8 > bytes.size()) fail(ErrorKind::kCorruptStream, "bit length exceeds buffer");
  }

  bool get() {
    if (pos_ >= limit_) fail(ErrorKind::kCorruptStream, "stream truncated at bit " + std::to_string(pos_));
    const bool bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return bit;
  }
  std::uint32_t get_bits(int count) {
    std::uint32_t v = 0;
    for (int i = 0; i < count; ++i) v = (v << 1) | static_cast<std::uint32_t>(get());
    return v;
  }

  std::uint64_t position() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return limit_ - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t limit_;
  std::uint64_t pos_ = 0;
};

}  // namespace mcbp
