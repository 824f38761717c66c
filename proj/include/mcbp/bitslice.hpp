#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mcbp/matrix.hpp"

namespace mcbp {

/// Dense binary matrix. Rows are packed into 64-bit words so that an m-row
/// slab is m contiguous word runs.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), words_per_row_((cols + 63) / 64), words_(rows * words_per_row_, 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }

  bool get(std::size_t r, std::size_t c) const noexcept {
    return (words_[r * words_per_row_ + c / 64] >> (c % 64)) & 1u;
  }
  void set(std::size_t r, std::size_t c, bool bit) noexcept {
    std::uint64_t& w = words_[r * words_per_row_ + c / 64];
    const std::uint64_t mask = std::uint64_t{1} << (c % 64);
    w = bit ? (w | mask) : (w & ~mask);
  }

  std::span<const std::uint64_t> row_words(std::size_t r) const noexcept {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<std::uint64_t> row_words(std::size_t r) noexcept {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }

  std::size_t count_ones() const noexcept;

  /// Appends one zero row. Existing rows are left untouched.
  void append_zero_row() { words_.resize(words_.size() + words_per_row_, 0); ++rows_; }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
};

/// k-bit sign-magnitude integer matrix held as bit planes. Planes are
/// numbered 1..k: plane 1 is the magnitude LSB, plane k-1 the magnitude MSB,
/// plane k the sign (1 = negative).
class SignMagnitudeTensor {
 public:
  SignMagnitudeTensor() = default;
  SignMagnitudeTensor(std::size_t rows, std::size_t cols, int bit_width = 8);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int bit_width() const noexcept { return bit_width_; }
  int magnitude_bits() const noexcept { return bit_width_ - 1; }
  std::int32_t max_magnitude() const noexcept { return (std::int32_t{1} << (bit_width_ - 1)) - 1; }

  const BitMatrix& plane(int b) const { return planes_.at(static_cast<std::size_t>(b - 1)); }
  BitMatrix& plane(int b) { return planes_.at(static_cast<std::size_t>(b - 1)); }
  const BitMatrix& sign_plane() const { return plane(bit_width_); }

  std::int32_t magnitude(std::size_t r, std::size_t c) const noexcept;
  bool negative(std::size_t r, std::size_t c) const noexcept { return planes_.back().get(r, c); }
  std::int32_t value(std::size_t r, std::size_t c) const noexcept {
    const std::int32_t mag = magnitude(r, c);
    return negative(r, c) ? -mag : mag;
  }
  /// Stores v exactly; |v| must not exceed max_magnitude().
  void set_value(std::size_t r, std::size_t c, std::int32_t v) noexcept;

  /// Appends a row of values (used by the bit-plane KV cache). History is
  /// never rewritten.
  void append_row(std::span<const std::int32_t> values);

  friend bool operator==(const SignMagnitudeTensor&, const SignMagnitudeTensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int bit_width_ = 8;
  std::vector<BitMatrix> planes_;
};

/// Zero-bit statistics of a tensor's bit planes. Vectors are indexed by
/// plane - 1 and cover all k planes (sign included).
struct SparsityReport {
  int group_size = 1;
  std::vector<double> per_plane_sr;
  double avg_bit_sparsity = 0.0;  // mean SR over magnitude planes only
  double value_sparsity = 0.0;
  std::vector<double> all_zero_column_rate;  // p0(m) per plane
};

void to_json(nlohmann::json& j, const SparsityReport& report);

/// Converts a signed integer matrix to sign-magnitude planes. -2^(k-1) is the
/// one out-of-range input accepted; it saturates to -(2^(k-1) - 1).
SignMagnitudeTensor to_sign_magnitude(const IntMatrix& m, int bit_width = 8);

IntMatrix from_sign_magnitude(const SignMagnitudeTensor& t);

SparsityReport sparsity_stats(const SignMagnitudeTensor& t, int group_size);

/// Fraction of m-bit column groups (m-row slabs, one column each) that are
/// all zero. Rows must be a multiple of m.
double all_zero_group_rate(const BitMatrix& plane, int group_size);
std::size_t zero_group_count(const BitMatrix& plane, int group_size);

/// Splits T into nonnegative halves with from(P) - from(N) == from(T).
std::pair<SignMagnitudeTensor, SignMagnitudeTensor> split_signed(const SignMagnitudeTensor& t);

/// Zero-pads rows up to a multiple of `multiple`.
SignMagnitudeTensor pad_rows(const SignMagnitudeTensor& t, std::size_t multiple);

RealMatrix gen_gaussian_weights(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed);

/// Key of every column in [col_begin, col_end) of the slab starting at
/// row_start: bit (m-1-r) holds plane[row_start + r, col]. Rows past the end
/// of the plane read as zero.
void slab_keys(const BitMatrix& plane, std::size_t row_start, int group_size, std::size_t col_begin,
               std::size_t col_end, std::span<std::uint16_t> keys);

}  // namespace mcbp
