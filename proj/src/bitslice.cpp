#include "mcbp/bitslice.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <string>

#include "mcbp/error.hpp"
#include "mcbp/rng.hpp"

namespace mcbp {

std::size_t BitMatrix::count_ones() const noexcept {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

SignMagnitudeTensor::SignMagnitudeTensor(std::size_t rows, std::size_t cols, int bit_width)
    : rows_(rows), cols_(cols), bit_width_(bit_width) {
  require(bit_width >= 2 && bit_width <= 16, "bit width must be in [2, 16], got " + std::to_string(bit_width));
  planes_.assign(static_cast<std::size_t>(bit_width), BitMatrix(rows, cols));
}

std::int32_t SignMagnitudeTensor::magnitude(std::size_t r, std::size_t c) const noexcept {
  std::int32_t mag = 0;
  for (int b = 0; b < bit_width_ - 1; ++b)
    mag |= static_cast<std::int32_t>(planes_[static_cast<std::size_t>(b)].get(r, c)) << b;
  return mag;
}

void SignMagnitudeTensor::set_value(std::size_t r, std::size_t c, std::int32_t v) noexcept {
  const std::int32_t mag = v < 0 ? -v : v;
  for (int b = 0; b < bit_width_ - 1; ++b) planes_[static_cast<std::size_t>(b)].set(r, c, (mag >> b) & 1);
  planes_.back().set(r, c, v < 0);
}

void SignMagnitudeTensor::append_row(std::span<const std::int32_t> values) {
  require(values.size() == cols_, "append_row: expected " + std::to_string(cols_) + " values");
  for (std::int32_t v : values) {
    if (std::abs(v) > max_magnitude()) fail(ErrorKind::kOutOfRange, "append_row: value out of range");
  }
  for (auto& p : planes_) p.append_zero_row();
  ++rows_;
  for (std::size_t c = 0; c < cols_; ++c) set_value(rows_ - 1, c, values[c]);
}

SignMagnitudeTensor to_sign_magnitude(const IntMatrix& m, int bit_width) {
  require(bit_width >= 2 && bit_width <= 16, "bit width must be in [2, 16]");
  require(m.rows() > 0 && m.cols() > 0, "to_sign_magnitude: matrix has a zero dimension");
  const std::int32_t limit = std::int32_t{1} << (bit_width - 1);
  SignMagnitudeTensor t(m.rows(), m.cols(), bit_width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::int32_t v = m(r, c);
      if (v > limit || v < -limit) {
        fail(ErrorKind::kOutOfRange, "value " + std::to_string(v) + " at (" + std::to_string(r) + ", " +
                                         std::to_string(c) + ") does not fit " + std::to_string(bit_width) +
                                         "-bit sign-magnitude");
      }
      // +2^(k-1) is also unrepresentable; both ends clamp symmetrically.
      v = std::clamp(v, -(limit - 1), limit - 1);
      t.set_value(r, c, v);
    }
  }
  return t;
}

IntMatrix from_sign_magnitude(const SignMagnitudeTensor& t) {
  IntMatrix out(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(r, c) = t.value(r, c);
  return out;
}

std::size_t zero_group_count(const BitMatrix& plane, int group_size) {
  require(group_size >= 1 && group_size <= 16, "group size must be in [1, 16]");
  const auto m = static_cast<std::size_t>(group_size);
  require(plane.rows() % m == 0, "rows (" + std::to_string(plane.rows()) + ") not divisible by m = " +
                                     std::to_string(group_size));
  std::size_t nonzero = 0;
  const std::size_t wpr = plane.words_per_row();
  for (std::size_t s = 0; s < plane.rows(); s += m) {
    for (std::size_t w = 0; w < wpr; ++w) {
      std::uint64_t any = 0;
      for (std::size_t r = 0; r < m; ++r) any |= plane.row_words(s + r)[w];
      nonzero += static_cast<std::size_t>(std::popcount(any));
    }
  }
  return plane.rows() / m * plane.cols() - nonzero;
}

double all_zero_group_rate(const BitMatrix& plane, int group_size) {
  const std::size_t zeros = zero_group_count(plane, group_size);
  const std::size_t groups = plane.rows() / static_cast<std::size_t>(group_size) * plane.cols();
  return groups == 0 ? 1.0 : static_cast<double>(zeros) / static_cast<double>(groups);
}

SparsityReport sparsity_stats(const SignMagnitudeTensor& t, int group_size) {
  require(group_size >= 1 && group_size <= 16, "group size must be in [1, 16]");
  require(t.rows() % static_cast<std::size_t>(group_size) == 0,
          "rows (" + std::to_string(t.rows()) + ") not divisible by m = " + std::to_string(group_size));
  SparsityReport rep;
  rep.group_size = group_size;
  const double cells = static_cast<double>(t.rows() * t.cols());
  for (int b = 1; b <= t.bit_width(); ++b) {
    const BitMatrix& p = t.plane(b);
    rep.per_plane_sr.push_back(1.0 - static_cast<double>(p.count_ones()) / cells);
    rep.all_zero_column_rate.push_back(all_zero_group_rate(p, group_size));
  }
  double sum = 0.0;
  for (int b = 1; b < t.bit_width(); ++b) sum += rep.per_plane_sr[static_cast<std::size_t>(b - 1)];
  rep.avg_bit_sparsity = sum / static_cast<double>(t.magnitude_bits());

  // An element is zero iff all its magnitude bits are zero.
  std::size_t nonzero = 0;
  const std::size_t wpr = t.plane(1).words_per_row();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t w = 0; w < wpr; ++w) {
      std::uint64_t any = 0;
      for (int b = 1; b < t.bit_width(); ++b) any |= t.plane(b).row_words(r)[w];
      nonzero += static_cast<std::size_t>(std::popcount(any));
    }
  }
  rep.value_sparsity = 1.0 - static_cast<double>(nonzero) / cells;
  return rep;
}

void to_json(nlohmann::json& j, const SparsityReport& report) {
  j = nlohmann::json{{"m", report.group_size},
                     {"per_plane_sr", report.per_plane_sr},
                     {"avg_bit_sparsity", report.avg_bit_sparsity},
                     {"value_sparsity", report.value_sparsity},
                     {"all_zero_column_rate", report.all_zero_column_rate}};
}

std::pair<SignMagnitudeTensor, SignMagnitudeTensor> split_signed(const SignMagnitudeTensor& t) {
  SignMagnitudeTensor pos(t.rows(), t.cols(), t.bit_width());
  SignMagnitudeTensor neg(t.rows(), t.cols(), t.bit_width());
  const std::size_t wpr = t.plane(1).words_per_row();
  // Word-level masking: P = mag & ~sign, N = mag & sign.
  for (int b = 1; b < t.bit_width(); ++b) {
    const BitMatrix& src = t.plane(b);
    BitMatrix& p = pos.plane(b);
    BitMatrix& n = neg.plane(b);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      const auto s = src.row_words(r);
      const auto sg = t.sign_plane().row_words(r);
      const auto pw = p.row_words(r);
      const auto nw = n.row_words(r);
      for (std::size_t w = 0; w < wpr; ++w) {
        pw[w] = s[w] & ~sg[w];
        nw[w] = s[w] & sg[w];
      }
    }
  }
  return {std::move(pos), std::move(neg)};
}

SignMagnitudeTensor pad_rows(const SignMagnitudeTensor& t, std::size_t multiple) {
  require(multiple >= 1, "pad multiple must be positive");
  const std::size_t padded = (t.rows() + multiple - 1) / multiple * multiple;
  if (padded == t.rows()) return t;
  SignMagnitudeTensor out(t);
  std::vector<std::int32_t> zeros(t.cols(), 0);
  while (out.rows() < padded) out.append_row(zeros);
  return out;
}

RealMatrix gen_gaussian_weights(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
  require(rows > 0 && cols > 0, "gen_gaussian_weights: zero dimension");
  require(stddev > 0.0 && std::isfinite(stddev), "gen_gaussian_weights: std must be positive");
  Rng rng(seed);
  RealMatrix w(rows, cols);
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return w;
}

void slab_keys(const BitMatrix& plane, std::size_t row_start, int group_size, std::size_t col_begin,
               std::size_t col_end, std::span<std::uint16_t> keys) {
  std::fill(keys.begin(), keys.end(), std::uint16_t{0});
  const std::size_t w_begin = col_begin / 64;
  const std::size_t w_end = (col_end + 63) / 64;
  for (int r = 0; r < group_size; ++r) {
    const std::size_t row = row_start + static_cast<std::size_t>(r);
    if (row >= plane.rows()) break;
    const auto words = plane.row_words(row);
    const auto bit = static_cast<std::uint16_t>(1u << (group_size - 1 - r));
    for (std::size_t w = w_begin; w < w_end; ++w) {
      std::uint64_t bits = words[w];
      if (w == w_begin && col_begin % 64) bits &= ~std::uint64_t{0} << (col_begin % 64);
      if (w == w_end - 1 && col_end % 64) bits &= (std::uint64_t{1} << (col_end % 64)) - 1;
      for (; bits; bits &= bits - 1) {
        const std::size_t c = w * 64 + static_cast<std::size_t>(std::countr_zero(bits));
        keys[c - col_begin] |= bit;
      }
    }
  }
}

}  // namespace mcbp
